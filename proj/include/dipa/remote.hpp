#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "dipa/errors.hpp"
#include "dipa/png_io.hpp"
#include "dipa/types.hpp"
#include "dipa/verifier.hpp"

namespace dipa {

// ---- base64 (RFC 4648, padded) ---------------------------------------------

inline std::string base64_encode(const std::vector<std::uint8_t>& in) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i + 1 == in.size()) {
    const std::uint32_t v = in[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == in.size()) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) throw ValidationError("base64: bad length");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        if (pad) throw ValidationError("base64: bad padding");
        v[k] = value(c);
        if (v[k] < 0) throw ValidationError("base64: invalid character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w & 0xff));
  }
  return out;
}

inline std::string image_to_base64_png(const ImageTensor& x) {
  return base64_encode(encode_image_png(x.pixels()));
}

inline ImageTensor image_from_base64_png(const std::string& s) {
  return validate_image(decode_png(base64_decode(s)));
}

// ---- client ----------------------------------------------------------------

class RemoteError : public Error {
 public:
  using Error::Error;
};

// Connection refused, timeout, or other transport failure.
class RemoteTransportError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

class RemoteStatusError : public RemoteError {
 public:
  RemoteStatusError(int status, const std::string& body)
      : RemoteError("remote verifier returned HTTP " + std::to_string(status) +
                    ": " + body),
        status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class RemoteResponseError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

struct RemoteClientConfig {
  std::string host = "127.0.0.1";
  int port = 8081;
  std::string path = "/verify";
  std::string api_key;  // sent as X-Api-Key when non-empty
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{100};
  std::chrono::milliseconds timeout{5000};
};

inline void to_json(json& j, const RemoteClientConfig& c) {
  j = json{{"host", c.host},           {"port", c.port},
           {"path", c.path},           {"max_attempts", c.max_attempts},
           {"initial_backoff_ms", c.initial_backoff.count()},
           {"timeout_ms", c.timeout.count()}};
}
inline void from_json(const json& j, RemoteClientConfig& c) {
  RemoteClientConfig d;
  c.host = j.value("host", d.host);
  c.port = j.value("port", d.port);
  c.path = j.value("path", d.path);
  c.api_key = j.value("api_key", d.api_key);
  c.max_attempts = j.value("max_attempts", d.max_attempts);
  c.initial_backoff = std::chrono::milliseconds(
      j.value("initial_backoff_ms", static_cast<long>(d.initial_backoff.count())));
  c.timeout = std::chrono::milliseconds(
      j.value("timeout_ms", static_cast<long>(d.timeout.count())));
}

// Parses a wire response body: {identity: string|null, confidence: 0..100,
// similarity?: number}.
inline VerifyResult parse_verify_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw RemoteResponseError(std::string("malformed response: ") + e.what());
  }
  if (!j.is_object() || !j.contains("identity") || !j.contains("confidence")) {
    throw RemoteResponseError("response missing identity/confidence");
  }
  VerifyResult r;
  const auto& id = j.at("identity");
  if (id.is_string()) {
    r.identity = id.get<std::string>();
  } else if (!id.is_null()) {
    throw RemoteResponseError("identity must be string or null");
  }
  if (!j.at("confidence").is_number()) {
    throw RemoteResponseError("confidence must be a number");
  }
  r.confidence = j.at("confidence").get<double>();
  if (!(r.confidence >= 0.0 && r.confidence <= kConfidenceMax)) {
    throw RemoteResponseError("confidence outside [0,100]");
  }
  if (j.contains("similarity") && !j.at("similarity").is_null()) {
    if (!j.at("similarity").is_number()) {
      throw RemoteResponseError("similarity must be a number");
    }
    r.similarity = j.at("similarity").get<double>();
  }
  return r;
}

// HTTP client for a face-verification service speaking the JSON wire
// contract. Transport failures, 5xx and 429 responses are retried with
// exponential backoff; other failures surface immediately.
class RemoteVerifier final : public Verifier {
 public:
  using SleepFn = std::function<void(std::chrono::milliseconds)>;

  RemoteVerifier(std::string id, RemoteClientConfig cfg, SleepFn sleep = {})
      : id_(std::move(id)), cfg_(std::move(cfg)), sleep_(std::move(sleep)) {
    if (cfg_.max_attempts < 1) {
      throw ValidationError("max_attempts must be >= 1");
    }
    if (!sleep_) {
      sleep_ = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
      };
    }
  }

  const std::string& id() const override { return id_; }

  VerifyResult search(const ImageTensor& probe) const override {
    return post(json{{"mode", "search"}, {"image", image_to_base64_png(probe)}});
  }

  VerifyResult compare(const ImageTensor& probe,
                       const ImageTensor& reference) const override {
    return post(json{{"mode", "compare"},
                     {"image", image_to_base64_png(probe)},
                     {"reference", image_to_base64_png(reference)}});
  }

  // Number of HTTP attempts made by the most recent call.
  int last_attempts() const { return last_attempts_; }

 private:
  VerifyResult post(const json& request) const {
    const std::string body = request.dump();
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("X-Api-Key", cfg_.api_key);
    auto backoff = cfg_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      last_attempts_ = attempt;
      httplib::Client client(cfg_.host, cfg_.port);
      client.set_connection_timeout(cfg_.timeout);
      client.set_read_timeout(cfg_.timeout);
      client.set_write_timeout(cfg_.timeout);
      auto res = client.Post(cfg_.path, headers, body, "application/json");
      bool retryable = false;
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        retryable = true;
      } else if (res->status >= 200 && res->status < 300) {
        return parse_verify_response(res->body);
      } else if (res->status >= 500 || res->status == 429) {
        last_error = "HTTP " + std::to_string(res->status);
        retryable = true;
        if (attempt == cfg_.max_attempts) {
          throw RemoteStatusError(res->status, res->body);
        }
      } else {
        throw RemoteStatusError(res->status, res->body);
      }
      if (retryable && attempt < cfg_.max_attempts) {
        sleep_(backoff);
        backoff *= 2;
      }
    }
    throw RemoteTransportError("remote verifier '" + id_ + "' unreachable after " +
                               std::to_string(cfg_.max_attempts) +
                               " attempts (" + last_error + ")");
  }

  std::string id_;
  RemoteClientConfig cfg_;
  SleepFn sleep_;
  mutable int last_attempts_ = 0;
};

// ---- mock server -----------------------------------------------------------

// Serves the verifier wire contract from a local gallery verifier.
class MockVerifierServer {
 public:
  explicit MockVerifierServer(std::shared_ptr<const Verifier> backend,
                              std::string api_key = {})
      : backend_(std::move(backend)), api_key_(std::move(api_key)) {
    server_.Post("/verify", [this](const httplib::Request& req,
                                   httplib::Response& res) { handle(req, res); });
  }

  ~MockVerifierServer() { stop(); }

  MockVerifierServer(const MockVerifierServer&) = delete;
  MockVerifierServer& operator=(const MockVerifierServer&) = delete;

  // Binds to an ephemeral port on 127.0.0.1 and serves on a background
  // thread. Returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host)
                      : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("mock verifier: cannot bind");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }
  int request_count() const { return requests_.load(); }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    auto fail = [&res](int status, const std::string& msg) {
      res.status = status;
      res.set_content(json{{"error", msg}}.dump(), "application/json");
    };
    if (!api_key_.empty() && req.get_header_value("X-Api-Key") != api_key_) {
      return fail(401, "invalid api key");
    }
    json j;
    try {
      j = json::parse(req.body);
    } catch (const json::exception&) {
      return fail(400, "request body is not JSON");
    }
    const std::string mode = j.value("mode", std::string("search"));
    try {
      const ImageTensor probe =
          image_from_base64_png(j.at("image").get<std::string>());
      VerifyResult r;
      if (mode == "search") {
        r = backend_->search(probe);
      } else if (mode == "compare") {
        if (!j.contains("reference")) return fail(400, "compare needs reference");
        r = backend_->compare(
            probe, image_from_base64_png(j.at("reference").get<std::string>()));
      } else {
        return fail(400, "unknown mode '" + mode + "'");
      }
      json out{{"identity", r.identity ? json(*r.identity) : json(nullptr)},
               {"confidence", r.confidence}};
      if (r.similarity) out["similarity"] = *r.similarity;
      res.set_content(out.dump(), "application/json");
    } catch (const ValidationError& e) {
      return fail(400, e.what());
    } catch (const json::exception& e) {
      return fail(400, e.what());
    } catch (const std::exception& e) {
      return fail(500, e.what());
    }
  }

  std::shared_ptr<const Verifier> backend_;
  std::string api_key_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<int> requests_{0};
};

}  // namespace dipa
