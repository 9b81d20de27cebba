#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "dipa/embedders.hpp"
#include "dipa/errors.hpp"
#include "dipa/optimizer.hpp"
#include "dipa/png_io.hpp"
#include "dipa/types.hpp"

namespace dipa::service {

namespace fs = std::filesystem;

// Milliseconds since the epoch. Injectable so tests can move time.
using Clock = std::function<std::int64_t()>;

inline std::int64_t system_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

class ManualClock {
 public:
  explicit ManualClock(std::int64_t start = 1'700'000'000'000) : now_(start) {}
  std::int64_t now() const { return now_.load(); }
  void advance(std::chrono::milliseconds d) { now_ += d.count(); }
  Clock fn() {
    return [this] { return now(); };
  }

 private:
  std::atomic<std::int64_t> now_;
};

class ConsentRequiredError : public ValidationError {
 public:
  ConsentRequiredError()
      : ValidationError("explicit consent is required to process the photo") {}
};

class PayloadTooLargeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Raised when results are requested before a job is done.
class ConflictError : public Error {
 public:
  using Error::Error;
};

enum class JobStatus { kQueued, kRunning, kDone, kFailed };

inline std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::kQueued: return "queued";
    case JobStatus::kRunning: return "running";
    case JobStatus::kDone: return "done";
    case JobStatus::kFailed: return "failed";
  }
  return "?";
}

inline JobStatus parse_job_status(const std::string& s) {
  if (s == "queued") return JobStatus::kQueued;
  if (s == "running") return JobStatus::kRunning;
  if (s == "done") return JobStatus::kDone;
  if (s == "failed") return JobStatus::kFailed;
  throw ValidationError("unknown job status '" + s + "'");
}

struct Job {
  std::string id;
  JobStatus status = JobStatus::kQueued;
  double progress = 0.0;
  AttackConfig config;
  int count = 5;
  bool consent = false;
  bool retain_input = false;
  std::string input_ref;
  std::vector<std::string> outputs;  // patch image paths relative to the job dir
  std::uint64_t sequence = 0;        // submission order
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
  std::int64_t started_ms = 0;
  std::int64_t finished_ms = 0;
  std::string lease_owner;
  std::int64_t lease_expires_ms = 0;
  int attempts = 0;
  std::string failure_reason;
};

inline void to_json(json& j, const Job& job) {
  j = json{{"id", job.id},
           {"status", to_string(job.status)},
           {"progress", job.progress},
           {"config", job.config},
           {"count", job.count},
           {"consent", job.consent},
           {"retain_input", job.retain_input},
           {"input_ref", job.input_ref},
           {"outputs", job.outputs},
           {"sequence", job.sequence},
           {"created_ms", job.created_ms},
           {"updated_ms", job.updated_ms},
           {"started_ms", job.started_ms},
           {"finished_ms", job.finished_ms},
           {"lease_owner", job.lease_owner},
           {"lease_expires_ms", job.lease_expires_ms},
           {"attempts", job.attempts},
           {"failure_reason", job.failure_reason}};
}

inline void from_json(const json& j, Job& job) {
  job.id = j.at("id").get<std::string>();
  job.status = parse_job_status(j.at("status").get<std::string>());
  job.progress = j.at("progress").get<double>();
  job.config = j.at("config").get<AttackConfig>();
  job.count = j.at("count").get<int>();
  job.consent = j.at("consent").get<bool>();
  job.retain_input = j.value("retain_input", false);
  job.input_ref = j.value("input_ref", std::string{});
  job.outputs = j.value("outputs", std::vector<std::string>{});
  job.sequence = j.at("sequence").get<std::uint64_t>();
  job.created_ms = j.value("created_ms", std::int64_t{0});
  job.updated_ms = j.value("updated_ms", std::int64_t{0});
  job.started_ms = j.value("started_ms", std::int64_t{0});
  job.finished_ms = j.value("finished_ms", std::int64_t{0});
  job.lease_owner = j.value("lease_owner", std::string{});
  job.lease_expires_ms = j.value("lease_expires_ms", std::int64_t{0});
  job.attempts = j.value("attempts", 0);
  job.failure_reason = j.value("failure_reason", std::string{});
}

// 128 random bits, hex encoded.
inline std::string new_job_id() {
  static thread_local std::random_device rd;
  const std::uint64_t parts[2] = {
      (static_cast<std::uint64_t>(rd()) << 32) ^ rd(),
      (static_cast<std::uint64_t>(rd()) << 32) ^ rd()};
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (std::uint64_t p : parts) {
    for (int shift = 60; shift >= 0; shift -= 4) out += kHex[(p >> shift) & 0xf];
  }
  return out;
}

inline bool is_job_id(const std::string& s) {
  return s.size() == 32 &&
         std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

// Writes to a sibling temp file and renames it over the target.
inline void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct StoreOptions {
  fs::path root = "jobs";
  std::size_t max_upload_bytes = 10 * 1024 * 1024;
  bool retain_uploads = false;
  std::chrono::milliseconds lease{30'000};
  int max_count = 20;
};

// Applies the client-settable subset (variant, lambda_tv, steps, patch_side,
// count) on top of the service's base attack config.
inline std::pair<AttackConfig, int> job_config_from_json(
    const json& j, const AttackConfig& base, int default_count, int max_count) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "variant" && key != "lambda_tv" && key != "steps" &&
        key != "patch_side" && key != "count" && key != "seed") {
      throw ValidationError("config field '" + key + "' is not settable");
    }
  }
  AttackConfig cfg = base;
  try {
    if (j.contains("variant")) {
      cfg.variant = parse_variant(j.at("variant").get<std::string>());
      cfg.lambda_tv = cfg.variant == Variant::kDipaTv ? kDefaultLambdaTv : 0.0;
    }
    if (j.contains("lambda_tv")) cfg.lambda_tv = j.at("lambda_tv").get<double>();
    if (j.contains("steps")) cfg.steps = j.at("steps").get<int>();
    if (j.contains("patch_side")) cfg.patch_side = j.at("patch_side").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid config: ") + e.what());
  }
  cfg.validate();
  const int count = j.value("count", default_count);
  if (count < 1 || count > max_count) {
    throw ValidationError("count must lie in [1, " + std::to_string(max_count) +
                          "]");
  }
  return {cfg, count};
}

// Filesystem-backed job table:
//   <root>/<id>/job.json, input.png, patches/patch_<k>.{png,json}
// Every state change is persisted with write-then-rename.
class JobStore {
 public:
  JobStore(StoreOptions options, Clock clock = system_now_ms)
      : opts_(std::move(options)), clock_(std::move(clock)) {
    fs::create_directories(opts_.root);
    recover();
  }

  const StoreOptions& options() const { return opts_; }
  std::int64_t now() const { return clock_(); }

  // Validates consent, size, image and config before anything touches disk.
  std::string submit(const std::vector<std::uint8_t>& photo,
                     const AttackConfig& config, int count, bool consent) {
    if (!consent) throw ConsentRequiredError();
    if (photo.size() > opts_.max_upload_bytes) {
      throw PayloadTooLargeError("photo exceeds the upload limit of " +
                                 std::to_string(opts_.max_upload_bytes) +
                                 " bytes");
    }
    validate_image(decode_png(photo));
    config.validate();
    if (count < 1) throw ValidationError("count must be >= 1");

    std::lock_guard lock(mu_);
    Job job;
    job.id = new_job_id();
    job.config = config;
    job.count = count;
    job.consent = true;
    job.retain_input = opts_.retain_uploads;
    job.input_ref = "input.png";
    job.sequence = ++sequence_;
    job.created_ms = job.updated_ms = clock_();
    const fs::path dir = opts_.root / job.id;
    fs::create_directories(dir);
    write_file_bytes(dir / job.input_ref, photo);
    persist(job);
    jobs_[job.id] = job;
    cv_.notify_all();
    return job.id;
  }

  Job get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("unknown job '" + id + "'");
    return it->second;
  }

  std::vector<Job> list() const {
    std::lock_guard lock(mu_);
    std::vector<Job> out;
    for (const auto& [_, j] : jobs_) out.push_back(j);
    std::sort(out.begin(), out.end(),
              [](const Job& a, const Job& b) { return a.sequence < b.sequence; });
    return out;
  }

  // Claims the oldest queued job for `owner` and starts its lease.
  std::optional<Job> claim(const std::string& owner) {
    std::lock_guard lock(mu_);
    Job* best = nullptr;
    for (auto& [_, j] : jobs_) {
      if (j.status == JobStatus::kQueued &&
          (!best || j.sequence < best->sequence)) {
        best = &j;
      }
    }
    if (!best) return std::nullopt;
    const std::int64_t t = clock_();
    best->status = JobStatus::kRunning;
    best->lease_owner = owner;
    best->lease_expires_ms = t + opts_.lease.count();
    best->started_ms = best->updated_ms = t;
    best->progress = 0.0;
    ++best->attempts;
    persist(*best);
    return *best;
  }

  // Updates progress and extends the lease. Returns false if `owner` no
  // longer holds the job.
  bool heartbeat(const std::string& id, const std::string& owner,
                 double progress) {
    std::lock_guard lock(mu_);
    Job* j = owned(id, owner);
    if (!j) return false;
    const std::int64_t t = clock_();
    const bool renew = t + opts_.lease.count() / 2 > j->lease_expires_ms;
    const bool jump = progress - persisted_[id] >= 0.05;
    j->progress = std::clamp(progress, 0.0, 1.0);
    j->updated_ms = t;
    if (renew) j->lease_expires_ms = t + opts_.lease.count();
    if (renew || jump) persist(*j);
    return true;
  }

  // Writes the patch files, then flips the job to done. Succeeds at most
  // once per job.
  bool complete(const std::string& id, const std::string& owner,
                const std::vector<Patch>& patches) {
    std::lock_guard lock(mu_);
    Job* j = owned(id, owner);
    if (!j) return false;
    const fs::path dir = opts_.root / id;
    const fs::path pdir = dir / "patches";
    fs::create_directories(pdir);
    j->outputs.clear();
    for (std::size_t k = 0; k < patches.size(); ++k) {
      export_patch(pdir, static_cast<int>(k), patches[k]);
      j->outputs.push_back("patches/patch_" + std::to_string(k) + ".png");
    }
    finish(*j, JobStatus::kDone, {});
    return true;
  }

  bool fail(const std::string& id, const std::string& owner,
            const std::string& reason) {
    std::lock_guard lock(mu_);
    Job* j = owned(id, owner);
    if (!j) return false;
    finish(*j, JobStatus::kFailed, reason);
    return true;
  }

  // Hands a running job back to the queue (clean shutdown).
  bool release(const std::string& id, const std::string& owner) {
    std::lock_guard lock(mu_);
    Job* j = owned(id, owner);
    if (!j) return false;
    requeue(*j);
    cv_.notify_all();
    return true;
  }

  // Running jobs whose lease has lapsed go back to queued. Returns how many.
  int requeue_expired() {
    std::lock_guard lock(mu_);
    return requeue_expired_locked();
  }

  // Blocks until a job may be claimable or the timeout passes.
  void wait_for_work(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout);
  }

  void notify_all() { cv_.notify_all(); }

  fs::path job_dir(const std::string& id) const { return opts_.root / id; }

 private:
  Job* owned(const std::string& id, const std::string& owner) {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return nullptr;
    Job& j = it->second;
    if (j.status != JobStatus::kRunning || j.lease_owner != owner) return nullptr;
    return &j;
  }

  void finish(Job& j, JobStatus status, const std::string& reason) {
    j.status = status;
    j.failure_reason = reason;
    j.progress = status == JobStatus::kDone ? 1.0 : j.progress;
    j.finished_ms = j.updated_ms = clock_();
    j.lease_owner.clear();
    j.lease_expires_ms = 0;
    if (!j.retain_input && !j.input_ref.empty()) {
      std::error_code ec;
      fs::remove(opts_.root / j.id / j.input_ref, ec);
      j.input_ref.clear();
    }
    persist(j);
  }

  void requeue(Job& j) {
    j.status = JobStatus::kQueued;
    j.progress = 0.0;
    j.lease_owner.clear();
    j.lease_expires_ms = 0;
    j.updated_ms = clock_();
    persist(j);
  }

  int requeue_expired_locked() {
    const std::int64_t t = clock_();
    int n = 0;
    for (auto& [_, j] : jobs_) {
      if (j.status == JobStatus::kRunning && j.lease_expires_ms <= t) {
        requeue(j);
        ++n;
      }
    }
    if (n) cv_.notify_all();
    return n;
  }

  void persist(const Job& j) {
    atomic_write(opts_.root / j.id / "job.json", json(j).dump(2));
    persisted_[j.id] = j.progress;
  }

  // Loads every job.json; skips directories without one (an interrupted
  // submit) and anything that fails to parse.
  void recover() {
    std::lock_guard lock(mu_);
    for (const auto& entry : fs::directory_iterator(opts_.root)) {
      if (!entry.is_directory() || !is_job_id(entry.path().filename().string())) {
        continue;
      }
      const fs::path file = entry.path() / "job.json";
      std::ifstream in(file);
      if (!in) continue;
      try {
        json j;
        in >> j;
        Job e = j.get<Job>();
        if (!e.consent) continue;
        sequence_ = std::max(sequence_, e.sequence);
        persisted_[e.id] = e.progress;
        jobs_[e.id] = std::move(e);
      } catch (const std::exception&) {
        continue;
      }
    }
    requeue_expired_locked();
  }

  StoreOptions opts_;
  Clock clock_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Job> jobs_;
  std::map<std::string, double> persisted_;  // last progress written to disk
  std::uint64_t sequence_ = 0;
};

class JobCancelled : public Error {
 public:
  JobCancelled() : Error("job cancelled") {}
};

// Runs a single claimed job to completion. Progress is (completed optimizer
// steps) / (steps * count).
inline void run_job(JobStore& store, const EmbedderRegistry& registry,
                    const Job& job, const std::string& owner,
                    const std::atomic<bool>& stopping) {
  try {
    const ImageTensor photo =
        load_image(store.job_dir(job.id) / job.input_ref);
    const Ensemble ensemble = load_ensemble(job.config.ensemble_ids, registry);
    const auto patches = generate_patch_set(
        photo, ensemble, job.config, job.count, [&](int done, int total) {
          if (stopping.load()) throw JobCancelled();
          const double p = total > 0 ? static_cast<double>(done) / total : 1.0;
          if (!store.heartbeat(job.id, owner, p)) throw JobCancelled();
        });
    store.complete(job.id, owner, patches);
  } catch (const JobCancelled&) {
    store.release(job.id, owner);
  } catch (const std::exception& e) {
    store.fail(job.id, owner, e.what());
  }
}

// Pool of worker threads pulling jobs in submission order.
class WorkerPool {
 public:
  WorkerPool(JobStore& store, const EmbedderRegistry& registry, int workers)
      : store_(store), registry_(registry) {
    if (workers < 1) throw ValidationError("at least one worker is required");
    for (int i = 0; i < workers; ++i) {
      const std::string owner =
          "worker-" + std::to_string(i) + "-" + new_job_id().substr(0, 8);
      threads_.emplace_back([this, owner] { loop(owner); });
    }
  }

  ~WorkerPool() { stop(); }

  // Cancels running jobs (they return to the queue) and joins every thread.
  void stop() {
    stopping_ = true;
    store_.notify_all();
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
  }

 private:
  void loop(const std::string& owner) {
    while (!stopping_) {
      store_.requeue_expired();
      auto job = store_.claim(owner);
      if (!job) {
        store_.wait_for_work(std::chrono::milliseconds(200));
        continue;
      }
      run_job(store_, registry_, *job, owner, stopping_);
    }
  }

  JobStore& store_;
  const EmbedderRegistry& registry_;
  std::atomic<bool> stopping_{false};
  std::vector<std::thread> threads_;
};

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  int workers = 1;
  fs::path job_dir = "jobs";
  std::size_t max_upload_bytes = 10 * 1024 * 1024;
  bool retain_uploads = false;
  std::chrono::milliseconds lease{30'000};
  fs::path static_dir;
  fs::path manifest;
  int default_count = 5;
  AttackConfig base_config{};
};

// Reads an optional JSON config file, then applies DIPA_* environment
// overrides: DIPA_PORT, DIPA_WORKERS, DIPA_JOB_DIR, DIPA_MAX_UPLOAD_BYTES,
// DIPA_RETAIN_UPLOADS, DIPA_STATIC_DIR, DIPA_MANIFEST.
inline ServiceConfig load_service_config(const fs::path& file = {}) {
  ServiceConfig c;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot open service config " + file.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ValidationError("service config is not valid JSON: " +
                            std::string(e.what()));
    }
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.workers = j.value("workers", c.workers);
    c.job_dir = j.value("job_dir", c.job_dir.string());
    c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
    c.retain_uploads = j.value("retain_uploads", c.retain_uploads);
    c.lease = std::chrono::milliseconds(
        j.value("lease_ms", static_cast<long>(c.lease.count())));
    c.static_dir = j.value("static_dir", c.static_dir.string());
    c.manifest = j.value("manifest", c.manifest.string());
    c.default_count = j.value("default_count", c.default_count);
    if (j.contains("attack")) c.base_config = j.at("attack").get<AttackConfig>();
  }
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    return v ? std::optional<std::string>(v) : std::nullopt;
  };
  try {
    if (auto v = env("DIPA_PORT")) c.port = std::stoi(*v);
    if (auto v = env("DIPA_WORKERS")) c.workers = std::stoi(*v);
    if (auto v = env("DIPA_MAX_UPLOAD_BYTES")) c.max_upload_bytes = std::stoull(*v);
  } catch (const std::exception&) {
    throw ValidationError("malformed numeric DIPA_* environment variable");
  }
  if (auto v = env("DIPA_JOB_DIR")) c.job_dir = *v;
  if (auto v = env("DIPA_RETAIN_UPLOADS")) {
    c.retain_uploads = *v == "1" || *v == "true";
  }
  if (auto v = env("DIPA_STATIC_DIR")) c.static_dir = *v;
  if (auto v = env("DIPA_MANIFEST")) c.manifest = *v;
  return c;
}

// HTTP front end: job submission, status, results, health.
class HttpService {
 public:
  HttpService(ServiceConfig cfg, JobStore& store)
      : cfg_(std::move(cfg)), store_(store) {
    server_.set_payload_max_length(cfg_.max_upload_bytes + 256 * 1024);
    // SO_REUSEADDR only: the library default also sets SO_REUSEPORT, which
    // would let a second instance bind an occupied port.
    server_.set_socket_options([](auto sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes),
                 sizeof(yes));
    });
    routes();
    if (!cfg_.static_dir.empty() && fs::is_directory(cfg_.static_dir)) {
      server_.set_mount_point("/", cfg_.static_dir.string());
    }
  }

  ~HttpService() { stop(); }

  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start() {
    if (cfg_.port == 0) {
      port_ = server_.bind_to_any_port(cfg_.host);
    } else {
      port_ = server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
    }
    if (port_ < 0) {
      throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    }
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

 private:
  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status,
                         const std::string& code, const std::string& message,
                         json extra = json::object()) {
    extra["error"] = message;
    extra["code"] = code;
    send_json(res, status, extra);
  }

  void routes() {
    server_.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    server_.Post("/api/jobs", [this](const httplib::Request& req,
                                     httplib::Response& res) {
      const bool consent = req.has_file("consent") &&
                           req.get_file_value("consent").content == "true";
      if (!consent) {
        return send_error(res, 400, "consent_required",
                          "explicit consent is required to process the photo");
      }
      if (!req.has_file("photo")) {
        return send_error(res, 400, "validation_error", "missing photo field");
      }
      const auto& photo = req.get_file_value("photo").content;
      try {
        json config_json = json::object();
        if (req.has_file("config")) {
          const auto& text = req.get_file_value("config").content;
          if (!text.empty()) config_json = json::parse(text);
        }
        const auto [cfg, count] = job_config_from_json(
            config_json, cfg_.base_config, cfg_.default_count,
            store_.options().max_count);
        const std::string id = store_.submit(
            std::vector<std::uint8_t>(photo.begin(), photo.end()), cfg, count,
            consent);
        send_json(res, 202, {{"job_id", id}});
      } catch (const PayloadTooLargeError& e) {
        send_error(res, 413, "payload_too_large", e.what());
      } catch (const ConsentRequiredError& e) {
        send_error(res, 400, "consent_required", e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "validation_error",
                   std::string("config is not valid JSON: ") + e.what());
      } catch (const ValidationError& e) {
        send_error(res, 400, "validation_error", e.what());
      } catch (const DimensionError& e) {
        send_error(res, 400, "validation_error", e.what());
      }
    });

    server_.Get(R"(/api/jobs/([0-9a-f]+))", [this](const httplib::Request& req,
                                                   httplib::Response& res) {
      try {
        const Job job = store_.get(req.matches[1]);
        json body{{"status", to_string(job.status)}, {"progress", job.progress}};
        if (job.status == JobStatus::kFailed) body["error"] = job.failure_reason;
        send_json(res, 200, body);
      } catch (const NotFoundError& e) {
        send_error(res, 404, "not_found", e.what());
      }
    });

    server_.Get(R"(/api/jobs/([0-9a-f]+)/patches)", [this](
                                                        const httplib::Request& req,
                                                        httplib::Response& res) {
      try {
        const Job job = done_job(req.matches[1]);
        json patches = json::array();
        for (std::size_t k = 0; k < job.outputs.size(); ++k) {
          const fs::path meta = store_.job_dir(job.id) / "patches" /
                                ("patch_" + std::to_string(k) + ".json");
          std::ifstream in(meta);
          json metadata;
          in >> metadata;
          patches.push_back({{"index", k},
                             {"url", "/api/jobs/" + job.id + "/patches/" +
                                         std::to_string(k) + ".png"},
                             {"metadata", metadata}});
        }
        send_json(res, 200, {{"patches", patches}});
      } catch (const NotFoundError& e) {
        send_error(res, 404, "not_found", e.what());
      } catch (const ConflictError& e) {
        send_error(res, 409, "conflict", e.what(),
                   {{"status", to_string(store_.get(req.matches[1]).status)}});
      }
    });

    server_.Get(R"(/api/jobs/([0-9a-f]+)/patches/(\d+)\.png)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  try {
                    const Job job = done_job(req.matches[1]);
                    const std::size_t k = std::stoul(req.matches[2]);
                    if (k >= job.outputs.size()) {
                      return send_error(res, 404, "not_found",
                                        "no patch " + std::to_string(k));
                    }
                    const auto bytes =
                        read_file_bytes(store_.job_dir(job.id) / job.outputs[k]);
                    res.status = 200;
                    res.set_content(std::string(bytes.begin(), bytes.end()),
                                    "image/png");
                  } catch (const NotFoundError& e) {
                    send_error(res, 404, "not_found", e.what());
                  } catch (const ConflictError& e) {
                    send_error(res, 409, "conflict", e.what(),
                               {{"status",
                                 to_string(store_.get(req.matches[1]).status)}});
                  }
                });
  }

  Job done_job(const std::string& id) const {
    Job job = store_.get(id);
    if (job.status != JobStatus::kDone) {
      throw ConflictError("job " + id + " is " + to_string(job.status) +
                          ", results are not available");
    }
    return job;
  }

  ServiceConfig cfg_;
  JobStore& store_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace dipa::service
