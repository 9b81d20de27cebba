#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dipa/errors.hpp"
#include "dipa/tensor.hpp"

namespace dipa {

using json = nlohmann::json;

enum class Variant { kDipa, kDipaTv };

inline std::string to_string(Variant v) {
  return v == Variant::kDipa ? "dipa" : "dipa-tv";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "dipa" || s == "DiPA") return Variant::kDipa;
  if (s == "dipa-tv" || s == "dipa_tv" || s == "DiPA_TV") {
    return Variant::kDipaTv;
  }
  throw ValidationError("unknown variant '" + s + "' (expected dipa|dipa-tv)");
}

// Symmetric ranges for randomized placement sampling.
struct Jitter {
  double dx = 0.0;     // normalized units
  double dy = 0.0;     // normalized units
  double dscale = 0.0;
  double drot = 0.0;   // degrees

  friend bool operator==(const Jitter&, const Jitter&) = default;
};

// Where the patch lands inside a face image.
struct Placement {
  double center_x = 0.5;
  double center_y = 0.78;
  double scale = 0.35;  // patch side as fraction of min(H, W)
  double rotation_deg = 0.0;
  Jitter jitter{0.03, 0.03, 0.05, 3.0};

  void validate() const {
    if (!(center_x >= 0.0 && center_x <= 1.0 && center_y >= 0.0 &&
          center_y <= 1.0)) {
      throw ValidationError("placement center must lie in [0,1]");
    }
    if (!(scale > 0.0 && scale <= 1.0)) {
      throw ValidationError("placement scale must lie in (0,1]");
    }
    if (!std::isfinite(rotation_deg)) {
      throw ValidationError("placement rotation must be finite");
    }
    if (!(jitter.dx >= 0 && jitter.dy >= 0 && jitter.dscale >= 0 &&
          jitter.drot >= 0)) {
      throw ValidationError("jitter ranges must be nonnegative");
    }
  }

  friend bool operator==(const Placement&, const Placement&) = default;
};

// Chosen by a sweep on the synthetic ensemble: the largest weight whose final
// similarity stays within 10% of the unregularized run.
inline constexpr double kDefaultLambdaTv = 3e-5;

struct AttackConfig {
  Variant variant = Variant::kDipa;
  double lambda_tv = 0.0;
  int steps = 1000;
  double step_size = 0.01;
  int patch_side = 448;
  int pool_kernel = 7;
  int pool_stride = 1;
  Placement placement{};
  int jitter_samples = 4;
  std::vector<std::string> ensemble_ids{"tiny-a", "tiny-b", "tiny-c"};
  std::uint64_t seed = 0;

  void validate() const {
    if (variant == Variant::kDipa && lambda_tv != 0.0) {
      throw ValidationError("variant dipa requires lambda_tv = 0");
    }
    if (!(lambda_tv >= 0.0) || !std::isfinite(lambda_tv)) {
      throw ValidationError("lambda_tv must be a nonnegative real");
    }
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (!(step_size > 0.0)) throw ValidationError("step_size must be > 0");
    if (patch_side < 1) throw ValidationError("patch_side must be >= 1");
    if (pool_kernel < 1 || pool_kernel % 2 == 0) {
      throw ValidationError("pool_kernel must be an odd positive integer");
    }
    if (pool_kernel > patch_side) {
      throw ValidationError("pool_kernel must not exceed patch_side");
    }
    if (pool_stride < 1) throw ValidationError("pool_stride must be >= 1");
    if (jitter_samples < 1) {
      throw ValidationError("jitter_samples must be >= 1");
    }
    if (ensemble_ids.empty()) {
      throw ValidationError("ensemble must contain at least one embedder");
    }
    placement.validate();
  }

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

// Config for a variant with its conventional regularization weight.
inline AttackConfig make_config(Variant v) {
  AttackConfig cfg;
  cfg.variant = v;
  cfg.lambda_tv = v == Variant::kDipaTv ? kDefaultLambdaTv : 0.0;
  return cfg;
}

struct PatchMetadata {
  AttackConfig config;
  double final_loss = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const PatchMetadata&, const PatchMetadata&) = default;
};

struct Patch {
  Tensor3 data;  // side x side x 3, values in [0,1]
  PatchMetadata metadata;

  int side() const { return data.height(); }

  void validate() const {
    if (data.height() != data.width() || data.channels() != 3) {
      throw ValidationError("patch must be DxDx3, got " + shape_string(data));
    }
    if (data.height() != metadata.config.patch_side) {
      throw ValidationError("patch side does not match configured patch_side");
    }
    for (double v : data.values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("patch value outside [0,1]");
      }
    }
  }

  friend bool operator==(const Patch&, const Patch&) = default;
};

// Unit-norm embedding vector.
class Embedding {
 public:
  Embedding() = default;

  // Takes an already-normalized vector; throws if its norm is not 1.
  explicit Embedding(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 1) throw DimensionError("empty embedding");
    double n2 = 0.0;
    for (double v : values_) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
      throw ValidationError("embedding is not unit norm");
    }
  }

  static Embedding normalized(std::vector<double> raw) {
    double n2 = 0.0;
    for (double v : raw) n2 += v * v;
    const double n = std::sqrt(n2);
    if (!(n > 0.0)) throw NumericError("cannot normalize zero embedding");
    for (auto& v : raw) v /= n;
    return Embedding(std::move(raw));
  }

  std::size_t dim() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  std::vector<double> values_;
};

inline constexpr double kConfidenceMax = 100.0;

struct TrialRecord {
  std::string subject;
  std::string method;
  int patch_index = 0;
  int trial_index = 0;
  std::string true_identity;
  std::optional<std::string> predicted_identity;  // nullopt = no face
  double detection_confidence = 0.0;              // 0..100
  // Verifier id -> cosine similarity between clean and patched image.
  std::vector<std::pair<std::string, double>> similarity;
  std::optional<std::string> invalid_reason;

  bool valid() const { return !invalid_reason.has_value(); }

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct EvaluationReport {
  std::string method;
  std::string subject;  // "all" for pooled reports
  std::vector<std::pair<std::string, double>> similarity;
  double asr = 0.0;
  double mean_confidence = 0.0;
  int trial_count = 0;
  int successes = 0;
  double no_face_fraction = 0.0;
  int invalid_count = 0;

  friend bool operator==(const EvaluationReport&,
                         const EvaluationReport&) = default;
};

inline constexpr const char* kPooledSubject = "all";

// ---- JSON ------------------------------------------------------------------

inline void to_json(json& j, const Jitter& v) {
  j = json{{"dx", v.dx}, {"dy", v.dy}, {"dscale", v.dscale}, {"drot", v.drot}};
}
inline void from_json(const json& j, Jitter& v) {
  v.dx = j.value("dx", 0.0);
  v.dy = j.value("dy", 0.0);
  v.dscale = j.value("dscale", 0.0);
  v.drot = j.value("drot", 0.0);
}

inline void to_json(json& j, const Placement& v) {
  j = json{{"center_x", v.center_x},
           {"center_y", v.center_y},
           {"scale", v.scale},
           {"rotation_deg", v.rotation_deg},
           {"jitter", v.jitter}};
}
inline void from_json(const json& j, Placement& v) {
  Placement d;
  v.center_x = j.value("center_x", d.center_x);
  v.center_y = j.value("center_y", d.center_y);
  v.scale = j.value("scale", d.scale);
  v.rotation_deg = j.value("rotation_deg", d.rotation_deg);
  v.jitter = j.contains("jitter") ? j.at("jitter").get<Jitter>() : d.jitter;
}

inline void to_json(json& j, const AttackConfig& c) {
  j = json{{"variant", to_string(c.variant)},
           {"lambda_tv", c.lambda_tv},
           {"steps", c.steps},
           {"step_size", c.step_size},
           {"patch_side", c.patch_side},
           {"pool_kernel", c.pool_kernel},
           {"pool_stride", c.pool_stride},
           {"placement", c.placement},
           {"jitter_samples", c.jitter_samples},
           {"ensemble_ids", c.ensemble_ids},
           {"seed", c.seed}};
}

// Missing fields take defaults; a dipa-tv config without lambda_tv gets the
// default regularization weight.
inline void from_json(const json& j, AttackConfig& c) {
  const Variant variant =
      j.contains("variant") ? parse_variant(j.at("variant").get<std::string>())
                            : Variant::kDipa;
  AttackConfig d = make_config(variant);
  c.variant = variant;
  c.lambda_tv = j.value("lambda_tv", d.lambda_tv);
  c.steps = j.value("steps", d.steps);
  c.step_size = j.value("step_size", d.step_size);
  c.patch_side = j.value("patch_side", d.patch_side);
  c.pool_kernel = j.value("pool_kernel", d.pool_kernel);
  c.pool_stride = j.value("pool_stride", d.pool_stride);
  c.placement =
      j.contains("placement") ? j.at("placement").get<Placement>() : d.placement;
  c.jitter_samples = j.value("jitter_samples", d.jitter_samples);
  c.ensemble_ids = j.value("ensemble_ids", d.ensemble_ids);
  c.seed = j.value("seed", d.seed);
}

inline json tensor_to_json(const Tensor3& t) {
  return json{{"height", t.height()},
              {"width", t.width()},
              {"channels", t.channels()},
              {"values", std::vector<double>(t.values().begin(),
                                             t.values().end())}};
}

inline Tensor3 tensor_from_json(const json& j) {
  Tensor3 t(j.at("height").get<int>(), j.at("width").get<int>(),
            j.at("channels").get<int>());
  const auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != t.size()) {
    throw ValidationError("tensor value count does not match shape");
  }
  std::copy(values.begin(), values.end(), t.values().begin());
  return t;
}

// Sidecar document shipped next to an exported patch image.
inline json patch_sidecar(const PatchMetadata& m) {
  return json{{"variant", to_string(m.config.variant)},
              {"lambda_tv", m.config.lambda_tv},
              {"steps", m.config.steps},
              {"seed", m.seed},
              {"ensemble_ids", m.config.ensemble_ids},
              {"final_loss", m.final_loss},
              {"patch_side", m.config.patch_side}};
}

inline void to_json(json& j, const PatchMetadata& m) {
  j = patch_sidecar(m);
  j["config"] = m.config;
}
inline void from_json(const json& j, PatchMetadata& m) {
  m.config = j.at("config").get<AttackConfig>();
  m.final_loss = j.at("final_loss").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
}

inline void to_json(json& j, const Patch& p) {
  j = json{{"metadata", p.metadata}, {"data", tensor_to_json(p.data)}};
}
inline void from_json(const json& j, Patch& p) {
  p.metadata = j.at("metadata").get<PatchMetadata>();
  p.data = tensor_from_json(j.at("data"));
  p.validate();
}

inline json pairs_to_json(
    const std::vector<std::pair<std::string, double>>& pairs) {
  json arr = json::array();
  for (const auto& [k, v] : pairs) arr.push_back(json{{"id", k}, {"value", v}});
  return arr;
}

inline std::vector<std::pair<std::string, double>> pairs_from_json(
    const json& j) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& e : j) {
    out.emplace_back(e.at("id").get<std::string>(), e.at("value").get<double>());
  }
  return out;
}

inline void to_json(json& j, const TrialRecord& t) {
  j = json{{"subject", t.subject},
           {"method", t.method},
           {"patch_index", t.patch_index},
           {"trial_index", t.trial_index},
           {"true_identity", t.true_identity},
           {"predicted_identity", t.predicted_identity
                                      ? json(*t.predicted_identity)
                                      : json(nullptr)},
           {"detection_confidence", t.detection_confidence},
           {"similarity", pairs_to_json(t.similarity)}};
  if (t.invalid_reason) j["invalid_reason"] = *t.invalid_reason;
}
inline void from_json(const json& j, TrialRecord& t) {
  t.subject = j.value("subject", std::string{});
  t.method = j.value("method", std::string{});
  t.patch_index = j.value("patch_index", 0);
  t.trial_index = j.at("trial_index").get<int>();
  t.true_identity = j.at("true_identity").get<std::string>();
  const auto& pred = j.at("predicted_identity");
  t.predicted_identity =
      pred.is_null() ? std::nullopt
                     : std::optional<std::string>(pred.get<std::string>());
  t.detection_confidence = j.at("detection_confidence").get<double>();
  if (!(t.detection_confidence >= 0.0 &&
        t.detection_confidence <= kConfidenceMax)) {
    throw ValidationError("detection_confidence outside [0,100]");
  }
  t.similarity = j.contains("similarity")
                     ? pairs_from_json(j.at("similarity"))
                     : std::vector<std::pair<std::string, double>>{};
  if (j.contains("invalid_reason")) {
    t.invalid_reason = j.at("invalid_reason").get<std::string>();
  } else {
    t.invalid_reason.reset();
  }
}

inline void to_json(json& j, const EvaluationReport& r) {
  j = json{{"method", r.method},
           {"subject", r.subject},
           {"similarity", pairs_to_json(r.similarity)},
           {"asr", r.asr},
           {"mean_confidence", r.mean_confidence},
           {"trial_count", r.trial_count},
           {"successes", r.successes},
           {"no_face_fraction", r.no_face_fraction},
           {"invalid_count", r.invalid_count}};
}
inline void from_json(const json& j, EvaluationReport& r) {
  r.method = j.at("method").get<std::string>();
  r.subject = j.at("subject").get<std::string>();
  r.similarity = pairs_from_json(j.at("similarity"));
  r.asr = j.at("asr").get<double>();
  r.mean_confidence = j.at("mean_confidence").get<double>();
  r.trial_count = j.at("trial_count").get<int>();
  r.successes = j.value("successes", 0);
  r.no_face_fraction = j.value("no_face_fraction", 0.0);
  r.invalid_count = j.value("invalid_count", 0);
  if (!(r.asr >= 0.0 && r.asr <= 1.0)) {
    throw ValidationError("asr outside [0,1]");
  }
  if (r.trial_count < 1) throw ValidationError("trial_count must be >= 1");
}

}  // namespace dipa
