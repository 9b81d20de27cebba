#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dipa/camera_channel.hpp"
#include "dipa/compositing.hpp"
#include "dipa/embedders.hpp"
#include "dipa/errors.hpp"
#include "dipa/median_pool.hpp"
#include "dipa/metrics.hpp"
#include "dipa/optimizer.hpp"
#include "dipa/png_io.hpp"
#include "dipa/remote.hpp"
#include "dipa/types.hpp"
#include "dipa/verifier.hpp"

namespace dipa {

struct SubjectEntry {
  std::string label;
  ImageTensor photo;
  std::string photo_ref;
};

struct MethodEntry {
  std::string label;
  AttackConfig config;
};

struct VerifierEntry {
  std::string id;
  VerifierKind kind = VerifierKind::kLocalGallery;
  std::string embedder;  // local-embedder-gallery and mock
  double threshold = kDefaultDecisionThreshold;
  RemoteClientConfig remote;  // remote-api
};

struct BenchmarkPlan {
  std::vector<SubjectEntry> subjects;
  std::vector<MethodEntry> methods;
  int patches_per_subject = 5;
  int trials_per_patch = 5;
  CameraChannelConfig channel;
  std::vector<VerifierEntry> verifiers;
  // Verifier (or embedder) ids reported as Sim. columns.
  std::vector<std::string> similarity_verifiers;
  // Verifier id standing in for the camera: drives ASR and Mean Conf.
  std::string camera_verifier;
  std::uint64_t seed = 0;

  const VerifierEntry* find_verifier(const std::string& id) const {
    for (const auto& v : verifiers) {
      if (v.id == id) return &v;
    }
    return nullptr;
  }

  void validate(const EmbedderRegistry& registry) const {
    if (subjects.empty()) throw ValidationError("plan has no subjects");
    if (methods.empty()) throw ValidationError("plan has no methods");
    if (patches_per_subject < 1 || trials_per_patch < 1) {
      throw ValidationError("patches_per_subject and trials_per_patch must be >= 1");
    }
    channel.validate();
    for (const auto& m : methods) {
      m.config.validate();
      for (const auto& id : m.config.ensemble_ids) {
        if (!registry.contains(id)) {
          throw ValidationError("method '" + m.label +
                                "' references unknown embedder id '" + id + "'");
        }
      }
    }
    for (const auto& v : verifiers) {
      if (v.kind != VerifierKind::kRemoteApi && !registry.contains(v.embedder)) {
        throw ValidationError("verifier '" + v.id +
                              "' references unknown embedder id '" + v.embedder +
                              "'");
      }
      if (!(v.threshold > -1.0 && v.threshold < 1.0)) {
        throw ValidationError("verifier '" + v.id +
                              "': threshold must lie in (-1, 1)");
      }
    }
    if (!find_verifier(camera_verifier)) {
      throw ValidationError("unknown verifier id '" + camera_verifier + "'");
    }
    for (const auto& id : similarity_verifiers) {
      if (find_verifier(id)) continue;
      if (!registry.contains(id)) {
        throw ValidationError("unknown verifier id '" + id + "'");
      }
      for (const auto& m : methods) {
        const auto& ens = m.config.ensemble_ids;
        if (std::find(ens.begin(), ens.end(), id) != ens.end()) {
          throw ValidationError("similarity verifier '" + id +
                                "' is part of the attack ensemble of method '" +
                                m.label + "'");
        }
      }
    }
  }
};

inline void to_json(json& j, const VerifierEntry& v) {
  j = json{{"id", v.id}, {"kind", to_string(v.kind)}, {"threshold", v.threshold}};
  if (v.kind == VerifierKind::kRemoteApi) {
    j["remote"] = v.remote;
  } else {
    j["embedder"] = v.embedder;
  }
}
inline void from_json(const json& j, VerifierEntry& v) {
  v.id = j.at("id").get<std::string>();
  v.kind = parse_verifier_kind(
      j.value("kind", std::string("local-embedder-gallery")));
  v.embedder = j.value("embedder", std::string{});
  v.threshold = j.value("threshold", kDefaultDecisionThreshold);
  if (j.contains("remote")) v.remote = j.at("remote").get<RemoteClientConfig>();
}

// Loads a plan document. Subject photos are decoded up front (relative paths
// resolve against base_dir), so a bad photo fails before any optimization.
inline BenchmarkPlan plan_from_json(const json& j,
                                    const std::filesystem::path& base_dir = {}) {
  BenchmarkPlan plan;
  try {
    for (const auto& s : j.at("subjects")) {
      SubjectEntry e;
      e.label = s.at("label").get<std::string>();
      e.photo_ref = s.at("photo").get<std::string>();
      std::filesystem::path p(e.photo_ref);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      try {
        e.photo = load_image(p);
      } catch (const Error& err) {
        throw ValidationError("subject '" + e.label + "': " + err.what());
      }
      plan.subjects.push_back(std::move(e));
    }
    for (const auto& m : j.at("methods")) {
      plan.methods.push_back(
          {m.at("label").get<std::string>(), m.at("config").get<AttackConfig>()});
    }
    plan.patches_per_subject = j.value("patches_per_subject", 5);
    plan.trials_per_patch = j.value("trials_per_patch", 5);
    if (j.contains("channel")) {
      plan.channel = j.at("channel").get<CameraChannelConfig>();
    }
    if (j.contains("verifiers")) {
      plan.verifiers = j.at("verifiers").get<std::vector<VerifierEntry>>();
    }
    plan.similarity_verifiers =
        j.value("similarity_verifiers", std::vector<std::string>{});
    plan.camera_verifier = j.at("camera_verifier").get<std::string>();
    plan.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid plan: ") + e.what());
  }
  return plan;
}

inline BenchmarkPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open plan " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("plan " + path.string() + " is not valid JSON: " +
                          e.what());
  }
  return plan_from_json(j, path.parent_path());
}

// One simulated physical trial: composite the displayed patch at a jittered
// placement, push the frame through the camera channel and ask the verifier
// who it is. Draw order from rng: four placement uniforms, then the channel
// noise seed.
template <class Rng>
TrialRecord run_trial(const ImageTensor& photo, const std::string& true_identity,
                      const std::optional<Tensor3>& displayed,
                      const Placement& placement,
                      const CameraChannelConfig& channel,
                      const Verifier& verifier, Rng& rng, int trial_index = 0) {
  TrialRecord rec;
  rec.true_identity = true_identity;
  rec.trial_index = trial_index;
  const AffineParams params =
      sample_placement(placement, photo.height(), photo.width(), rng);
  CameraChannelConfig ch = channel;
  ch.seed = rng();
  try {
    const ImageTensor scene =
        displayed ? apply_patch(photo, *displayed, params) : photo;
    const ImageTensor captured = simulate_camera_channel(scene, ch);
    const VerifyResult r = verifier.search(captured);
    rec.predicted_identity = r.identity;
    rec.detection_confidence = std::clamp(r.confidence, 0.0, kConfidenceMax);
  } catch (const std::exception& e) {
    rec.invalid_reason = e.what();
  }
  return rec;
}

// What the screen shows for a generated patch, as the models see it: the
// 8-bit export, median pooled.
inline Tensor3 displayed_patch(const Patch& patch) {
  Tensor3 q = patch.data;
  for (auto& v : q.values()) v = quantize8(v) / 255.0;
  const auto& cfg = patch.metadata.config;
  return median_pool(q, cfg.pool_kernel, cfg.pool_stride).values;
}

struct BenchmarkResult {
  std::vector<TrialRecord> trials;
  std::vector<EvaluationReport> reports;
};

using LogFn = std::function<void(const std::string&)>;

// Owns every verifier a plan needs, including mock servers.
class VerifierSet {
 public:
  VerifierSet(const BenchmarkPlan& plan, const EmbedderRegistry& registry) {
    for (const auto& v : plan.verifiers) {
      switch (v.kind) {
        case VerifierKind::kLocalGallery: {
          auto local = std::make_shared<LocalGalleryVerifier>(
              v.id, registry.load(v.embedder), v.threshold);
          for (const auto& s : plan.subjects) local->enroll(s.label, s.photo);
          verifiers_[v.id] = local;
          break;
        }
        case VerifierKind::kMock: {
          auto local = std::make_shared<LocalGalleryVerifier>(
              v.id, registry.load(v.embedder), v.threshold);
          for (const auto& s : plan.subjects) local->enroll(s.label, s.photo);
          auto server = std::make_unique<MockVerifierServer>(local);
          RemoteClientConfig cfg;
          cfg.port = server->start();
          servers_.push_back(std::move(server));
          verifiers_[v.id] = std::make_shared<RemoteVerifier>(v.id, cfg);
          break;
        }
        case VerifierKind::kRemoteApi:
          verifiers_[v.id] = std::make_shared<RemoteVerifier>(v.id, v.remote);
          break;
      }
    }
    for (const auto& id : plan.similarity_verifiers) {
      auto it = verifiers_.find(id);
      if (it != verifiers_.end()) {
        probes_.push_back(std::make_shared<VerifierSimilarity>(it->second));
      } else {
        probes_.push_back(std::make_shared<EmbedderSimilarity>(registry.load(id)));
      }
    }
  }

  const Verifier& get(const std::string& id) const { return *verifiers_.at(id); }
  const std::vector<std::shared_ptr<const SimilarityProbe>>& probes() const {
    return probes_;
  }

 private:
  std::map<std::string, std::shared_ptr<const Verifier>> verifiers_;
  std::vector<std::shared_ptr<const SimilarityProbe>> probes_;
  std::vector<std::unique_ptr<MockVerifierServer>> servers_;
};

inline std::uint64_t method_seed(const BenchmarkPlan& plan, std::size_t subject,
                                 const AttackConfig& cfg) {
  return cfg.seed + plan.seed * 1000003ULL + subject * 1000ULL;
}

// Runs the full protocol: for every (subject, method) generate
// patches_per_subject patches and run trials_per_patch trials with each.
inline BenchmarkResult run_benchmark(const BenchmarkPlan& plan,
                                     const EmbedderRegistry& registry,
                                     const LogFn& log = {}) {
  plan.validate(registry);
  VerifierSet verifiers(plan, registry);
  const Verifier& camera = verifiers.get(plan.camera_verifier);

  BenchmarkResult result;
  for (std::size_t s = 0; s < plan.subjects.size(); ++s) {
    const SubjectEntry& subject = plan.subjects[s];
    for (std::size_t m = 0; m < plan.methods.size(); ++m) {
      const MethodEntry& method = plan.methods[m];
      AttackConfig cfg = method.config;
      cfg.seed = method_seed(plan, s, method.config);
      if (log) {
        log("subject " + subject.label + ", method " + method.label +
            ": generating " + std::to_string(plan.patches_per_subject) +
            " patches");
      }
      const Ensemble ensemble = load_ensemble(cfg.ensemble_ids, registry);
      const auto patches = generate_patch_set(subject.photo, ensemble, cfg,
                                              plan.patches_per_subject);
      for (std::size_t k = 0; k < patches.size(); ++k) {
        const Tensor3 shown = displayed_patch(patches[k]);
        const ImageTensor patched =
            apply_patch(subject.photo, shown, cfg.placement);
        std::vector<std::pair<std::string, double>> sims;
        for (const auto& probe : verifiers.probes()) {
          sims.emplace_back(probe->id(),
                            probe->similarity(subject.photo, patched));
        }
        for (int t = 0; t < plan.trials_per_patch; ++t) {
          std::seed_seq seq{static_cast<std::uint32_t>(plan.seed),
                            static_cast<std::uint32_t>(plan.seed >> 32),
                            static_cast<std::uint32_t>(s),
                            static_cast<std::uint32_t>(m),
                            static_cast<std::uint32_t>(k),
                            static_cast<std::uint32_t>(t)};
          std::mt19937_64 rng(seq);
          TrialRecord rec = run_trial(subject.photo, subject.label, shown,
                                      cfg.placement, plan.channel, camera, rng, t);
          rec.subject = subject.label;
          rec.method = method.label;
          rec.patch_index = static_cast<int>(k);
          rec.similarity = sims;
          if (!rec.valid() && log) {
            log("trial excluded (subject " + subject.label + ", patch " +
                std::to_string(k) + ", trial " + std::to_string(t) +
                "): " + *rec.invalid_reason);
          }
          result.trials.push_back(std::move(rec));
        }
      }
    }
  }
  result.reports = aggregate_by_subject_and_method(result.trials);
  return result;
}

}  // namespace dipa
