#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dipa/compositing.hpp"
#include "dipa/embedders.hpp"
#include "dipa/errors.hpp"
#include "dipa/median_pool.hpp"
#include "dipa/png_io.hpp"
#include "dipa/resample.hpp"
#include "dipa/tensor.hpp"
#include "dipa/total_variation.hpp"
#include "dipa/types.hpp"

namespace dipa {

struct LossComponents {
  double total = 0.0;
  double similarity = 0.0;  // mean over placements of the ensemble cosine sum
  double tv = 0.0;          // unweighted TV(p)
};

struct LossWithGrad {
  LossComponents value;
  Tensor3 grad;  // d total / d patch
};

// One entry per evaluation: the initial patch plus every optimizer step.
struct LossTrace {
  std::vector<double> total;
  std::vector<double> similarity;
  std::vector<double> tv;

  std::size_t size() const { return total.size(); }
  void push(const LossComponents& c) {
    total.push_back(c.total);
    similarity.push_back(c.similarity);
    tv.push_back(c.tv);
  }
};

// The dodging objective for one attacker photo: ensemble cosine similarity
// between the patched and the clean image, averaged over sampled placements,
// plus lambda_tv * TV(patch). Clean embeddings are computed once.
class DodgingObjective {
 public:
  DodgingObjective(ImageTensor photo, Ensemble ensemble, AttackConfig cfg,
                   std::optional<ImageTensor> reference = std::nullopt)
      : photo_(std::move(photo)),
        ensemble_(std::move(ensemble)),
        cfg_(std::move(cfg)) {
    if (ensemble_.empty()) {
      throw ValidationError("ensemble must contain at least one embedder");
    }
    cfg_.validate();
    const ImageTensor& target = reference ? *reference : photo_;
    clean_.reserve(ensemble_.size());
    for (const auto& e : ensemble_) clean_.push_back(embed_image(*e, target));
  }

  const AttackConfig& config() const { return cfg_; }
  const ImageTensor& photo() const { return photo_; }
  const Ensemble& ensemble() const { return ensemble_; }
  const std::vector<Embedding>& clean_embeddings() const { return clean_; }

  template <class Rng>
  LossComponents value(const Tensor3& patch, Rng& rng) const {
    return evaluate(patch, rng, false).value;
  }

  template <class Rng>
  LossWithGrad value_and_grad(const Tensor3& patch, Rng& rng) const {
    return evaluate(patch, rng, true);
  }

 private:
  template <class Rng>
  LossWithGrad evaluate(const Tensor3& patch, Rng& rng, bool want_grad) const {
    if (patch.height() != cfg_.patch_side || patch.width() != cfg_.patch_side ||
        patch.channels() != 3) {
      throw DimensionError("patch shape " + shape_string(patch) +
                           " does not match patch_side " +
                           std::to_string(cfg_.patch_side));
    }
    const Tensor3& x = photo_.pixels();
    const PooledPatch pooled =
        median_pool(patch, cfg_.pool_kernel, cfg_.pool_stride);
    const int samples = cfg_.jitter_samples;
    const double weight = 1.0 / samples;

    LossWithGrad out;
    Tensor3 grad_q;
    if (want_grad) {
      grad_q = Tensor3(pooled.values.height(), pooled.values.width(), 3);
    }
    double similarity = 0.0;
    for (int s = 0; s < samples; ++s) {
      const AffineParams params =
          sample_placement(cfg_.placement, x.height(), x.width(), rng);
      const Composite comp = composite_patch(x, pooled.values, params);
      Tensor3 grad_image;
      if (want_grad) grad_image = Tensor3(x.height(), x.width(), 3);
      for (std::size_t i = 0; i < ensemble_.size(); ++i) {
        const Embedder& e = *ensemble_[i];
        const Tensor3 input = preprocess_for_model(
            comp.image, e.spec().input_side, e.spec().intensity);
        if (!want_grad) {
          similarity += weight * cosine_similarity(e.embed(input), clean_[i]);
          continue;
        }
        std::vector<double> g(clean_[i].values());
        for (auto& v : g) v *= weight;
        Embedding emb;
        const Tensor3 grad_input = e.vjp(input, g, &emb);
        similarity += weight * cosine_similarity(emb, clean_[i]);
        grad_image += preprocess_backward(grad_input, x.height(), x.width(),
                                          e.spec().intensity);
      }
      if (want_grad) grad_q += composite_backward(comp, 3, grad_image);
    }

    out.value.similarity = similarity;
    out.value.tv = total_variation(patch);
    out.value.total = similarity;
    if (cfg_.lambda_tv != 0.0) out.value.total += cfg_.lambda_tv * out.value.tv;
    if (want_grad) {
      out.grad = median_pool_backward(pooled, grad_q);
      if (cfg_.lambda_tv != 0.0) {
        Tensor3 tv_grad = total_variation_grad(patch);
        tv_grad *= cfg_.lambda_tv;
        out.grad += tv_grad;
      }
    }
    return out;
  }

  ImageTensor photo_;
  Ensemble ensemble_;
  AttackConfig cfg_;
  std::vector<Embedding> clean_;
};

// Single evaluation of the objective at patch p.
template <class Rng>
LossComponents dipa_loss(const Tensor3& p, const ImageTensor& x,
                         const Ensemble& ensemble, const AttackConfig& cfg,
                         Rng& rng) {
  return DodgingObjective(x, ensemble, cfg).value(p, rng);
}

// Seeded uniform noise in [0.4, 0.6].
inline Tensor3 initial_patch(int side, std::mt19937_64& rng) {
  Tensor3 p(side, side, 3);
  std::uniform_real_distribution<double> dist(0.4, 0.6);
  for (auto& v : p.values()) v = dist(rng);
  return p;
}

// Adaptive-moment state for a tensor of parameters.
class AdamState {
 public:
  AdamState(std::size_t n, double step_size, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8)
      : m_(n, 0.0), v_(n, 0.0), lr_(step_size), b1_(beta1), b2_(beta2),
        eps_(eps) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
};

// Called after each evaluation with (completed steps, total steps). May throw
// to abort the run.
using ProgressFn = std::function<void(int, int)>;

struct OptimizationResult {
  Patch patch;
  LossTrace trace;
};

inline OptimizationResult optimize_patch(const DodgingObjective& objective,
                                         std::uint64_t seed,
                                         const ProgressFn& progress = {}) {
  const AttackConfig& cfg = objective.config();
  std::mt19937_64 rng(seed);
  Tensor3 p = initial_patch(cfg.patch_side, rng);
  AdamState adam(p.size(), cfg.step_size);
  LossTrace trace;

  for (int step = 0;; ++step) {
    const bool last = step == cfg.steps;
    LossWithGrad lg;
    if (last) {
      lg.value = objective.value(p, rng);
    } else {
      lg = objective.value_and_grad(p, rng);
    }
    if (!std::isfinite(lg.value.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << " (similarity="
          << lg.value.similarity << ", tv=" << lg.value.tv
          << ", total=" << lg.value.total << ")";
      throw NumericError(msg.str());
    }
    trace.push(lg.value);
    if (progress) progress(step, cfg.steps);
    if (last) break;
    adam.step(p.values(), lg.grad.values());
    for (auto& v : p.values()) v = std::clamp(v, 0.0, 1.0);
  }

  AttackConfig meta_cfg = cfg;
  meta_cfg.seed = seed;
  Patch patch{std::move(p), PatchMetadata{meta_cfg, trace.total.back(), seed}};
  return {std::move(patch), std::move(trace)};
}

inline OptimizationResult optimize_patch(const ImageTensor& x,
                                         const Ensemble& ensemble,
                                         const AttackConfig& cfg,
                                         const ProgressFn& progress = {}) {
  return optimize_patch(DodgingObjective(x, ensemble, cfg), cfg.seed, progress);
}

// Runs count optimizations with seeds seed, seed+1, ... and returns the
// patches ordered by final loss, lowest first. progress receives
// (completed steps across the set, total steps across the set).
inline std::vector<Patch> generate_patch_set(
    const DodgingObjective& objective, int count,
    const ProgressFn& progress = {}) {
  if (count < 1) throw ValidationError("count must be >= 1");
  const AttackConfig& cfg = objective.config();
  const int total = count * cfg.steps;
  std::vector<Patch> patches;
  patches.reserve(count);
  for (int k = 0; k < count; ++k) {
    ProgressFn inner;
    if (progress) {
      inner = [&, k](int done, int) { progress(k * cfg.steps + done, total); };
    }
    patches.push_back(
        optimize_patch(objective, cfg.seed + static_cast<std::uint64_t>(k), inner)
            .patch);
  }
  std::stable_sort(patches.begin(), patches.end(),
                   [](const Patch& a, const Patch& b) {
                     return a.metadata.final_loss < b.metadata.final_loss;
                   });
  return patches;
}

inline std::vector<Patch> generate_patch_set(const ImageTensor& x,
                                             const Ensemble& ensemble,
                                             const AttackConfig& cfg, int count,
                                             const ProgressFn& progress = {}) {
  return generate_patch_set(DodgingObjective(x, ensemble, cfg), count, progress);
}

// Writes patch_<index>.png (8-bit, native side) and patch_<index>.json.
inline void export_patch(const std::filesystem::path& dir, int index,
                         const Patch& patch) {
  std::filesystem::create_directories(dir);
  const std::string stem = "patch_" + std::to_string(index);
  save_image(dir / (stem + ".png"), patch.data);
  const std::string doc = patch_sidecar(patch.metadata).dump(2) + "\n";
  write_file_bytes(dir / (stem + ".json"),
                   std::vector<std::uint8_t>(doc.begin(), doc.end()));
}

}  // namespace dipa
