#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dipa/embedders.hpp"
#include "dipa/errors.hpp"
#include "dipa/resample.hpp"
#include "dipa/tensor.hpp"

namespace dipa {

inline constexpr double kDefaultDecisionThreshold = 0.3;
inline constexpr const char* kUnknownIdentity = "unknown";

enum class VerifierKind { kLocalGallery, kRemoteApi, kMock };

inline std::string to_string(VerifierKind k) {
  switch (k) {
    case VerifierKind::kLocalGallery: return "local-embedder-gallery";
    case VerifierKind::kRemoteApi: return "remote-api";
    case VerifierKind::kMock: return "mock";
  }
  return "?";
}

inline VerifierKind parse_verifier_kind(const std::string& s) {
  if (s == "local-embedder-gallery") return VerifierKind::kLocalGallery;
  if (s == "remote-api") return VerifierKind::kRemoteApi;
  if (s == "mock") return VerifierKind::kMock;
  throw ValidationError("unknown verifier kind '" + s + "'");
}

struct VerifyResult {
  std::optional<std::string> identity;  // nullopt = no face detected
  double confidence = 0.0;              // face presence, 0..100
  std::optional<double> similarity;
};

// Black-box recognizer: one-to-many search plus pairwise comparison.
class Verifier {
 public:
  virtual ~Verifier() = default;
  virtual const std::string& id() const = 0;
  virtual VerifyResult search(const ImageTensor& probe) const = 0;
  virtual VerifyResult compare(const ImageTensor& probe,
                               const ImageTensor& reference) const = 0;
};

// Face-presence score: Pearson correlation between the 16x16 luminance
// thumbnail of a probe and the mean thumbnail of the enrolled photos, mapped
// to 0..100 (negative correlation scores 0).
class TemplateFaceDetector {
 public:
  static constexpr int kThumbSide = 16;

  void enroll(const ImageTensor& photo) {
    const auto t = thumbnail(photo);
    if (sum_.empty()) sum_.assign(t.size(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) sum_[i] += t[i];
    ++count_;
  }

  bool empty() const { return count_ == 0; }

  double confidence(const ImageTensor& probe) const {
    if (count_ == 0) return 0.0;
    const auto t = thumbnail(probe);
    std::vector<double> mean(sum_);
    for (auto& v : mean) v /= count_;
    const double r = pearson(t, mean);
    return std::clamp(100.0 * r, 0.0, kConfidenceMax);
  }

  static std::vector<double> thumbnail(const ImageTensor& x) {
    const Tensor3 small = resize_bilinear(x.pixels(), kThumbSide, kThumbSide);
    std::vector<double> lum(kThumbSide * kThumbSide);
    for (int y = 0; y < kThumbSide; ++y) {
      for (int xx = 0; xx < kThumbSide; ++xx) {
        lum[y * kThumbSide + xx] = 0.299 * small.at(y, xx, 0) +
                                   0.587 * small.at(y, xx, 1) +
                                   0.114 * small.at(y, xx, 2);
      }
    }
    return lum;
  }

  static double pearson(const std::vector<double>& a,
                        const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return saa == sbb ? 1.0 : 0.0;
    return sab / std::sqrt(saa * sbb);
  }

 private:
  std::vector<double> sum_;
  int count_ = 0;
};

// Verifier backed by a local embedder and an enrolled gallery. Search
// returns the gallery label with the highest cosine similarity, or
// "unknown" when that similarity is below the decision threshold. Probes
// whose face-presence score falls under detection_threshold report no face.
class LocalGalleryVerifier final : public Verifier {
 public:
  LocalGalleryVerifier(std::string id, EmbedderHandle embedder,
                       double threshold = kDefaultDecisionThreshold,
                       double detection_threshold = 10.0)
      : id_(std::move(id)),
        embedder_(std::move(embedder)),
        threshold_(threshold),
        detection_threshold_(detection_threshold) {
    if (!(threshold_ > -1.0 && threshold_ < 1.0)) {
      throw ValidationError("verifier threshold must lie in (-1, 1)");
    }
    if (!embedder_) throw ValidationError("verifier needs an embedder");
  }

  const std::string& id() const override { return id_; }
  double threshold() const { return threshold_; }
  const Embedder& embedder() const { return *embedder_; }

  void enroll(const std::string& label, const ImageTensor& photo) {
    gallery_.emplace_back(label, embed_image(*embedder_, photo));
    detector_.enroll(photo);
  }

  const std::vector<std::pair<std::string, Embedding>>& gallery() const {
    return gallery_;
  }

  double face_confidence(const ImageTensor& probe) const {
    return detector_.confidence(probe);
  }

  VerifyResult search(const ImageTensor& probe) const override {
    if (gallery_.empty()) throw Error("verifier '" + id_ + "' has no gallery");
    VerifyResult r;
    r.confidence = detector_.confidence(probe);
    if (r.confidence < detection_threshold_) return r;
    const Embedding e = embed_image(*embedder_, probe);
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t i = 0; i < gallery_.size(); ++i) {
      const double s = cosine_similarity(e, gallery_[i].second);
      if (s > best_sim) {
        best_sim = s;
        best = i;
      }
    }
    r.similarity = best_sim;
    r.identity = best_sim >= threshold_ ? gallery_[best].first
                                        : std::string(kUnknownIdentity);
    return r;
  }

  // identity is "match" when the similarity clears the threshold.
  VerifyResult compare(const ImageTensor& probe,
                       const ImageTensor& reference) const override {
    VerifyResult r;
    r.confidence = detector_.empty() ? kConfidenceMax
                                     : detector_.confidence(probe);
    const double s = cosine_similarity(embed_image(*embedder_, probe),
                                       embed_image(*embedder_, reference));
    r.similarity = s;
    r.identity = s >= threshold_ ? "match" : "no-match";
    return r;
  }

 private:
  std::string id_;
  EmbedderHandle embedder_;
  double threshold_;
  double detection_threshold_;
  std::vector<std::pair<std::string, Embedding>> gallery_;
  TemplateFaceDetector detector_;
};

// Cosine similarity between clean and patched images as judged by a
// held-out model.
class SimilarityProbe {
 public:
  virtual ~SimilarityProbe() = default;
  virtual const std::string& id() const = 0;
  virtual double similarity(const ImageTensor& clean,
                            const ImageTensor& patched) const = 0;
};

class EmbedderSimilarity final : public SimilarityProbe {
 public:
  explicit EmbedderSimilarity(EmbedderHandle embedder)
      : embedder_(std::move(embedder)) {}
  const std::string& id() const override { return embedder_->id(); }
  double similarity(const ImageTensor& clean,
                    const ImageTensor& patched) const override {
    return cosine_similarity(embed_image(*embedder_, clean),
                             embed_image(*embedder_, patched));
  }

 private:
  EmbedderHandle embedder_;
};

// Similarity obtained through a verifier's compare call.
class VerifierSimilarity final : public SimilarityProbe {
 public:
  explicit VerifierSimilarity(std::shared_ptr<const Verifier> verifier)
      : verifier_(std::move(verifier)) {}
  const std::string& id() const override { return verifier_->id(); }
  double similarity(const ImageTensor& clean,
                    const ImageTensor& patched) const override {
    const VerifyResult r = verifier_->compare(patched, clean);
    if (!r.similarity) {
      throw Error("verifier '" + verifier_->id() + "' returned no similarity");
    }
    return *r.similarity;
  }

 private:
  std::shared_ptr<const Verifier> verifier_;
};

}  // namespace dipa
