#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dipa/errors.hpp"
#include "dipa/resample.hpp"
#include "dipa/tensor.hpp"
#include "dipa/types.hpp"

namespace dipa {

enum class EmbedderKind { kPretrained, kSyntheticTiny, kSyntheticLinear };

inline std::string to_string(EmbedderKind k) {
  switch (k) {
    case EmbedderKind::kPretrained: return "pretrained";
    case EmbedderKind::kSyntheticTiny: return "synthetic-tiny";
    case EmbedderKind::kSyntheticLinear: return "synthetic-linear";
  }
  return "?";
}

inline EmbedderKind parse_embedder_kind(const std::string& s) {
  if (s == "pretrained") return EmbedderKind::kPretrained;
  if (s == "synthetic-tiny") return EmbedderKind::kSyntheticTiny;
  if (s == "synthetic-linear") return EmbedderKind::kSyntheticLinear;
  throw ValidationError("unknown embedder kind '" + s + "'");
}

struct EmbedderSpec {
  std::string id;
  int input_side = 112;
  int embedding_dim = 64;
  EmbedderKind kind = EmbedderKind::kSyntheticTiny;
  // Seed (decimal string) for synthetic kinds, weights file path otherwise.
  std::string weights_ref = "0";
  IntensityMap intensity{};

  void validate() const {
    if (id.empty()) throw ValidationError("embedder id must not be empty");
    if (input_side < 8) {
      throw ValidationError("embedder '" + id + "': input_side must be >= 8");
    }
    if (embedding_dim < 2) {
      throw ValidationError("embedder '" + id +
                            "': embedding_dim must be >= 2");
    }
  }

  std::uint64_t seed() const {
    try {
      return std::stoull(weights_ref);
    } catch (const std::exception&) {
      throw ValidationError("embedder '" + id + "': weights_ref '" +
                            weights_ref + "' is not a seed");
    }
  }

  friend bool operator==(const EmbedderSpec&, const EmbedderSpec&) = default;
};

inline void to_json(json& j, const EmbedderSpec& s) {
  j = json{{"id", s.id},
           {"input_side", s.input_side},
           {"embedding_dim", s.embedding_dim},
           {"kind", to_string(s.kind)},
           {"weights_ref", s.weights_ref}};
}
inline void from_json(const json& j, EmbedderSpec& s) {
  s.id = j.at("id").get<std::string>();
  s.input_side = j.value("input_side", 112);
  s.embedding_dim = j.value("embedding_dim", 64);
  s.kind = parse_embedder_kind(j.value("kind", std::string("synthetic-tiny")));
  const auto& ref = j.contains("weights_ref") ? j.at("weights_ref") : json("0");
  s.weights_ref = ref.is_string() ? ref.get<std::string>() : ref.dump();
  s.validate();
}

// Receives the unnormalized forward output and returns the gradient of the
// scalar objective with respect to it.
using RawGradientFn =
    std::function<std::vector<double>(std::span<const double> raw)>;

// A face-embedding function from a preprocessed input_side x input_side x 3
// array to a unit-norm vector. Implementations are immutable after
// construction and safe to call concurrently.
class Embedder {
 public:
  explicit Embedder(EmbedderSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
  }
  virtual ~Embedder() = default;

  const EmbedderSpec& spec() const { return spec_; }
  const std::string& id() const { return spec_.id; }

  Embedding embed(const Tensor3& input) const {
    check_input(input);
    return Embedding::normalized(forward(input));
  }

  // Vector-Jacobian product of the normalized embedding: returns
  // d<grad_embedding, embed(input)>/d input. Optionally reports the embedding
  // computed on the way.
  Tensor3 vjp(const Tensor3& input, std::span<const double> grad_embedding,
              Embedding* embedding_out = nullptr) const {
    check_input(input);
    if (grad_embedding.size() != static_cast<std::size_t>(spec_.embedding_dim)) {
      throw DimensionError("vjp: gradient dimension mismatch");
    }
    return backward(input, [&](std::span<const double> raw) {
      double n2 = 0.0;
      for (double v : raw) n2 += v * v;
      const double norm = std::sqrt(n2);
      if (!(norm > 0.0)) throw NumericError("zero embedding norm");
      std::vector<double> e(raw.begin(), raw.end());
      double dot = 0.0;
      for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] /= norm;
        dot += e[i] * grad_embedding[i];
      }
      std::vector<double> g(e.size());
      for (std::size_t i = 0; i < e.size(); ++i) {
        g[i] = (grad_embedding[i] - e[i] * dot) / norm;
      }
      if (embedding_out) *embedding_out = Embedding::normalized(e);
      return g;
    });
  }

  // Unnormalized network output.
  virtual std::vector<double> forward(const Tensor3& input) const = 0;

  // Runs forward, asks grad_of_raw for the output gradient and backpropagates
  // it to the input.
  virtual Tensor3 backward(const Tensor3& input,
                           const RawGradientFn& grad_of_raw) const = 0;

 protected:
  void check_input(const Tensor3& input) const {
    if (input.height() != spec_.input_side ||
        input.width() != spec_.input_side || input.channels() != 3) {
      throw DimensionError("embedder '" + spec_.id + "' expects " +
                           std::to_string(spec_.input_side) + "x" +
                           std::to_string(spec_.input_side) + "x3 input, got " +
                           shape_string(input));
    }
  }

 private:
  EmbedderSpec spec_;
};

using EmbedderHandle = std::shared_ptr<const Embedder>;

// raw = W * flatten(input) with seeded Gaussian W. Small enough to admit a
// closed-form gradient.
class LinearEmbedder final : public Embedder {
 public:
  explicit LinearEmbedder(EmbedderSpec spec) : Embedder(std::move(spec)) {
    const int n = 3 * this->spec().input_side * this->spec().input_side;
    weights_.resize(static_cast<std::size_t>(n) * this->spec().embedding_dim);
    std::mt19937_64 rng(this->spec().seed());
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(n));
    for (auto& w : weights_) w = dist(rng);
  }

  // Row-major embedding_dim x (input_side^2 * 3), HWC flattening.
  const std::vector<double>& weights() const { return weights_; }

  std::vector<double> forward(const Tensor3& input) const override {
    const std::size_t n = input.size();
    std::vector<double> out(spec().embedding_dim, 0.0);
    for (std::size_t r = 0; r < out.size(); ++r) {
      const double* w = weights_.data() + r * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += w[i] * input[i];
      out[r] = acc;
    }
    return out;
  }

  Tensor3 backward(const Tensor3& input,
                   const RawGradientFn& grad_of_raw) const override {
    const auto raw = forward(input);
    const auto g = grad_of_raw(raw);
    Tensor3 grad(input.height(), input.width(), input.channels());
    const std::size_t n = input.size();
    for (std::size_t r = 0; r < g.size(); ++r) {
      const double* w = weights_.data() + r * n;
      for (std::size_t i = 0; i < n; ++i) grad[i] += g[r] * w[i];
    }
    return grad;
  }

 private:
  std::vector<double> weights_;
};

// 3x3 convolution, zero padding 1.
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<double> weights;  // [out][in][3][3]
  std::vector<double> bias;     // [out]

  double w(int o, int i, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * in_channels + i) * 3 + ky) * 3 + kx];
  }
};

// Channel-major activation buffer.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> v;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w),
        v(static_cast<std::size_t>(c) * h * w, 0.0) {}
  double& at(int c, int y, int x) {
    return v[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return v[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

inline int conv_output_side(int side, int stride) {
  return (side + 2 - 3) / stride + 1;
}

inline FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& in) {
  const int oh = conv_output_side(in.height, layer.stride);
  const int ow = conv_output_side(in.width, layer.stride);
  FeatureMap out(layer.out_channels, oh, ow);
  for (int o = 0; o < layer.out_channels; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) out.at(o, y, x) = layer.bias[o];
    }
    for (int i = 0; i < layer.in_channels; ++i) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = layer.w(o, i, ky, kx);
          for (int y = 0; y < oh; ++y) {
            const int iy = y * layer.stride + ky - 1;
            if (iy < 0 || iy >= in.height) continue;
            for (int x = 0; x < ow; ++x) {
              const int ix = x * layer.stride + kx - 1;
              if (ix < 0 || ix >= in.width) continue;
              out.at(o, y, x) += wv * in.at(i, iy, ix);
            }
          }
        }
      }
    }
  }
  return out;
}

inline FeatureMap conv_backward_input(const ConvLayer& layer,
                                      const FeatureMap& grad_out, int in_h,
                                      int in_w) {
  FeatureMap grad_in(layer.in_channels, in_h, in_w);
  for (int o = 0; o < layer.out_channels; ++o) {
    for (int i = 0; i < layer.in_channels; ++i) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = layer.w(o, i, ky, kx);
          for (int y = 0; y < grad_out.height; ++y) {
            const int iy = y * layer.stride + ky - 1;
            if (iy < 0 || iy >= in_h) continue;
            for (int x = 0; x < grad_out.width; ++x) {
              const int ix = x * layer.stride + kx - 1;
              if (ix < 0 || ix >= in_w) continue;
              grad_in.at(i, iy, ix) += wv * grad_out.at(o, y, x);
            }
          }
        }
      }
    }
  }
  return grad_in;
}

// Smooth activation: x * sigmoid(x).
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

// Small convolutional embedder: a stack of 3x3 conv + SiLU layers, then a
// dense projection of the flattened last feature map.
class ConvEmbedder final : public Embedder {
 public:
  // Default stack for synthetic-tiny networks: channels 3->8->16->16->16,
  // every layer stride 2.
  static std::vector<std::pair<int, int>> default_layout() {
    return {{8, 2}, {16, 2}, {16, 2}, {16, 2}};
  }

  // Seeded He-normal weights, small Gaussian biases.
  static ConvEmbedder synthetic(EmbedderSpec spec) {
    std::mt19937_64 rng(spec.seed());
    std::vector<ConvLayer> layers;
    int in_c = 3;
    int side = spec.input_side;
    for (auto [out_c, stride] : default_layout()) {
      ConvLayer l{in_c, out_c, stride, {}, {}};
      l.weights.resize(static_cast<std::size_t>(out_c) * in_c * 9);
      l.bias.resize(out_c);
      std::normal_distribution<double> wd(0.0, std::sqrt(2.0 / (in_c * 9)));
      std::normal_distribution<double> bd(0.0, 0.1);
      for (auto& w : l.weights) w = wd(rng);
      for (auto& b : l.bias) b = bd(rng);
      layers.push_back(std::move(l));
      in_c = out_c;
      side = conv_output_side(side, stride);
    }
    const int flat = in_c * side * side;
    std::vector<double> dense(static_cast<std::size_t>(spec.embedding_dim) * flat);
    std::vector<double> dense_bias(spec.embedding_dim);
    std::normal_distribution<double> dd(0.0, std::sqrt(1.0 / flat));
    std::normal_distribution<double> bd(0.0, 0.01);
    for (auto& w : dense) w = dd(rng);
    for (auto& b : dense_bias) b = bd(rng);
    return ConvEmbedder(std::move(spec), std::move(layers), std::move(dense),
                        std::move(dense_bias));
  }

  static ConvEmbedder from_weights_file(EmbedderSpec spec,
                                        const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
      throw NotFoundError("embedder '" + spec.id + "': missing weights file " +
                          path.string());
    }
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ValidationError("embedder '" + spec.id +
                            "': malformed weights file: " + e.what());
    }
    std::vector<ConvLayer> layers;
    for (const auto& lj : j.at("layers")) {
      ConvLayer l;
      l.in_channels = lj.at("in_channels").get<int>();
      l.out_channels = lj.at("out_channels").get<int>();
      l.stride = lj.at("stride").get<int>();
      l.weights = lj.at("weights").get<std::vector<double>>();
      l.bias = lj.at("bias").get<std::vector<double>>();
      layers.push_back(std::move(l));
    }
    return ConvEmbedder(std::move(spec), std::move(layers),
                        j.at("dense").get<std::vector<double>>(),
                        j.at("dense_bias").get<std::vector<double>>());
  }

  ConvEmbedder(EmbedderSpec spec, std::vector<ConvLayer> layers,
               std::vector<double> dense, std::vector<double> dense_bias)
      : Embedder(std::move(spec)),
        layers_(std::move(layers)),
        dense_(std::move(dense)),
        dense_bias_(std::move(dense_bias)) {
    int in_c = 3;
    int side = this->spec().input_side;
    for (const auto& l : layers_) {
      if (l.in_channels != in_c ||
          l.weights.size() != static_cast<std::size_t>(l.out_channels) * in_c * 9 ||
          l.bias.size() != static_cast<std::size_t>(l.out_channels) ||
          l.stride < 1) {
        throw ValidationError("embedder '" + id() + "': inconsistent conv layer");
      }
      in_c = l.out_channels;
      side = conv_output_side(side, l.stride);
    }
    flat_size_ = in_c * side * side;
    if (dense_.size() !=
            static_cast<std::size_t>(flat_size_) * this->spec().embedding_dim ||
        dense_bias_.size() != static_cast<std::size_t>(this->spec().embedding_dim)) {
      throw ValidationError("embedder '" + id() + "': inconsistent dense layer");
    }
  }

  const std::vector<ConvLayer>& layers() const { return layers_; }
  const std::vector<double>& dense() const { return dense_; }
  const std::vector<double>& dense_bias() const { return dense_bias_; }

  json weights_json() const {
    json layers = json::array();
    for (const auto& l : layers_) {
      layers.push_back(json{{"in_channels", l.in_channels},
                            {"out_channels", l.out_channels},
                            {"stride", l.stride},
                            {"weights", l.weights},
                            {"bias", l.bias}});
    }
    return json{{"layers", layers}, {"dense", dense_},
                {"dense_bias", dense_bias_}};
  }

  std::vector<double> forward(const Tensor3& input) const override {
    std::vector<FeatureMap> pre;
    FeatureMap last = run(input, pre);
    return project(last);
  }

  Tensor3 backward(const Tensor3& input,
                   const RawGradientFn& grad_of_raw) const override {
    std::vector<FeatureMap> pre;
    FeatureMap last = run(input, pre);
    const auto raw = project(last);
    const auto g = grad_of_raw(raw);

    FeatureMap grad(last.channels, last.height, last.width);
    for (std::size_t r = 0; r < g.size(); ++r) {
      if (g[r] == 0.0) continue;
      const double* w = dense_.data() + r * flat_size_;
      for (int k = 0; k < flat_size_; ++k) grad.v[k] += g[r] * w[k];
    }
    for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
      const FeatureMap& z = pre[li];
      for (std::size_t k = 0; k < grad.v.size(); ++k) {
        grad.v[k] *= silu_grad(z.v[k]);
      }
      const int in_h = li == 0 ? input.height() : pre[li - 1].height;
      const int in_w = li == 0 ? input.width() : pre[li - 1].width;
      grad = conv_backward_input(layers_[li], grad, in_h, in_w);
    }
    Tensor3 out(input.height(), input.width(), input.channels());
    for (int y = 0; y < input.height(); ++y) {
      for (int x = 0; x < input.width(); ++x) {
        for (int c = 0; c < input.channels(); ++c) {
          out.at(y, x, c) = grad.at(c, y, x);
        }
      }
    }
    return out;
  }

 private:
  // Returns the last activation; fills pre with every layer's pre-activation.
  FeatureMap run(const Tensor3& input, std::vector<FeatureMap>& pre) const {
    FeatureMap a(input.channels(), input.height(), input.width());
    for (int y = 0; y < input.height(); ++y) {
      for (int x = 0; x < input.width(); ++x) {
        for (int c = 0; c < input.channels(); ++c) {
          a.at(c, y, x) = input.at(y, x, c);
        }
      }
    }
    pre.clear();
    pre.reserve(layers_.size());
    for (const auto& l : layers_) {
      FeatureMap z = conv_forward(l, a);
      a = z;
      for (auto& v : a.v) v = silu(v);
      pre.push_back(std::move(z));
    }
    return a;
  }

  std::vector<double> project(const FeatureMap& last) const {
    std::vector<double> out(dense_bias_);
    for (std::size_t r = 0; r < out.size(); ++r) {
      const double* w = dense_.data() + r * flat_size_;
      double acc = 0.0;
      for (int k = 0; k < flat_size_; ++k) acc += w[k] * last.v[k];
      out[r] += acc;
    }
    return out;
  }

  std::vector<ConvLayer> layers_;
  std::vector<double> dense_;
  std::vector<double> dense_bias_;
  int flat_size_ = 0;
};

// Dot product of unit vectors, clamped to [-1, 1].
inline double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw DimensionError("cosine_similarity: dimension mismatch " +
                         std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values()[i] * b.values()[i];
  }
  return std::clamp(dot, -1.0, 1.0);
}

// Embeds an unprocessed image with the embedder's own preprocessing.
inline Embedding embed_image(const Embedder& e, const ImageTensor& x) {
  return e.embed(
      preprocess_for_model(x, e.spec().input_side, e.spec().intensity));
}

// Data-driven id -> spec mapping. Loaded embedders are cached, so the same id
// always yields the same handle.
class EmbedderRegistry {
 public:
  EmbedderRegistry() = default;

  // Built-in synthetic-tiny surrogates tiny-a .. tiny-d (seeds 1..4).
  static EmbedderRegistry builtin(int input_side = 64) {
    EmbedderRegistry r;
    const char* ids[] = {"tiny-a", "tiny-b", "tiny-c", "tiny-d"};
    for (int i = 0; i < 4; ++i) {
      r.add(EmbedderSpec{ids[i], input_side, 64, EmbedderKind::kSyntheticTiny,
                         std::to_string(i + 1), {}});
    }
    return r;
  }

  // Manifest: either a JSON array of EmbedderSpec records or an object with an
  // "embedders" array. Relative weight paths resolve against base_dir.
  static EmbedderRegistry from_manifest(const json& manifest,
                                        const std::filesystem::path& base_dir = {}) {
    const json& list =
        manifest.is_array() ? manifest : manifest.at("embedders");
    EmbedderRegistry r;
    for (const auto& item : list) {
      EmbedderSpec spec = item.get<EmbedderSpec>();
      if (spec.kind == EmbedderKind::kPretrained) {
        std::filesystem::path p(spec.weights_ref);
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        spec.weights_ref = p.string();
      }
      r.add(std::move(spec));
    }
    return r;
  }

  static EmbedderRegistry from_manifest_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open manifest " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ValidationError("malformed manifest " + path.string() + ": " +
                            e.what());
    }
    return from_manifest(j, path.parent_path());
  }

  void add(EmbedderSpec spec) {
    spec.validate();
    std::lock_guard lock(*mutex_);
    const std::string id = spec.id;
    if (specs_.contains(id)) {
      throw ValidationError("duplicate embedder id '" + id + "'");
    }
    order_.push_back(id);
    specs_.emplace(id, std::move(spec));
  }

  bool contains(const std::string& id) const {
    std::lock_guard lock(*mutex_);
    return specs_.contains(id);
  }
  const std::vector<std::string>& ids() const { return order_; }

  const EmbedderSpec& spec(const std::string& id) const {
    std::lock_guard lock(*mutex_);
    auto it = specs_.find(id);
    if (it == specs_.end()) {
      throw NotFoundError("unknown embedder id '" + id + "'");
    }
    return it->second;
  }

  EmbedderHandle load(const std::string& id) const {
    const EmbedderSpec& s = spec(id);
    std::lock_guard lock(*mutex_);
    auto it = cache_->find(id);
    if (it != cache_->end()) return it->second;
    EmbedderHandle h;
    switch (s.kind) {
      case EmbedderKind::kSyntheticTiny:
        h = std::make_shared<ConvEmbedder>(ConvEmbedder::synthetic(s));
        break;
      case EmbedderKind::kSyntheticLinear:
        h = std::make_shared<LinearEmbedder>(s);
        break;
      case EmbedderKind::kPretrained:
        h = std::make_shared<ConvEmbedder>(
            ConvEmbedder::from_weights_file(s, s.weights_ref));
        break;
    }
    cache_->emplace(id, h);
    return h;
  }

  json manifest() const {
    json arr = json::array();
    for (const auto& id : order_) arr.push_back(specs_.at(id));
    return arr;
  }

 private:
  std::map<std::string, EmbedderSpec> specs_;
  std::vector<std::string> order_;
  std::shared_ptr<std::map<std::string, EmbedderHandle>> cache_ =
      std::make_shared<std::map<std::string, EmbedderHandle>>();
  std::shared_ptr<std::mutex> mutex_ = std::make_shared<std::mutex>();
};

using Ensemble = std::vector<EmbedderHandle>;

// Resolves ids in order; duplicates yield the same handle twice.
inline Ensemble load_ensemble(const std::vector<std::string>& ids,
                              const EmbedderRegistry& registry) {
  if (ids.empty()) {
    throw ValidationError("ensemble must contain at least one embedder");
  }
  Ensemble out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(registry.load(id));
  return out;
}

}  // namespace dipa
