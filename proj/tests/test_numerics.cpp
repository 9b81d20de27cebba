#include <gtest/gtest.h>

#include <numeric>

#include "dipa/dipa.hpp"
#include "oracles.hpp"

using namespace dipa;

// ---- median pooling ----------------------------------------------------------

TEST(MedianPool, ConstantStaysConstant) {
  const Tensor3 p(9, 9, 3, 0.5);
  for (int k : {1, 3, 5}) {
    for (int s : {1, 2, 3}) {
      const auto out = median_pool(p, k, s);
      for (double v : out.values.values()) EXPECT_EQ(v, 0.5);
    }
  }
}

TEST(MedianPool, KernelOneIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor3 p = oracle::random_tensor(6, 5, 3, rng);
  EXPECT_EQ(median_pool(p, 1, 1).values, p);
}

TEST(MedianPool, ShuffledWindowGivesMiddleValue) {
  Tensor3 p(3, 3, 1);
  const double vals[] = {0.7, 0.1, 0.9, 0.3, 0.5, 0.2, 0.8, 0.4, 0.6};
  for (int i = 0; i < 9; ++i) p[i] = vals[i];
  const auto out = median_pool(p, 3, 3);
  ASSERT_EQ(out.values.size(), 1u);
  EXPECT_EQ(out.values[0], 0.5);
  EXPECT_EQ(out.source[0], 4u);
}

TEST(MedianPool, MatchesSortOracle) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> side(1, 16);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = side(rng), w = side(rng);
    const Tensor3 p = oracle::random_tensor(h, w, 1 + trial % 3, rng);
    for (int k = 1; k <= std::min(h, w); k += 2) {
      for (int s = 1; s <= k; ++s) {
        ASSERT_EQ(median_pool(p, k, s).values, oracle::median_pool(p, k, s));
      }
    }
  }
}

TEST(MedianPool, RejectsBadArguments) {
  const Tensor3 p(4, 4, 3);
  EXPECT_THROW(median_pool(p, 2, 1), ValidationError);
  EXPECT_THROW(median_pool(p, 3, 0), ValidationError);
  EXPECT_THROW(median_pool(p, 5, 1), DimensionError);
}

TEST(MedianPool, TiesRouteToFirstWindowElement) {
  Tensor3 p(3, 3, 1, 0.5);
  const auto out = median_pool(p, 3, 1);
  EXPECT_EQ(out.source[0], 0u);
  const Tensor3 g = median_pool_backward(out, Tensor3(1, 1, 1, 2.0));
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(std::accumulate(g.values().begin(), g.values().end(), 0.0), 2.0);
}

TEST(MedianPool, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Tensor3 p = oracle::random_tensor(7, 7, 3, rng);
  const Tensor3 w = oracle::random_tensor(3, 3, 3, rng, -1, 1);
  auto f = [&](const Tensor3& x) {
    const auto q = median_pool(x, 3, 2).values;
    double s = 0;
    for (std::size_t i = 0; i < q.size(); ++i) s += w[i] * q[i];
    return s;
  };
  const auto pooled = median_pool(p, 3, 2);
  const Tensor3 analytic = median_pool_backward(pooled, w);
  const Tensor3 numeric = oracle::numeric_grad(f, p);
  // Skip coordinates whose +-h probe flips a window's median element.
  int checked = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor3 up = p, down = p;
    up[i] += 1e-4;
    down[i] -= 1e-4;
    if (median_pool(up, 3, 2).source != pooled.source ||
        median_pool(down, 3, 2).source != pooled.source) {
      continue;
    }
    EXPECT_NEAR(analytic[i], numeric[i], 1e-6) << "index " << i;
    ++checked;
  }
  EXPECT_GT(checked, static_cast<int>(p.size()) - 10);
}

// ---- total variation -----------------------------------------------------------

TEST(TotalVariation, HandExample) {
  Tensor3 p(2, 2, 1);
  p.at(0, 1, 0) = 1.0;
  p.at(1, 1, 0) = 1.0;
  EXPECT_DOUBLE_EQ(total_variation(p, 0.0), 2.0);
}

TEST(TotalVariation, ConstantIsExactlyZero) {
  EXPECT_EQ(total_variation(Tensor3(5, 4, 3, 0.37)), 0.0);
  EXPECT_EQ(total_variation(Tensor3(5, 4, 3, 0.37), 0.0), 0.0);
}

TEST(TotalVariation, MatchesOracleAndIsHomogeneous) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const Tensor3 p = oracle::random_tensor(1 + t % 9, 1 + t % 7, 3, rng);
    const double tv = total_variation(p, 0.0);
    EXPECT_NEAR(tv, oracle::total_variation(p, 0.0), 1e-9);
    Tensor3 q = p;
    q *= -2.5;
    EXPECT_NEAR(total_variation(q, 0.0), 2.5 * tv, 1e-9);
  }
}

TEST(TotalVariation, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const Tensor3 p = oracle::random_tensor(6, 6, 3, rng);
  auto f = [](const Tensor3& x) { return total_variation(x); };
  EXPECT_LT(oracle::relative_error(total_variation_grad(p),
                                   oracle::numeric_grad(f, p)),
            1e-3);
}

TEST(TotalVariation, ZeroEpsilonFlatPointsHaveZeroGradient) {
  const Tensor3 g = total_variation_grad(Tensor3(3, 3, 3, 0.2), 0.0);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

// ---- resampling ---------------------------------------------------------------

TEST(Resample, SameSizeIsIdentity) {
  std::mt19937_64 rng(2);
  const Tensor3 x = oracle::random_tensor(112, 112, 3, rng);
  EXPECT_EQ(preprocess_for_model(x, 112, IntensityMap{1.0, 0.0}), x);
}

TEST(Resample, ConstantStaysConstant) {
  const Tensor3 out = resize_bilinear(Tensor3(224, 224, 3, 0.3), 112, 112);
  for (double v : out.values()) EXPECT_NEAR(v, 0.3, 1e-15);
}

TEST(Resample, CheckerboardMatchesBilinearOracle) {
  Tensor3 x(2, 2, 1);
  x.at(0, 0, 0) = 1.0;
  x.at(1, 1, 0) = 1.0;
  const Tensor3 out = resize_bilinear(x, 4, 4);
  const Tensor3 ref = oracle::resize(x, 4, 4);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-15);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.at(1, 1, 0), 0.625);
}

TEST(Resample, DownsampleMatchesOracle) {
  std::mt19937_64 rng(4);
  const Tensor3 x = oracle::random_tensor(37, 29, 3, rng);
  const Tensor3 out = resize_bilinear(x, 16, 16);
  const Tensor3 ref = oracle::resize(x, 16, 16);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
}

TEST(Resample, PreprocessMapsToSignedRange) {
  const Tensor3 out = preprocess_for_model(Tensor3(8, 8, 3, 1.0), 4);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  const Tensor3 zero = preprocess_for_model(Tensor3(8, 8, 3, 0.0), 4);
  for (double v : zero.values()) EXPECT_DOUBLE_EQ(v, -1.0);
}

TEST(Resample, PreprocessGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const Tensor3 x = oracle::random_tensor(10, 10, 3, rng);
  const Tensor3 w = oracle::random_tensor(6, 6, 3, rng, -1, 1);
  auto f = [&](const Tensor3& in) {
    const Tensor3 y = preprocess_for_model(in, 6);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  EXPECT_LT(oracle::relative_error(preprocess_backward(w, 10, 10),
                                   oracle::numeric_grad(f, x)),
            1e-6);
}

// ---- compositing -------------------------------------------------------------

TEST(Compositing, CentralBlockHandExample) {
  const ImageTensor x(Tensor3(4, 4, 3, 0.0));
  Placement pl;
  pl.center_x = pl.center_y = 0.5;
  pl.scale = 0.5;
  const ImageTensor out = apply_patch(x, Tensor3(2, 2, 3, 1.0), pl);
  for (int y = 0; y < 4; ++y) {
    for (int xx = 0; xx < 4; ++xx) {
      const bool inside = y >= 1 && y <= 2 && xx >= 1 && xx <= 2;
      for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(out.pixels().at(y, xx, c), inside ? 1.0 : 0.0) << y << "," << xx;
      }
    }
  }
}

TEST(Compositing, FullCoverageEqualsResize) {
  std::mt19937_64 rng(8);
  const ImageTensor x(oracle::random_tensor(12, 12, 3, rng));
  const Tensor3 q = oracle::random_tensor(5, 5, 3, rng);
  const ImageTensor out = apply_patch(x, q, AffineParams{0.5, 0.5, 1.0, 0.0});
  const Tensor3 ref = resize_bilinear(q, 12, 12);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_NEAR(out.pixels()[i], ref[i], 1e-12);
  }
}

TEST(Compositing, RotatedPlacementMatchesOracle) {
  std::mt19937_64 rng(12);
  const ImageTensor x(oracle::random_tensor(40, 32, 3, rng));
  const Tensor3 q = oracle::random_tensor(9, 9, 3, rng);
  const AffineParams a{0.45, 0.6, 0.4, 23.0};
  const ImageTensor out = apply_patch(x, q, a);
  const Tensor3 ref = oracle::composite(x.pixels(), q, a.center_x, a.center_y,
                                        a.scale, a.rotation_deg);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ASSERT_NEAR(out.pixels()[i], ref[i], 1e-12) << i;
  }
}

TEST(Compositing, TinyPlacementThrows) {
  const ImageTensor x(Tensor3(4, 4, 3, 0.0));
  EXPECT_THROW(apply_patch(x, Tensor3(2, 2, 3, 1.0), AffineParams{0.5, 0.5, 0.1, 0}),
               PlacementError);
}

TEST(Compositing, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  const Tensor3 x = oracle::random_tensor(20, 20, 3, rng);
  const Tensor3 q = oracle::random_tensor(6, 6, 3, rng);
  const Tensor3 w = oracle::random_tensor(20, 20, 3, rng, -1, 1);
  const AffineParams a{0.5, 0.55, 0.6, 17.0};
  auto f = [&](const Tensor3& qq) {
    const Tensor3 y = composite_patch(x, qq, a).image;
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  const Tensor3 analytic = composite_backward(composite_patch(x, q, a), 3, w);
  EXPECT_LT(oracle::relative_error(analytic, oracle::numeric_grad(f, q)), 1e-6);
}

TEST(Placement, ZeroJitterIsNominal) {
  Placement pl;
  pl.jitter = {};
  std::mt19937_64 rng(1);
  const AffineParams a = sample_placement(pl, 128, 128, rng);
  EXPECT_EQ(a, clamp_to_image(nominal_params(pl), 128, 128));
}

TEST(Placement, SeededSampleIsReproducible) {
  Placement pl;
  pl.jitter = {0.1, 0, 0, 0};
  std::mt19937_64 a(42), b(42);
  EXPECT_EQ(sample_placement(pl, 200, 200, a), sample_placement(pl, 200, 200, b));
}

TEST(Placement, JitterMeanConvergesToCenter) {
  Placement pl;
  pl.center_x = 0.5;
  pl.center_y = 0.5;
  pl.scale = 0.2;
  pl.jitter = {0.1, 0, 0, 0};
  std::mt19937_64 rng(3);
  double sum = 0;
  for (int i = 0; i < 1000; ++i) sum += sample_placement(pl, 100, 100, rng).center_x;
  EXPECT_NEAR(sum / 1000, 0.5, 0.01);
}

TEST(Placement, SamplesStayInsideImage) {
  Placement pl;
  pl.center_x = 0.95;
  pl.center_y = 0.02;
  pl.scale = 0.5;
  pl.jitter = {0.2, 0.2, 0.3, 45};
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const AffineParams a = sample_placement(pl, 60, 80, rng);
    const double side = a.scale * 60;
    const double t = a.rotation_deg * std::numbers::pi / 180;
    const double half = 0.5 * side * (std::abs(std::cos(t)) + std::abs(std::sin(t)));
    EXPECT_GE(a.center_x * 80 - half, -1e-9);
    EXPECT_LE(a.center_x * 80 + half, 80 + 1e-9);
    EXPECT_GE(a.center_y * 60 - half, -1e-9);
    EXPECT_LE(a.center_y * 60 + half, 60 + 1e-9);
  }
}

// ---- camera channel -------------------------------------------------------------

TEST(CameraChannel, IdentityConfigIsBitIdentical) {
  std::mt19937_64 rng(1);
  const ImageTensor x(oracle::random_tensor(16, 16, 3, rng));
  EXPECT_EQ(simulate_camera_channel(x, CameraChannelConfig{}), x);
}

TEST(CameraChannel, GammaIsPointwisePower) {
  CameraChannelConfig cfg;
  cfg.gamma = 2.0;
  const ImageTensor out =
      simulate_camera_channel(ImageTensor(Tensor3(4, 4, 3, 0.25)), cfg);
  for (double v : out.pixels().values()) EXPECT_DOUBLE_EQ(v, 0.0625);
}

TEST(CameraChannel, SeededNoiseIsReproducible) {
  CameraChannelConfig cfg;
  cfg.noise_sigma = 0.1;
  cfg.seed = 17;
  const ImageTensor x(Tensor3(8, 8, 3, 0.5));
  const ImageTensor a = simulate_camera_channel(x, cfg);
  EXPECT_EQ(a, simulate_camera_channel(x, cfg));
  EXPECT_NE(a, x);
  cfg.seed = 18;
  EXPECT_NE(a, simulate_camera_channel(x, cfg));
}

TEST(CameraChannel, BlurPreservesConstantsAndDownscaleKeepsShape) {
  CameraChannelConfig cfg;
  cfg.blur_sigma = 1.5;
  cfg.downscale_factor = 3.0;
  const ImageTensor out =
      simulate_camera_channel(ImageTensor(Tensor3(20, 30, 3, 0.4)), cfg);
  EXPECT_EQ(out.height(), 20);
  EXPECT_EQ(out.width(), 30);
  for (double v : out.pixels().values()) EXPECT_NEAR(v, 0.4, 1e-12);
}

TEST(CameraChannel, RejectsInvalidConfig) {
  CameraChannelConfig cfg;
  cfg.gamma = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.downscale_factor = 0.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
}
