#include <cmath>
#include <numeric>

#include "fedtput/preprocess.hpp"
#include "fedtput/rng.hpp"
#include "support.hpp"

using namespace fedtput;
using testing_support::flat_trace;
using testing_support::iota_vec;

TEST(GaussianFilter, ConstantInvariance) {
  std::vector<double> x(5, 5.0);
  auto y = gaussian_filter(x, 1.0);
  for (double v : y) EXPECT_NEAR(v, 5.0, 1e-12);
}

TEST(GaussianFilter, ImpulseCentreMatchesKernel) {
  std::vector<double> x{0, 0, 1, 0, 0};
  // radius 4 is truncated to the 5 available samples around the centre
  double sum = 0;
  for (int k = -2; k <= 2; ++k) sum += std::exp(-k * k / 2.0);
  EXPECT_NEAR(gaussian_filter(x, 1.0)[2], 1.0 / sum, 1e-12);
}

TEST(GaussianFilter, InvalidSigma) {
  std::vector<double> x{1, 2, 3};
  EXPECT_ERRC(gaussian_filter(x, 0.0), Errc::invalid_sigma);
  EXPECT_ERRC(gaussian_filter(x, -1.0), Errc::invalid_sigma);
}

TEST(GaussianFilter, Linearity) {
  Rng rng(3);
  std::vector<double> a(60), b(60), mix(60);
  for (std::size_t i = 0; i < 60; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    mix[i] = 2.5 * a[i] - 0.7 * b[i];
  }
  auto fa = gaussian_filter(a, 1.7), fb = gaussian_filter(b, 1.7), fm = gaussian_filter(mix, 1.7);
  for (std::size_t i = 0; i < 60; ++i) EXPECT_NEAR(fm[i], 2.5 * fa[i] - 0.7 * fb[i], 1e-10);
}

TEST(GaussianFilter, ReducesWhiteNoiseVariance) {
  auto var = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    std::vector<double> x(64);
    for (auto& v : x) v = rng.normal();
    ASSERT_LE(var(gaussian_filter(x, 2.0)), var(x)) << "seed " << seed;
  }
}

TEST(CreateSamples, CountFormula) {
  auto s = create_samples(flat_trace(iota_vec(8)), 5, 1);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s.block(), 5u * 6u);
}

TEST(CreateSamples, SingleTargetW1) {
  auto s = create_samples(flat_trace(iota_vec(6)), 5, 1);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s.targets[0], 6.0);
}

TEST(CreateSamples, SingleTargetW2) {
  auto s = create_samples(flat_trace(iota_vec(7)), 5, 2);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s.targets[0], 6.5);
}

TEST(CreateSamples, RowLayout) {
  auto ds = flat_trace(iota_vec(8));
  ds.features[0] = {10, 11, 12, 13, 14, 15, 16, 17};
  auto s = create_samples(ds, 3, 1);
  // sample 1 covers rows 1..3; last column is throughput
  const auto x = s.input(1);
  EXPECT_DOUBLE_EQ(x[0], 11.0);
  EXPECT_DOUBLE_EQ(x[5], 2.0);
  EXPECT_DOUBLE_EQ(x[2 * 6 + 5], 4.0);
  EXPECT_DOUBLE_EQ(s.targets[1], 5.0);
}

TEST(CreateSamples, TooShort) { EXPECT_ERRC(create_samples(flat_trace(iota_vec(5)), 5, 1), Errc::trace_too_short); }

TEST(BuildSamples, TargetsStayRawWhenFiltered) {
  auto ds = synth_trace(2, 120, BurstyRegime{});
  auto raw = create_samples(ds, 5, 3);
  for (auto mode : {FilterMode::prefix, FilterMode::whole_trace, FilterMode::none}) {
    auto f = build_samples(ds, 5, 3, 2.0, mode);
    EXPECT_EQ(f.targets, raw.targets);
  }
  EXPECT_NE(build_samples(ds, 5, 3, 2.0, FilterMode::prefix).inputs, raw.inputs);
  EXPECT_EQ(build_samples(ds, 5, 3, 2.0, FilterMode::none).inputs, raw.inputs);
}

TEST(BuildSamples, PrefixModeIgnoresFuture) {
  auto ds = synth_trace(2, 100, SmoothRegime{});
  auto a = build_samples(ds, 5, 1, 2.0, FilterMode::prefix);
  auto changed = ds;
  for (std::size_t t = 60; t < ds.size(); ++t) changed.throughput[t] += 50.0;
  auto b = build_samples(changed, 5, 1, 2.0, FilterMode::prefix);
  // inputs of windows ending before row 60 are unaffected
  for (std::size_t i = 0; i + 5 < 60; ++i) {
    const auto xa = a.input(i), xb = b.input(i);
    ASSERT_TRUE(std::equal(xa.begin(), xa.end(), xb.begin()));
  }
}

TEST(BuildSamples, InputAtMatchesSampleRows) {
  auto ds = synth_trace(7, 80, SmoothRegime{});
  auto s = build_samples(ds, 5, 1, 2.0, FilterMode::prefix);
  for (std::size_t i = 0; i < s.size(); i += 9) {
    const auto x = input_at(ds, i + 5, 5, 2.0, FilterMode::prefix);
    const auto y = s.input(i);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_DOUBLE_EQ(x[k], y[k]);
  }
}

TEST(SplitDataset, FloorRule) {
  auto check = [](std::size_t T, double f, std::size_t a, std::size_t b) {
    auto [tr, te] = split_dataset(flat_trace(iota_vec(T)), f);
    EXPECT_EQ(tr.size(), a);
    EXPECT_EQ(te.size(), b);
  };
  check(10, 0.7, 7, 3);
  check(10, 0.5, 5, 5);
  check(3, 0.9, 2, 1);
}

TEST(SplitDataset, Chronological) {
  auto [tr, te] = split_dataset(synth_trace(1, 57, SmoothRegime{}), 0.7);
  EXPECT_LT(tr.timestamp.back(), te.timestamp.front());
}

TEST(Scaler, MinMaxDefinition) {
  SampleSet s;
  s.history = 1;
  s.horizon = 1;
  s.input_dim = 2;
  s.inputs = {0, 7, 10, 7};
  s.targets = {0, 0};
  auto sc = fit_scaler(s);
  EXPECT_DOUBLE_EQ(sc.apply_channel(0, 5.0), 0.5);
  EXPECT_TRUE(sc.degenerate(1));
  EXPECT_DOUBLE_EQ(sc.apply_channel(1, 7.0), 0.0);
}

TEST(Scaler, TrainingDataMapsIntoUnitInterval) {
  auto s = create_samples(synth_trace(3, 200, BurstyRegime{}), 5, 1);
  auto sc = fit_scaler(s);
  auto scaled = apply_scaler(sc, s);
  for (std::size_t i = 0; i < scaled.inputs.size(); ++i) {
    if (sc.degenerate(i % s.input_dim)) continue;
    ASSERT_GE(scaled.inputs[i], -1e-15);
    ASSERT_LE(scaled.inputs[i], 1.0 + 1e-15);
  }
}

TEST(Scaler, ApplyInvertIdentity) {
  auto s = create_samples(synth_trace(3, 200, SmoothRegime{}), 5, 2);
  for (auto mode : {ScalerMode::minmax, ScalerMode::standard}) {
    auto sc = fit_scaler(s, mode);
    auto back = invert_scaler(sc, apply_scaler(sc, s));
    for (std::size_t i = 0; i < s.inputs.size(); ++i) ASSERT_NEAR(back.inputs[i], s.inputs[i], 1e-12);
    for (std::size_t i = 0; i < s.targets.size(); ++i) ASSERT_NEAR(back.targets[i], s.targets[i], 1e-12);
  }
}

TEST(Scaler, ChannelMismatch) {
  auto s = create_samples(flat_trace(iota_vec(10)), 3, 1);
  auto sc = Scaler::make(ScalerMode::minmax, {0, 0}, {1, 1});
  EXPECT_ERRC(apply_scaler(sc, s), Errc::shape_mismatch);
}
