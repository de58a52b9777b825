#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedtput/error.hpp"
#include "fedtput/trace.hpp"

namespace fedtput {

/// Symmetric Gaussian smoothing. Kernel radius is ceil(4*sigma); near the
/// edges the kernel is truncated and renormalized so weights sum to 1.
inline std::vector<double> gaussian_filter(std::span<const double> series, double sigma) {
  if (!(sigma > 0) || !std::isfinite(sigma)) throw Error(Errc::invalid_sigma, std::to_string(sigma));
  if (series.empty()) throw Error(Errc::empty_dataset, "empty series");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t k = -radius; k <= radius; ++k)
    kernel[static_cast<std::size_t>(k + radius)] =
        std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));

  const auto n = static_cast<std::ptrdiff_t>(series.size());
  std::vector<double> out(series.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::ptrdiff_t>(0, i - radius);
    const auto hi = std::min<std::ptrdiff_t>(n - 1, i + radius);
    double acc = 0, wsum = 0;
    for (auto j = lo; j <= hi; ++j) {
      const double w = kernel[static_cast<std::size_t>(j - i + radius)];
      acc += w * series[static_cast<std::size_t>(j)];
      wsum += w;
    }
    out[static_cast<std::size_t>(i)] = acc / wsum;
  }
  return out;
}

/// How noise filtering is applied while building samples.
///  prefix      - each sample's history is filtered using only records before
///                the sample's cut point (no future values enter the inputs)
///  whole_trace - the full trace is filtered once, then windowed
///  none        - raw values
enum class FilterMode { prefix, whole_trace, none };

inline std::string_view filter_mode_name(FilterMode m) {
  switch (m) {
    case FilterMode::prefix: return "prefix";
    case FilterMode::whole_trace: return "trace";
    case FilterMode::none: return "none";
  }
  return "prefix";
}

inline std::optional<FilterMode> parse_filter_mode(std::string_view s) {
  for (auto m : {FilterMode::prefix, FilterMode::whole_trace, FilterMode::none})
    if (s == filter_mode_name(m)) return m;
  return std::nullopt;
}

/// Windowed supervised pairs. inputs is a flat buffer of size() blocks of
/// history x input_dim values (row-major per sample; row = timestep, last
/// column = throughput). targets hold the mean raw throughput of the next
/// horizon steps.
struct SampleSet {
  std::size_t history = 0;
  std::size_t horizon = 0;
  std::size_t input_dim = 0;
  std::vector<double> inputs;
  std::vector<double> targets;

  std::size_t size() const { return targets.size(); }
  bool empty() const { return targets.empty(); }
  std::size_t block() const { return history * input_dim; }

  std::span<const double> input(std::size_t i) const { return {inputs.data() + i * block(), block()}; }
  std::span<double> input(std::size_t i) { return {inputs.data() + i * block(), block()}; }

  void append(const SampleSet& other) {
    if (empty() && inputs.empty()) {
      history = other.history;
      horizon = other.horizon;
      input_dim = other.input_dim;
    }
    if (other.history != history || other.input_dim != input_dim)
      throw Error(Errc::shape_mismatch, "cannot merge sample sets of different shape");
    inputs.insert(inputs.end(), other.inputs.begin(), other.inputs.end());
    targets.insert(targets.end(), other.targets.begin(), other.targets.end());
  }

  // Flattened debug dump: one row per sample, inputs then target.
  std::string to_csv() const {
    std::string out;
    for (std::size_t r = 0; r < history; ++r)
      for (std::size_t c = 0; c < input_dim; ++c)
        out += "x" + std::to_string(r) + "_" + std::to_string(c) + ",";
    out += "target\n";
    char buf[40];
    for (std::size_t i = 0; i < size(); ++i) {
      for (double v : input(i)) {
        std::snprintf(buf, sizeof buf, "%.17g,", v);
        out += buf;
      }
      std::snprintf(buf, sizeof buf, "%.17g\n", targets[i]);
      out += buf;
    }
    return out;
  }
};

namespace detail {

// Channel-major copy of the dataset: features, then throughput.
inline std::vector<std::vector<double>> channels(const TraceDataset& ds) {
  std::vector<std::vector<double>> ch = ds.features;
  ch.push_back(ds.throughput);
  return ch;
}

inline void check_window(std::size_t T, std::size_t H, std::size_t W) {
  if (H < 1 || W < 1) throw Error(Errc::invalid_argument, "history and horizon must be >= 1");
  if (T < H + W)
    throw Error(Errc::trace_too_short, "trace of " + std::to_string(T) + " steps < H + W = " +
                                           std::to_string(H + W));
}

}  // namespace detail

/// Windows the dataset: sample k (cut at i = H + k) takes rows i-H .. i-1 as
/// input and the mean of throughput[i .. i+W-1] as target.
inline SampleSet create_samples(const TraceDataset& ds, std::size_t H, std::size_t W) {
  const std::size_t T = ds.size();
  detail::check_window(T, H, W);
  const auto ch = detail::channels(ds);
  SampleSet s{H, W, ch.size(), {}, {}};
  const std::size_t n = T - H - W + 1;
  s.inputs.reserve(n * H * s.input_dim);
  s.targets.reserve(n);
  for (std::size_t i = H; i + W <= T; ++i) {
    for (std::size_t r = i - H; r < i; ++r)
      for (const auto& c : ch) s.inputs.push_back(c[r]);
    double acc = 0;
    for (std::size_t j = i; j < i + W; ++j) acc += ds.throughput[j];
    s.targets.push_back(acc / static_cast<double>(W));
  }
  return s;
}

/// Filtered samples. Targets always come from raw throughput.
inline SampleSet build_samples(const TraceDataset& ds, std::size_t H, std::size_t W, double sigma,
                               FilterMode mode = FilterMode::prefix) {
  const std::size_t T = ds.size();
  detail::check_window(T, H, W);
  if (mode != FilterMode::none && !(sigma > 0)) throw Error(Errc::invalid_sigma, std::to_string(sigma));
  if (mode == FilterMode::none) return create_samples(ds, H, W);

  if (mode == FilterMode::whole_trace) {
    TraceDataset filtered = ds;
    for (auto& f : filtered.features) f = gaussian_filter(f, sigma);
    filtered.throughput = gaussian_filter(ds.throughput, sigma);
    SampleSet s = create_samples(filtered, H, W);
    SampleSet raw_targets = create_samples(ds, H, W);
    s.targets = std::move(raw_targets.targets);
    return s;
  }

  // Prefix mode: for the cut at i only rows [i - H - radius, i) can influence
  // the filtered history, so filter that segment and keep its last H rows.
  const auto radius = static_cast<std::size_t>(std::ceil(4.0 * sigma));
  const auto ch = detail::channels(ds);
  SampleSet s{H, W, ch.size(), {}, {}};
  const std::size_t n = T - H - W + 1;
  s.inputs.resize(n * H * s.input_dim);
  s.targets.reserve(n);
  for (std::size_t i = H; i + W <= T; ++i) {
    const std::size_t lo = i >= H + radius ? i - H - radius : 0;
    const std::size_t k = i - H;
    for (std::size_t c = 0; c < ch.size(); ++c) {
      const auto seg = gaussian_filter(std::span<const double>(ch[c].data() + lo, i - lo), sigma);
      for (std::size_t r = 0; r < H; ++r)
        s.inputs[k * H * s.input_dim + r * s.input_dim + c] = seg[seg.size() - H + r];
    }
    double acc = 0;
    for (std::size_t j = i; j < i + W; ++j) acc += ds.throughput[j];
    s.targets.push_back(acc / static_cast<double>(W));
  }
  return s;
}

/// The model input for the cut at i (rows i-H .. i-1) as an online client
/// would see it: only records before i are used. In whole-trace mode the
/// filter still sees only that prefix.
inline std::vector<double> input_at(const TraceDataset& ds, std::size_t i, std::size_t H, double sigma,
                                    FilterMode mode = FilterMode::prefix) {
  if (H < 1) throw Error(Errc::invalid_argument, "history must be >= 1");
  if (i < H || i > ds.size())
    throw Error(Errc::trace_too_short, "cut " + std::to_string(i) + " needs " + std::to_string(H) + " prior rows");
  const auto ch = detail::channels(ds);
  std::vector<double> out(H * ch.size());
  std::size_t lo = i - H;
  if (mode != FilterMode::none) {
    if (!(sigma > 0)) throw Error(Errc::invalid_sigma, std::to_string(sigma));
    const auto radius = static_cast<std::size_t>(std::ceil(4.0 * sigma));
    lo = i >= H + radius ? i - H - radius : 0;
  }
  for (std::size_t c = 0; c < ch.size(); ++c) {
    std::span<const double> seg(ch[c].data() + lo, i - lo);
    const auto f = mode == FilterMode::none ? std::vector<double>(seg.begin(), seg.end()) : gaussian_filter(seg, sigma);
    for (std::size_t r = 0; r < H; ++r) out[r * ch.size() + c] = f[f.size() - H + r];
  }
  return out;
}

/// Chronological split: the first floor(T * f) records train, the rest test.
inline std::pair<TraceDataset, TraceDataset> split_dataset(const TraceDataset& ds, double train_fraction) {
  if (ds.empty()) throw Error(Errc::empty_dataset, "split of empty trace");
  if (!(train_fraction > 0 && train_fraction < 1))
    throw Error(Errc::invalid_argument, "train fraction must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * train_fraction));
  return {ds.slice(0, n), ds.slice(n, ds.size())};
}

// ---------------------------------------------------------------------------
// Scaling

enum class ScalerMode { minmax, standard };

/// Per-channel affine scaling fitted on training inputs. In min-max mode
/// lo/hi are the channel minimum and maximum; in standard mode they are the
/// mean and standard deviation. Targets share the last (throughput) channel.
struct Scaler {
  ScalerMode mode = ScalerMode::minmax;
  std::vector<double> lo;
  std::vector<double> hi;

  static Scaler make(ScalerMode mode, std::vector<double> lo, std::vector<double> hi) {
    if (lo.size() != hi.size()) throw Error(Errc::shape_mismatch, "scaler lo/hi length");
    Scaler s;
    s.mode = mode;
    s.lo = std::move(lo);
    s.hi = std::move(hi);
    s.refresh();
    return s;
  }

  std::size_t channels() const { return lo.size(); }
  bool fitted() const { return !lo.empty(); }

  // A constant channel has its divisor replaced by 1.
  bool degenerate(std::size_t c) const { return !(spread(c) > 0); }

  double apply_channel(std::size_t c, double x) const { return (x - lo[c]) / divisor_[c]; }
  double invert_channel(std::size_t c, double v) const { return v * divisor_[c] + lo[c]; }
  double apply_target(double y) const { return apply_channel(channels() - 1, y); }
  double invert_target(double v) const { return invert_channel(channels() - 1, v); }

  bool operator==(const Scaler& o) const { return mode == o.mode && lo == o.lo && hi == o.hi; }

 private:
  double spread(std::size_t c) const { return mode == ScalerMode::minmax ? hi[c] - lo[c] : hi[c]; }

  void refresh() {
    divisor_.resize(lo.size());
    for (std::size_t c = 0; c < lo.size(); ++c) divisor_[c] = degenerate(c) ? 1.0 : spread(c);
  }

  std::vector<double> divisor_;
};

/// Fits per-channel statistics on training inputs. A constant channel is
/// flagged degenerate and gets divisor 1.
inline Scaler fit_scaler(const SampleSet& train, ScalerMode mode = ScalerMode::minmax) {
  if (train.empty()) throw Error(Errc::empty_dataset, "cannot fit scaler on empty sample set");
  const std::size_t d = train.input_dim;
  const std::size_t rows = train.size() * train.history;
  if (mode == ScalerMode::minmax) {
    std::vector<double> lo(d, std::numeric_limits<double>::infinity());
    std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double v = train.inputs[r * d + c];
        lo[c] = std::min(lo[c], v);
        hi[c] = std::max(hi[c], v);
      }
    return Scaler::make(mode, std::move(lo), std::move(hi));
  }
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += train.inputs[r * d + c];
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = train.inputs[r * d + c] - mean[c];
      sd[c] += dv * dv;
    }
  for (auto& v : sd) v = std::sqrt(v / static_cast<double>(rows));
  return Scaler::make(mode, std::move(mean), std::move(sd));
}

inline SampleSet apply_scaler(const Scaler& scaler, const SampleSet& samples) {
  if (scaler.channels() != samples.input_dim)
    throw Error(Errc::shape_mismatch, "scaler has " + std::to_string(scaler.channels()) +
                                          " channels, samples have " + std::to_string(samples.input_dim));
  SampleSet out = samples;
  const std::size_t d = samples.input_dim;
  for (std::size_t i = 0; i < out.inputs.size(); ++i) out.inputs[i] = scaler.apply_channel(i % d, out.inputs[i]);
  for (auto& t : out.targets) t = scaler.apply_target(t);
  return out;
}

inline SampleSet invert_scaler(const Scaler& scaler, const SampleSet& samples) {
  if (scaler.channels() != samples.input_dim) throw Error(Errc::shape_mismatch, "scaler channel count");
  SampleSet out = samples;
  const std::size_t d = samples.input_dim;
  for (std::size_t i = 0; i < out.inputs.size(); ++i) out.inputs[i] = scaler.invert_channel(i % d, out.inputs[i]);
  for (auto& t : out.targets) t = scaler.invert_target(t);
  return out;
}

}  // namespace fedtput
