#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedtput/error.hpp"
#include "fedtput/federation.hpp"
#include "fedtput/metrics.hpp"
#include "fedtput/preprocess.hpp"
#include "fedtput/trace.hpp"

namespace fedtput::abr {

struct BitrateLadder {
  std::vector<double> levels{6.5, 10, 15, 20, 30, 50};  // Mbps

  void validate() const {
    if (levels.size() < 2) throw Error(Errc::invalid_argument, "ladder needs at least two levels");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (!(levels[i] > 0)) throw Error(Errc::invalid_argument, "ladder levels must be positive");
      if (i > 0 && !(levels[i] > levels[i - 1])) throw Error(Errc::invalid_argument, "ladder must be ascending");
    }
  }
  std::size_t size() const { return levels.size(); }
};

struct QoEParams {
  double mu = 1.0;      // per Mbps of bitrate change
  double lambda = 4.3;  // per second of rebuffering

  void validate() const {
    if (!(mu >= 0) || !(lambda >= 0)) throw Error(Errc::invalid_argument, "QoE penalties must be >= 0");
  }
};

struct SessionConfig {
  double chunk_s = 4.0;
  double buffer_max_s = 30.0;
  double video_s = 250.0;
  std::size_t horizon = 5;

  std::size_t chunk_count() const { return static_cast<std::size_t>(std::floor(video_s / chunk_s + 1e-9)); }

  void validate() const {
    if (!(chunk_s > 0)) throw Error(Errc::invalid_argument, "chunk duration must be > 0");
    if (!(buffer_max_s >= chunk_s)) throw Error(Errc::invalid_argument, "buffer cap must hold one chunk");
    if (chunk_count() < 1) throw Error(Errc::invalid_argument, "video shorter than one chunk");
    if (horizon < 1) throw Error(Errc::invalid_argument, "horizon must be >= 1");
  }
};

struct ChunkRecord {
  std::size_t level = 0;
  double bitrate = 0;      // Mbps
  double start_s = 0;      // wall clock at download start
  double download_s = 0;
  double rebuffer_s = 0;
  double wait_s = 0;       // pause before the download because the buffer was full
  double buffer_after_s = 0;
  double predicted_mbps = 0;
};

struct StreamSession {
  SessionConfig cfg;
  std::vector<ChunkRecord> chunks;
  double startup_delay_s = 0;

  double bitrate_sum() const {
    double s = 0;
    for (const auto& c : chunks) s += c.bitrate;
    return s;
  }
  double variation_sum() const {
    double s = 0;
    for (std::size_t k = 1; k < chunks.size(); ++k) s += std::abs(chunks[k].bitrate - chunks[k - 1].bitrate);
    return s;
  }
  double rebuffer_sum() const {
    double s = 0;
    for (const auto& c : chunks) s += c.rebuffer_s;
    return s;
  }
};

struct QoEScore {
  double total = 0;
  double per_chunk = 0;
};

inline QoEScore qoe_score(const StreamSession& s, const QoEParams& q = {}) {
  if (s.chunks.empty()) throw Error(Errc::invalid_argument, "session has no chunks");
  const double total = s.bitrate_sum() - q.mu * s.variation_sum() - q.lambda * s.rebuffer_sum();
  return {total, total / static_cast<double>(s.chunks.size())};
}

// ---------------------------------------------------------------------------
// Throughput timeline: piecewise constant, value i holds over [i, i + 1) s.

/// Time to move `megabits` starting at wall time t. TraceExhausted if the
/// timeline ends first.
inline double transfer_time(std::span<const double> trace, double t, double megabits) {
  double now = t;
  double left = megabits;
  while (left > 0) {
    const auto idx = static_cast<std::size_t>(std::floor(now));
    if (idx >= trace.size()) throw Error(Errc::trace_exhausted, "trace ended at " + std::to_string(trace.size()) + " s");
    const double rate = std::max(0.0, trace[idx]);
    const double seg_end = static_cast<double>(idx + 1);
    const double cap = rate * (seg_end - now);
    if (cap >= left) {
      now += left / rate;
      left = 0;
    } else {
      left -= cap;
      now = seg_end;
    }
  }
  return now - t;
}

/// Mean throughput over [t, t + span).
inline double mean_throughput(std::span<const double> trace, double t, double span) {
  double acc = 0, covered = 0, now = t;
  const double end = t + span;
  while (now < end) {
    const auto idx = static_cast<std::size_t>(std::floor(now));
    if (idx >= trace.size()) break;
    const double step = std::min(end, static_cast<double>(idx + 1)) - now;
    acc += trace[idx] * step;
    covered += step;
    now += step;
  }
  return covered > 0 ? acc / covered : 0.0;
}

// ---------------------------------------------------------------------------
// Predictors

/// What a predictor may look at when the next chunk is requested.
struct PredictorContext {
  double now_s = 0;
  std::vector<double> chunk_throughput;  // measured Mbps of completed chunks, oldest first
  const TraceDataset* trace = nullptr;   // 1 Hz trace; online predictors read rows before now only
  double chunk_s = 4.0;
};

/// Download time of `megabits` starting offset_s seconds after the decision.
using DownloadModel = std::function<double(double offset_s, double megabits)>;

/// fn forecasts one throughput value that the controller holds across its
/// lookahead. exact, when set, replaces that value with a download-time
/// model for the lookahead (the oracle replays the true trace).
struct Predictor {
  std::string name;
  std::function<double(const PredictorContext&)> fn;
  std::function<DownloadModel(const PredictorContext&)> exact = {};

  double operator()(const PredictorContext& c) const { return std::max(fn(c), kThroughputFloor); }
};

inline constexpr std::size_t kPastChunks = 5;

namespace detail {
inline std::span<const double> recent(const std::vector<double>& v, std::size_t n) {
  const std::size_t k = std::min(n, v.size());
  return {v.data() + v.size() - k, k};
}
}  // namespace detail

/// Harmonic mean of the last five chunk throughputs (fastMPC).
inline Predictor harmonic_mean_predictor() {
  return {"hm", [](const PredictorContext& c) {
            if (c.chunk_throughput.empty()) return kThroughputFloor;
            return harmonic_mean_predict(detail::recent(c.chunk_throughput, kPastChunks));
          }};
}

inline Predictor ewma_predictor(double alpha = 0.5) {
  return {"ewma", [alpha](const PredictorContext& c) {
            if (c.chunk_throughput.empty()) return kThroughputFloor;
            return ewma_predict(c.chunk_throughput, alpha);
          }};
}

/// AR(p) over recent chunk throughputs; harmonic mean until p + 2 chunks exist.
inline Predictor ar_predictor(std::size_t p = 2, std::size_t window = 20) {
  return {"ar", [p, window](const PredictorContext& c) {
            if (c.chunk_throughput.empty()) return kThroughputFloor;
            if (c.chunk_throughput.size() < p + 2)
              return harmonic_mean_predict(detail::recent(c.chunk_throughput, kPastChunks));
            return ar_fit_predict(detail::recent(c.chunk_throughput, window), p);
          }};
}

/// Perfect knowledge of the future: its point forecast is the true mean over
/// the next chunk duration, and the controller plans on exact download times
/// replayed from the trace. Past the end of the trace the rate is taken as 0.
inline Predictor oracle_predictor() {
  Predictor p;
  p.name = "oracle";
  p.fn = [](const PredictorContext& c) {
    if (!c.trace) throw Error(Errc::invalid_argument, "oracle predictor needs the trace");
    return mean_throughput(c.trace->throughput, c.now_s, c.chunk_s);
  };
  p.exact = [](const PredictorContext& c) -> DownloadModel {
    if (!c.trace) throw Error(Errc::invalid_argument, "oracle predictor needs the trace");
    const auto* tr = c.trace;
    const double now = c.now_s;
    return [tr, now](double offset, double megabits) {
      try {
        return transfer_time(tr->throughput, now + offset, megabits);
      } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
      }
    };
  };
  return p;
}

/// Neural predictor over the last H seconds of the trace; falls back to the
/// harmonic mean before H seconds have elapsed.
inline Predictor model_predictor(std::string name, ModelWeights model, std::size_t H, double sigma,
                                 FilterMode mode = FilterMode::prefix) {
  auto shared = std::make_shared<const ModelWeights>(std::move(model));
  return {std::move(name), [shared, H, sigma, mode](const PredictorContext& c) {
            if (!c.trace) throw Error(Errc::invalid_argument, "model predictor needs the trace");
            const auto cut = std::min(static_cast<std::size_t>(std::floor(c.now_s)), c.trace->size());
            if (cut < H) {
              if (c.chunk_throughput.empty()) return kThroughputFloor;
              return harmonic_mean_predict(detail::recent(c.chunk_throughput, kPastChunks));
            }
            const auto& m = *shared;
            auto x = input_at(*c.trace, cut, H, sigma, mode);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = m.scaler.apply_channel(i % m.scaler.channels(), x[i]);
            return m.scaler.invert_target(model_forward(m, x));
          }};
}

// ---------------------------------------------------------------------------
// Controllers

struct MpcChoice {
  std::size_t level = 0;
  double score = 0;
};

/// Exhaustive search over every level sequence of the horizon, scoring each
/// with the QoE formula while simulating the buffer (including the pause at
/// the cap) under a download-time model. Ties go to the lower first level.
inline MpcChoice mpc_select(double buffer_s, std::size_t last_level, const DownloadModel& download,
                            const BitrateLadder& ladder, const QoEParams& q, const SessionConfig& s) {
  const std::size_t L = ladder.size();
  MpcChoice best{0, -std::numeric_limits<double>::infinity()};
  std::function<void(std::size_t, double, double, std::size_t, double, std::size_t)> dfs =
      [&](std::size_t depth, double buf, double clock, std::size_t prev, double acc, std::size_t first) {
        if (depth == s.horizon) {
          if (acc > best.score) best = {first, acc};
          return;
        }
        double wait = 0;
        if (buf + s.chunk_s > s.buffer_max_s) wait = buf + s.chunk_s - s.buffer_max_s;
        for (std::size_t l = 0; l < L; ++l) {
          const double rate = ladder.levels[l];
          const double d = download(clock + wait, s.chunk_s * rate);
          const double b0 = buf - wait;
          const double rebuf = std::max(0.0, d - b0);
          const double next = std::max(b0 - d, 0.0) + s.chunk_s;
          const double gain = rate - q.mu * std::abs(rate - ladder.levels[prev]) - q.lambda * rebuf;
          dfs(depth + 1, next, clock + wait + d, l, acc + gain, depth == 0 ? l : first);
        }
      };
  dfs(0, buffer_s, 0.0, std::min(last_level, L - 1), 0.0, 0);
  return best;
}

/// Chunk j of the lookahead downloads at predicted[j]; a single value is held
/// for the whole horizon.
inline MpcChoice mpc_select(double buffer_s, std::size_t last_level, std::span<const double> predicted,
                            const BitrateLadder& ladder, const QoEParams& q, const SessionConfig& s) {
  if (predicted.empty() || (predicted.size() != 1 && predicted.size() < s.horizon))
    throw Error(Errc::length_mismatch, "need one prediction or one per lookahead chunk");
  std::vector<double> rates(predicted.begin(), predicted.end());
  for (auto& r : rates) r = std::max(r, kThroughputFloor);
  if (rates.size() == 1) {
    const double c = rates[0];
    return mpc_select(buffer_s, last_level, DownloadModel([c](double, double mb) { return mb / c; }), ladder, q, s);
  }
  const std::size_t L = ladder.size();
  MpcChoice best{0, -std::numeric_limits<double>::infinity()};
  std::function<void(std::size_t, double, std::size_t, double, std::size_t)> dfs =
      [&](std::size_t depth, double buf, std::size_t prev, double acc, std::size_t first) {
        if (depth == s.horizon) {
          if (acc > best.score) best = {first, acc};
          return;
        }
        const double wait = buf + s.chunk_s > s.buffer_max_s ? buf + s.chunk_s - s.buffer_max_s : 0.0;
        for (std::size_t l = 0; l < L; ++l) {
          const double rate = ladder.levels[l];
          const double d = s.chunk_s * rate / rates[depth];
          const double b0 = buf - wait;
          const double rebuf = std::max(0.0, d - b0);
          const double gain = rate - q.mu * std::abs(rate - ladder.levels[prev]) - q.lambda * rebuf;
          dfs(depth + 1, std::max(b0 - d, 0.0) + s.chunk_s, l, acc + gain, depth == 0 ? l : first);
        }
      };
  dfs(0, buffer_s, std::min(last_level, L - 1), 0.0, 0);
  return best;
}

inline MpcChoice mpc_select(double buffer_s, std::size_t last_level, double predicted_mbps,
                            const BitrateLadder& ladder, const QoEParams& q, const SessionConfig& s) {
  const double one[1] = {predicted_mbps};
  return mpc_select(buffer_s, last_level, std::span<const double>(one), ladder, q, s);
}

struct Controller {
  enum class Kind { mpc, fixed } kind = Kind::mpc;
  std::size_t fixed_level = 0;

  static Controller mpc() { return {Kind::mpc, 0}; }
  static Controller fixed(std::size_t level) { return {Kind::fixed, level}; }
};

/// Streams the video over the trace. The first chunk is fetched at the lowest
/// level and its download time is startup delay. Later chunks drain the
/// buffer while downloading; an empty buffer stalls playback.
inline StreamSession simulate_download(const TraceDataset& trace, const BitrateLadder& ladder, const QoEParams& q,
                                       const Predictor& predictor, const Controller& controller,
                                       const SessionConfig& cfg = {}) {
  ladder.validate();
  q.validate();
  cfg.validate();
  if (trace.empty()) throw Error(Errc::trace_exhausted, "empty trace");
  if (controller.kind == Controller::Kind::fixed && controller.fixed_level >= ladder.size())
    throw Error(Errc::invalid_argument, "fixed level out of range");
  StreamSession s;
  s.cfg = cfg;
  PredictorContext ctx;
  ctx.trace = &trace;
  ctx.chunk_s = cfg.chunk_s;
  double now = 0, buffer = 0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < cfg.chunk_count(); ++k) {
    ChunkRecord rec;
    if (buffer + cfg.chunk_s > cfg.buffer_max_s) {
      rec.wait_s = buffer + cfg.chunk_s - cfg.buffer_max_s;
      now += rec.wait_s;
      buffer -= rec.wait_s;
    }
    ctx.now_s = now;
    if (k == 0) {
      rec.level = 0;
    } else if (controller.kind == Controller::Kind::fixed) {
      rec.level = controller.fixed_level;
    } else {
      rec.predicted_mbps = predictor(ctx);
      rec.level = predictor.exact ? mpc_select(buffer, last, predictor.exact(ctx), ladder, q, cfg).level
                                  : mpc_select(buffer, last, rec.predicted_mbps, ladder, q, cfg).level;
    }
    rec.bitrate = ladder.levels[rec.level];
    rec.start_s = now;
    rec.download_s = transfer_time(trace.throughput, now, cfg.chunk_s * rec.bitrate);
    now += rec.download_s;
    if (k == 0) {
      s.startup_delay_s = rec.download_s;
      buffer = cfg.chunk_s;
    } else {
      rec.rebuffer_s = std::max(0.0, rec.download_s - buffer);
      buffer = std::max(0.0, buffer - rec.download_s) + cfg.chunk_s;
    }
    rec.buffer_after_s = buffer;
    ctx.chunk_throughput.push_back(cfg.chunk_s * rec.bitrate / std::max(rec.download_s, 1e-12));
    last = rec.level;
    s.chunks.push_back(rec);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Case study

struct SchemeSummary {
  std::string scheme;
  double mean_qoe = 0;  // per-chunk QoE averaged over traces
  double mean_bitrate = 0;
  double mean_variation = 0;  // per segment
  double mean_rebuffer = 0;   // seconds per segment
  std::vector<double> per_trace_qoe;
};

struct CaseStudy {
  std::vector<SchemeSummary> schemes;

  std::string table_csv() const {
    std::string out = "scheme,mean_qoe,mean_bitrate_mbps,mean_bitrate_variation_mbps,mean_rebuffer_s_per_segment\n";
    char buf[256];
    for (const auto& s : schemes) {
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f\n", s.scheme.c_str(), s.mean_qoe, s.mean_bitrate,
                    s.mean_variation, s.mean_rebuffer);
      out += buf;
    }
    return out;
  }

  /// Sorted per-trace QoE values of one scheme, one per line.
  std::string ecdf(const std::string& scheme) const {
    for (const auto& s : schemes)
      if (s.scheme == scheme) {
        auto v = s.per_trace_qoe;
        std::sort(v.begin(), v.end());
        std::string out;
        char buf[64];
        for (double x : v) {
          std::snprintf(buf, sizeof buf, "%.6f\n", x);
          out += buf;
        }
        return out;
      }
    throw Error(Errc::invalid_argument, "unknown scheme " + scheme);
  }
};

/// MPC with each predictor over every trace.
inline CaseStudy run_case_study(const std::vector<TraceDataset>& traces, const std::vector<Predictor>& predictors,
                                const BitrateLadder& ladder = {}, const QoEParams& q = {},
                                const SessionConfig& cfg = {}) {
  if (traces.empty()) throw Error(Errc::invalid_argument, "case study needs at least one trace");
  if (predictors.size() < 2) throw Error(Errc::invalid_argument, "case study needs at least two predictors");
  CaseStudy cs;
  for (const auto& p : predictors) {
    SchemeSummary sum;
    sum.scheme = p.name;
    for (const auto& t : traces) {
      const auto session = simulate_download(t, ladder, q, p, Controller::mpc(), cfg);
      const auto n = static_cast<double>(session.chunks.size());
      const double qoe = qoe_score(session, q).per_chunk;
      sum.per_trace_qoe.push_back(qoe);
      sum.mean_qoe += qoe;
      sum.mean_bitrate += session.bitrate_sum() / n;
      sum.mean_variation += session.variation_sum() / n;
      sum.mean_rebuffer += session.rebuffer_sum() / n;
    }
    const auto m = static_cast<double>(traces.size());
    sum.mean_qoe /= m;
    sum.mean_bitrate /= m;
    sum.mean_variation /= m;
    sum.mean_rebuffer /= m;
    cs.schemes.push_back(std::move(sum));
  }
  return cs;
}

}  // namespace fedtput::abr
