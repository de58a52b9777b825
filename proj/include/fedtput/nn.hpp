#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedtput/error.hpp"
#include "fedtput/preprocess.hpp"
#include "fedtput/rng.hpp"

namespace fedtput {

/// One LSTM layer. Gate blocks are stacked in the order input, forget,
/// cell-candidate, output; wx is (4*hidden x input) and wh is
/// (4*hidden x hidden), both row-major.
struct LstmParams {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::vector<double> wx;
  std::vector<double> wh;
  std::vector<double> b;

  static LstmParams zeros(std::size_t input, std::size_t hidden) {
    return {input, hidden, std::vector<double>(4 * hidden * input), std::vector<double>(4 * hidden * hidden),
            std::vector<double>(4 * hidden)};
  }

  std::size_t param_count() const { return wx.size() + wh.size() + b.size(); }

  bool operator==(const LstmParams&) const = default;
};

/// Closed form 4*h*(n + h + 1).
constexpr std::size_t lstm_param_count(std::size_t input, std::size_t hidden) {
  return 4 * hidden * (input + hidden + 1);
}

struct DenseParams {
  std::size_t input = 0;
  std::vector<double> w;
  std::vector<double> b;

  static DenseParams zeros(std::size_t input) { return {input, std::vector<double>(input), std::vector<double>(1)}; }

  std::size_t param_count() const { return w.size() + b.size(); }

  bool operator==(const DenseParams&) const = default;
};

enum class DenseOwnership { local, global };

struct ModelShape {
  std::size_t input_dim = 6;
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 128;

  bool operator==(const ModelShape&) const = default;
};

/// Full parameter set: lstm1 is the shared global part; lstm2 and (by
/// default) the dense head form the per-client local part.
struct ModelWeights {
  LstmParams lstm1;
  LstmParams lstm2;
  DenseParams dense;
  Scaler scaler;
  DenseOwnership dense_owner = DenseOwnership::local;

  ModelShape shape() const { return {lstm1.input, lstm1.hidden, lstm2.hidden}; }

  bool operator==(const ModelWeights& o) const {
    return lstm1 == o.lstm1 && lstm2 == o.lstm2 && dense == o.dense && scaler == o.scaler &&
           dense_owner == o.dense_owner;
  }
};

/// Gradients share the weight layout.
struct ModelGrads {
  LstmParams lstm1;
  LstmParams lstm2;
  DenseParams dense;

  static ModelGrads zeros_like(const ModelWeights& w) {
    return {LstmParams::zeros(w.lstm1.input, w.lstm1.hidden), LstmParams::zeros(w.lstm2.input, w.lstm2.hidden),
            DenseParams::zeros(w.dense.input)};
  }
};

struct LayerCounts {
  std::size_t lstm1 = 0;
  std::size_t lstm2 = 0;
  std::size_t dense = 0;

  std::size_t total() const { return lstm1 + lstm2 + dense; }
};

inline LayerCounts count_params(const ModelWeights& w) {
  return {w.lstm1.param_count(), w.lstm2.param_count(), w.dense.param_count()};
}

inline ModelWeights zero_model(const ModelShape& s) {
  ModelWeights w;
  w.lstm1 = LstmParams::zeros(s.input_dim, s.hidden1);
  w.lstm2 = LstmParams::zeros(s.hidden1, s.hidden2);
  w.dense = DenseParams::zeros(s.hidden2);
  return w;
}

/// Uniform(+-1/sqrt(fan_in)) matrices, zero biases, forget-gate bias 1.
inline ModelWeights init_model(const ModelShape& s, std::uint64_t seed) {
  ModelWeights w = zero_model(s);
  Rng rng(mix_seed(seed, 0x1417));
  auto fill = [&](std::vector<double>& v, std::size_t fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : v) x = rng.uniform(-a, a);
  };
  for (auto* l : {&w.lstm1, &w.lstm2}) {
    fill(l->wx, l->input);
    fill(l->wh, l->hidden);
    std::fill(l->b.begin() + static_cast<std::ptrdiff_t>(l->hidden),
              l->b.begin() + static_cast<std::ptrdiff_t>(2 * l->hidden), 1.0);
  }
  fill(w.dense.w, w.dense.input);
  return w;
}

struct TrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double dropout = 0.2;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw Error(Errc::invalid_argument, "epochs must be >= 1");
    if (batch_size < 1) throw Error(Errc::invalid_argument, "batch size must be >= 1");
    if (!(dropout >= 0 && dropout < 1)) throw Error(Errc::invalid_argument, "dropout must lie in [0, 1)");
    if (!(learning_rate >= 0)) throw Error(Errc::invalid_argument, "learning rate must be >= 0");
  }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-step activations kept for backpropagation through time.
struct LstmTape {
  std::size_t steps = 0;
  std::vector<double> x;      // steps x input
  std::vector<double> gates;  // steps x 4h, post-activation
  std::vector<double> c;      // (steps + 1) x h, row 0 is the zero state
  std::vector<double> h;      // (steps + 1) x h
};

inline void lstm_forward(const LstmParams& p, std::span<const double> x, std::size_t steps, LstmTape& tape) {
  const std::size_t H = p.hidden, N = p.input, G = 4 * H;
  tape.steps = steps;
  tape.x.assign(x.begin(), x.end());
  tape.gates.assign(steps * G, 0.0);
  tape.c.assign((steps + 1) * H, 0.0);
  tape.h.assign((steps + 1) * H, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    double* z = &tape.gates[t * G];
    const double* xt = &tape.x[t * N];
    const double* hp = &tape.h[t * H];
    for (std::size_t r = 0; r < G; ++r) {
      double acc = p.b[r];
      const double* wxr = &p.wx[r * N];
      for (std::size_t k = 0; k < N; ++k) acc += wxr[k] * xt[k];
      const double* whr = &p.wh[r * H];
      for (std::size_t k = 0; k < H; ++k) acc += whr[k] * hp[k];
      z[r] = acc;
    }
    const double* cp = &tape.c[t * H];
    double* ct = &tape.c[(t + 1) * H];
    double* ht = &tape.h[(t + 1) * H];
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = sigmoid(z[j]);
      const double fg = sigmoid(z[H + j]);
      const double gg = std::tanh(z[2 * H + j]);
      const double og = sigmoid(z[3 * H + j]);
      z[j] = ig;
      z[H + j] = fg;
      z[2 * H + j] = gg;
      z[3 * H + j] = og;
      ct[j] = fg * cp[j] + ig * gg;
      ht[j] = og * std::tanh(ct[j]);
    }
  }
}

// dh: steps x h gradient arriving at each h_t from above. Accumulates into
// grad and writes the input gradient (steps x input) into dx when non-null.
inline void lstm_backward(const LstmParams& p, const LstmTape& tape, std::span<const double> dh,
                          LstmParams& grad, std::vector<double>* dx) {
  const std::size_t H = p.hidden, N = p.input, G = 4 * H, T = tape.steps;
  std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), dz(G);
  if (dx) dx->assign(T * N, 0.0);
  for (std::size_t tt = T; tt-- > 0;) {
    const double* a = &tape.gates[tt * G];
    const double* cp = &tape.c[tt * H];
    const double* ct = &tape.c[(tt + 1) * H];
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = a[j], fg = a[H + j], gg = a[2 * H + j], og = a[3 * H + j];
      const double dhj = dh[tt * H + j] + dh_next[j];
      const double tc = std::tanh(ct[j]);
      const double dc = dc_next[j] + dhj * og * (1.0 - tc * tc);
      dz[j] = dc * gg * ig * (1.0 - ig);
      dz[H + j] = dc * cp[j] * fg * (1.0 - fg);
      dz[2 * H + j] = dc * ig * (1.0 - gg * gg);
      dz[3 * H + j] = dhj * tc * og * (1.0 - og);
      dc_next[j] = dc * fg;
    }
    const double* xt = &tape.x[tt * N];
    const double* hp = &tape.h[tt * H];
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (std::size_t r = 0; r < G; ++r) {
      const double g = dz[r];
      if (g == 0.0) continue;
      grad.b[r] += g;
      double* gwx = &grad.wx[r * N];
      const double* wxr = &p.wx[r * N];
      for (std::size_t k = 0; k < N; ++k) gwx[k] += g * xt[k];
      double* gwh = &grad.wh[r * H];
      const double* whr = &p.wh[r * H];
      for (std::size_t k = 0; k < H; ++k) {
        gwh[k] += g * hp[k];
        dh_next[k] += whr[k] * g;
      }
      if (dx) {
        double* dxt = &(*dx)[tt * N];
        for (std::size_t k = 0; k < N; ++k) dxt[k] += wxr[k] * g;
      }
    }
  }
}

}  // namespace detail

/// Activations of one forward pass, reused by backpropagation.
struct ForwardCache {
  detail::LstmTape layer1;
  detail::LstmTape layer2;
  std::vector<double> mask1;  // steps x hidden1, inverted-dropout scale or 0
  std::vector<double> mask2;  // hidden2
  std::vector<double> head_in;
  double output = 0;
};

/// Predicted (scaled) mean throughput for one H x input_dim window. Dropout
/// masks are drawn from rng only when training is set.
inline double model_forward(const ModelWeights& w, std::span<const double> x, bool training, Rng* rng,
                            ForwardCache& cache, double dropout = 0.2) {
  const std::size_t n = w.lstm1.input;
  if (n == 0 || x.size() % n != 0 || x.empty())
    throw Error(Errc::shape_mismatch, "input of " + std::to_string(x.size()) + " values for input_dim " +
                                          std::to_string(n));
  if (w.lstm2.input != w.lstm1.hidden || w.dense.input != w.lstm2.hidden)
    throw Error(Errc::shape_mismatch, "inconsistent layer shapes");
  const std::size_t steps = x.size() / n;
  const std::size_t h1 = w.lstm1.hidden, h2 = w.lstm2.hidden;
  const bool drop = training && dropout > 0;
  if (drop && !rng) throw Error(Errc::invalid_argument, "training forward needs an rng");
  const double keep_scale = drop ? 1.0 / (1.0 - dropout) : 1.0;

  detail::lstm_forward(w.lstm1, x, steps, cache.layer1);

  std::vector<double> mid(steps * h1);
  cache.mask1.assign(steps * h1, 1.0);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < h1; ++j) {
      if (drop) cache.mask1[t * h1 + j] = rng->uniform() < dropout ? 0.0 : keep_scale;
      mid[t * h1 + j] = cache.layer1.h[(t + 1) * h1 + j] * cache.mask1[t * h1 + j];
    }
  detail::lstm_forward(w.lstm2, mid, steps, cache.layer2);

  cache.mask2.assign(h2, 1.0);
  cache.head_in.resize(h2);
  double out = w.dense.b[0];
  for (std::size_t j = 0; j < h2; ++j) {
    if (drop) cache.mask2[j] = rng->uniform() < dropout ? 0.0 : keep_scale;
    cache.head_in[j] = cache.layer2.h[steps * h2 + j] * cache.mask2[j];
    out += w.dense.w[j] * cache.head_in[j];
  }
  cache.output = out;
  return out;
}

inline double model_forward(const ModelWeights& w, std::span<const double> x) {
  ForwardCache cache;
  return model_forward(w, x, false, nullptr, cache);
}

/// Accumulates d(output)/d(params) * upstream into grads.
inline void model_backward(const ModelWeights& w, const ForwardCache& cache, double upstream, ModelGrads& grads) {
  const std::size_t steps = cache.layer1.steps;
  const std::size_t h2 = w.lstm2.hidden;
  grads.dense.b[0] += upstream;
  std::vector<double> dh2(steps * h2, 0.0);
  for (std::size_t j = 0; j < h2; ++j) {
    grads.dense.w[j] += upstream * cache.head_in[j];
    dh2[(steps - 1) * h2 + j] = upstream * w.dense.w[j] * cache.mask2[j];
  }
  std::vector<double> dmid;
  detail::lstm_backward(w.lstm2, cache.layer2, dh2, grads.lstm2, &dmid);
  for (std::size_t i = 0; i < dmid.size(); ++i) dmid[i] *= cache.mask1[i];
  detail::lstm_backward(w.lstm1, cache.layer1, dmid, grads.lstm1, nullptr);
}

inline double mae_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size())
    throw Error(Errc::length_mismatch, std::to_string(pred.size()) + " vs " + std::to_string(target.size()));
  if (pred.empty()) throw Error(Errc::length_mismatch, "empty input");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

/// Gradient of the batch-mean MAE over samples[indices]; the subgradient of
/// |r| at r = 0 is 0. Returns the batch loss through loss_out when given.
inline ModelGrads backward(const ModelWeights& w, const SampleSet& samples, std::span<const std::size_t> indices,
                           bool training = false, Rng* rng = nullptr, double dropout = 0.2,
                           double* loss_out = nullptr) {
  if (indices.empty()) throw Error(Errc::invalid_argument, "empty batch");
  ModelGrads g = ModelGrads::zeros_like(w);
  ForwardCache cache;
  const double inv = 1.0 / static_cast<double>(indices.size());
  double loss = 0;
  for (auto i : indices) {
    const double y = model_forward(w, samples.input(i), training, rng, cache, dropout);
    const double r = y - samples.targets[i];
    loss += std::abs(r);
    const double s = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
    if (s != 0) model_backward(w, cache, s * inv, g);
  }
  if (loss_out) *loss_out = loss * inv;
  return g;
}

inline ModelGrads backward(const ModelWeights& w, const SampleSet& samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return backward(w, samples, idx);
}

/// Visits (param, grad) vector pairs in a fixed order.
template <typename Fn>
void for_each_param(ModelWeights& w, ModelGrads& g, Fn&& fn) {
  fn(w.lstm1.wx, g.lstm1.wx);
  fn(w.lstm1.wh, g.lstm1.wh);
  fn(w.lstm1.b, g.lstm1.b);
  fn(w.lstm2.wx, g.lstm2.wx);
  fn(w.lstm2.wh, g.lstm2.wh);
  fn(w.lstm2.b, g.lstm2.b);
  fn(w.dense.w, g.dense.w);
  fn(w.dense.b, g.dense.b);
}

inline std::vector<double> predict(const ModelWeights& w, const SampleSet& samples) {
  std::vector<double> out(samples.size());
  ForwardCache cache;
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = model_forward(w, samples.input(i), false, nullptr, cache);
  return out;
}

struct TrainResult {
  ModelWeights weights;
  std::vector<double> loss_curve;  // mean training MAE per epoch (scaled units)
};

/// Mini-batch Adam on scaled samples with global-norm gradient clipping.
/// Deterministic for a fixed cfg.seed.
inline TrainResult train(ModelWeights w, const SampleSet& samples, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw Error(Errc::empty_dataset, "no training samples");
  if (samples.input_dim != w.lstm1.input)
    throw Error(Errc::shape_mismatch, "samples have input_dim " + std::to_string(samples.input_dim) +
                                          ", model expects " + std::to_string(w.lstm1.input));
  Rng rng(mix_seed(cfg.seed, 0x7A11));
  ModelGrads m = ModelGrads::zeros_like(w);
  ModelGrads v = ModelGrads::zeros_like(w);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      double batch_loss = 0;
      ModelGrads g = backward(w, samples, std::span(order).subspan(start, end - start), cfg.dropout > 0, &rng,
                              cfg.dropout, &batch_loss);
      epoch_loss += batch_loss * static_cast<double>(end - start);

      double sq = 0;
      for_each_param(w, g, [&](auto&, auto& gv) {
        for (double x : gv) sq += x * x;
      });
      const double norm = std::sqrt(sq);
      const double clip = (cfg.clip_norm > 0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      std::vector<std::vector<double>*> ms, vs;
      for_each_param(w, m, [&](auto&, auto& mv) { ms.push_back(&mv); });
      for_each_param(w, v, [&](auto&, auto& vv) { vs.push_back(&vv); });
      std::size_t slot = 0;
      for_each_param(w, g, [&](auto& pv, auto& gv) {
        auto& mv = *ms[slot];
        auto& vv = *vs[slot];
        ++slot;
        for (std::size_t k = 0; k < pv.size(); ++k) {
          const double gk = gv[k] * clip;
          mv[k] = cfg.beta1 * mv[k] + (1.0 - cfg.beta1) * gk;
          vv[k] = cfg.beta2 * vv[k] + (1.0 - cfg.beta2) * gk * gk;
          pv[k] -= cfg.learning_rate * (mv[k] / bc1) / (std::sqrt(vv[k] / bc2) + cfg.epsilon);
        }
      });
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  result.weights = std::move(w);
  return result;
}

}  // namespace fedtput
