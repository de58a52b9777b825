#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedtput/error.hpp"
#include "fedtput/federation.hpp"
#include "fedtput/metrics.hpp"

namespace fedtput {

enum class ModelKind { ctfl, plain_lstm, baseline };

inline std::string_view model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::ctfl: return "ctfl";
    case ModelKind::plain_lstm: return "plain_lstm";
    case ModelKind::baseline: return "baseline";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  if (s == "ctfl") return ModelKind::ctfl;
  if (s == "plain_lstm" || s == "lstm") return ModelKind::plain_lstm;
  if (s == "baseline" || s == "ar") return ModelKind::baseline;
  return std::nullopt;
}

/// Rows are training tags, columns test tags; cells are percentage R2.
struct EvalMatrix {
  std::vector<std::string> tags;
  std::vector<std::vector<double>> cells;

  double at(std::size_t row, std::size_t col) const { return cells[row][col]; }

  std::string to_csv() const {
    std::string out = "train\\test";
    for (const auto& t : tags) out += "," + t;
    out += "\n";
    char buf[64];
    for (std::size_t r = 0; r < tags.size(); ++r) {
      out += tags[r];
      for (double v : cells[r]) {
        if (std::isfinite(v)) {
          std::snprintf(buf, sizeof buf, ",%.2f", v);
          out += buf;
        } else {
          out += ",NaN";
        }
      }
      out += "\n";
    }
    return out;
  }
};

/// One-step AR(p) forecasts rolled forward over W steps and averaged, from
/// the throughput column of each raw sample.
inline std::vector<double> ar_predict_samples(const ArModel& ar, const SampleSet& raw) {
  std::vector<double> out;
  out.reserve(raw.size());
  const std::size_t d = raw.input_dim;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto x = raw.input(i);
    std::vector<double> hist;
    for (std::size_t r = 0; r < raw.history; ++r) hist.push_back(x[r * d + d - 1]);
    double acc = 0;
    for (std::size_t k = 0; k < raw.horizon; ++k) {
      const double y = ar.forecast(hist);
      acc += y;
      hist.push_back(y);
    }
    out.push_back(acc / static_cast<double>(raw.horizon));
  }
  return out;
}

/// Predictor trained on one dataset, applied to raw samples of another.
struct TrainedPredictor {
  ModelKind kind = ModelKind::plain_lstm;
  ModelWeights model;
  ArModel ar;

  std::vector<double> predict(const SampleSet& raw) const {
    return kind == ModelKind::baseline ? ar_predict_samples(ar, raw) : predict_mbps(model, raw);
  }
};

/// Trains one predictor on the training split of ds. ctfl fine-tunes the
/// bootstrap; plain_lstm starts from a fresh initialization; baseline fits
/// AR(H) on the raw training throughput.
inline TrainedPredictor train_predictor(const TraceDataset& ds, ModelKind kind, const RoundConfig& cfg,
                                        const TrainConfig& tcfg, ModelShape shape,
                                        const ModelWeights* bootstrap = nullptr) {
  TrainedPredictor p;
  p.kind = kind;
  if (kind == ModelKind::baseline) {
    auto [train_ds, test_ds] = split_dataset(ds, cfg.train_fraction);
    p.ar = ar_fit(train_ds.throughput, cfg.H);
    return p;
  }
  const auto data = prepare_data(ds, cfg);
  if (kind == ModelKind::ctfl) {
    if (!bootstrap) throw Error(Errc::invalid_argument, "ctfl needs a bootstrap model");
    p.model = *bootstrap;
  } else {
    shape.input_dim = data.train.input_dim;
    p.model = init_model(shape, mix_seed(tcfg.seed, hash_id(ds.client_id)));
  }
  TrainConfig t = tcfg;
  t.seed = mix_seed(tcfg.seed, hash_id(ds.client_id), 1);
  fit_local(p.model, data.train, t);
  return p;
}

/// Trains per row tag on its 70 % split and scores every column tag's
/// held-out 30 %. Cells that fail to evaluate are NaN.
inline EvalMatrix cross_eval(const std::vector<TraceDataset>& datasets, ModelKind kind, const RoundConfig& cfg,
                             const TrainConfig& tcfg, ModelShape shape = {}, const ModelWeights* bootstrap = nullptr) {
  if (datasets.size() < 2) throw Error(Errc::invalid_argument, "cross evaluation needs at least two datasets");
  cfg.validate();
  EvalMatrix m;
  std::vector<std::optional<SampleSet>> tests;
  for (const auto& ds : datasets) {
    m.tags.push_back(ds.client_id);
    try {
      tests.push_back(prepare_data(ds, cfg).test);
    } catch (const Error&) {
      tests.emplace_back();
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : datasets) {
    std::vector<double> cells(datasets.size(), nan);
    std::optional<TrainedPredictor> p;
    try {
      p = train_predictor(row, kind, cfg, tcfg, shape, bootstrap);
    } catch (const Error&) {
    }
    for (std::size_t c = 0; p && c < datasets.size(); ++c) {
      if (!tests[c]) continue;
      try {
        cells[c] = r2_score(tests[c]->targets, p->predict(*tests[c]));
      } catch (const Error&) {
      }
    }
    m.cells.push_back(std::move(cells));
  }
  return m;
}

}  // namespace fedtput
