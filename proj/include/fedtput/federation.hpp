#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedtput/digest.hpp"
#include "fedtput/error.hpp"
#include "fedtput/metrics.hpp"
#include "fedtput/nn.hpp"
#include "fedtput/preprocess.hpp"
#include "fedtput/rng.hpp"
#include "fedtput/trace.hpp"
#include "fedtput/weights_io.hpp"

namespace fedtput {

struct RoundConfig {
  std::size_t H = 5;
  std::size_t W = 1;
  double sigma = 2.0;
  std::size_t epochs_local = 25;
  std::size_t n_rounds = 10;
  double client_fraction = 1.0;
  std::uint64_t seed = 0;
  double train_fraction = 0.7;
  FilterMode filter = FilterMode::prefix;
  bool weighted = false;

  void validate() const {
    if (H < 1) throw Error(Errc::invalid_argument, "H must be >= 1");
    if (W < 1) throw Error(Errc::invalid_argument, "W must be >= 1");
    if (filter != FilterMode::none && !(sigma > 0)) throw Error(Errc::invalid_sigma, std::to_string(sigma));
    if (epochs_local < 1) throw Error(Errc::invalid_argument, "epochs must be >= 1");
    if (!(client_fraction > 0 && client_fraction <= 1))
      throw Error(Errc::invalid_argument, "client fraction must lie in (0, 1]");
    if (!(train_fraction > 0 && train_fraction < 1))
      throw Error(Errc::invalid_argument, "train fraction must lie in (0, 1)");
  }
};

// ---------------------------------------------------------------------------
// Local data preparation and evaluation

/// Raw-scale (unscaled) samples of one dataset's chronological split.
struct PreparedData {
  SampleSet train;
  SampleSet test;
};

inline PreparedData prepare_data(const TraceDataset& ds, const RoundConfig& cfg) {
  if (ds.size() < cfg.H + cfg.W)
    throw Error(Errc::trace_too_short, std::to_string(ds.size()) + " records, need " + std::to_string(cfg.H + cfg.W));
  auto [train_ds, test_ds] = split_dataset(ds, cfg.train_fraction);
  if (train_ds.size() < cfg.H + cfg.W || test_ds.size() < cfg.H + cfg.W)
    throw Error(Errc::trace_too_short, "split leaves fewer than H + W records on one side");
  return {build_samples(train_ds, cfg.H, cfg.W, cfg.sigma, cfg.filter),
          build_samples(test_ds, cfg.H, cfg.W, cfg.sigma, cfg.filter)};
}

/// Predictions in Mbps for raw samples, scaled with the model's own scaler.
inline std::vector<double> predict_mbps(const ModelWeights& w, const SampleSet& raw) {
  if (!w.scaler.fitted()) throw Error(Errc::invalid_argument, "model carries no scaler");
  auto preds = predict(w, apply_scaler(w.scaler, raw));
  for (auto& p : preds) p = w.scaler.invert_target(p);
  return preds;
}

struct EvalScore {
  double r2 = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
};

inline EvalScore evaluate(const ModelWeights& w, const SampleSet& raw) {
  const auto preds = predict_mbps(w, raw);
  EvalScore s;
  s.mae = mean_absolute_error(raw.targets, preds);
  try {
    s.r2 = r2_score(raw.targets, preds);
  } catch (const Error& e) {
    if (e.code() != Errc::zero_variance) throw;
  }
  return s;
}

/// Fits a scaler on train, trains w on the scaled samples and attaches the
/// scaler. Returns the final epoch's training loss.
inline double fit_local(ModelWeights& w, const SampleSet& train_raw, const TrainConfig& tcfg) {
  Scaler scaler = fit_scaler(train_raw);
  auto result = train(w, apply_scaler(scaler, train_raw), tcfg);
  w = std::move(result.weights);
  w.scaler = std::move(scaler);
  return result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
}

struct BootstrapResult {
  ModelWeights weights;
  EvalScore test;
};

/// Trains the full model from scratch on a 4G trace.
inline BootstrapResult train_global_lstm(const TraceDataset& ds_4g, const RoundConfig& cfg, const TrainConfig& tcfg,
                                         ModelShape shape = {}) {
  cfg.validate();
  const auto data = prepare_data(ds_4g, cfg);
  shape.input_dim = data.train.input_dim;
  ModelWeights w = init_model(shape, mix_seed(tcfg.seed, hash_id("bootstrap")));
  fit_local(w, data.train, tcfg);
  return {w, evaluate(w, data.test)};
}

// ---------------------------------------------------------------------------
// Clients

enum class UpdateStatus { ok, skip, dropped };

inline std::string_view update_status_name(UpdateStatus s) {
  switch (s) {
    case UpdateStatus::ok: return "ok";
    case UpdateStatus::skip: return "skip";
    case UpdateStatus::dropped: return "dropped";
  }
  return "?";
}

struct LocalUpdate {
  std::string client_id;
  UpdateStatus status = UpdateStatus::ok;
  ParamSet candidate;  // retrained global part
  std::uint64_t sample_count = 0;
  double train_loss = 0;
  double test_r2 = std::numeric_limits<double>::quiet_NaN();
  double test_mae = std::numeric_limits<double>::quiet_NaN();
  std::string reason;
};

/// On-device state. model holds the installed global part together with
/// the personal local part and the client's scaler.
struct ClientState {
  std::string client_id;
  TraceDataset data;
  std::optional<ModelWeights> model;
  std::optional<PreparedData> prepared;
  LocalUpdate last;
};

inline ClientState make_client(std::string id, TraceDataset data) {
  ClientState cs;
  cs.client_id = std::move(id);
  cs.data = std::move(data);
  return cs;
}

/// First contact: both parts start from the bootstrap snapshot.
inline void join(ClientState& cs, const ModelWeights& bootstrap) {
  if (!cs.model) cs.model = bootstrap;
}

/// Per-client, per-round training seed.
inline std::uint64_t client_seed(std::uint64_t seed, std::string_view client_id, std::size_t round) {
  return mix_seed(seed, hash_id(client_id), round);
}

/// Installs theta_g, retrains both parts on the local train split and keeps
/// the result on the client. The update carries only the global part.
inline LocalUpdate client_local_round(ClientState& cs, const ParamSet& theta_g, const RoundConfig& cfg,
                                      const TrainConfig& tcfg, std::size_t round) {
  LocalUpdate up;
  up.client_id = cs.client_id;
  if (!cs.model) throw Error(Errc::invalid_argument, "client " + cs.client_id + " has not joined");
  try {
    if (!cs.prepared) cs.prepared = prepare_data(cs.data, cfg);
  } catch (const Error& e) {
    if (e.code() != Errc::trace_too_short && e.code() != Errc::empty_dataset) throw;
    up.status = UpdateStatus::skip;
    up.reason = e.what();
    cs.last = up;
    return up;
  }
  ModelWeights w = *cs.model;
  install(w, theta_g);
  TrainConfig local = tcfg;
  local.epochs = cfg.epochs_local;
  local.seed = client_seed(cfg.seed, cs.client_id, round);
  up.train_loss = fit_local(w, cs.prepared->train, local);
  up.sample_count = cs.prepared->train.size();
  const auto score = evaluate(w, cs.prepared->test);
  up.test_r2 = score.r2;
  up.test_mae = score.mae;
  up.candidate = global_part(w);
  cs.model = std::move(w);
  cs.last = up;
  return up;
}

/// Score of the client's personal model with theta_g installed.
inline EvalScore evaluate_client(ClientState& cs, const ParamSet& theta_g, const RoundConfig& cfg) {
  if (!cs.model) throw Error(Errc::invalid_argument, "client " + cs.client_id + " has not joined");
  if (!cs.prepared) cs.prepared = prepare_data(cs.data, cfg);
  ModelWeights w = *cs.model;
  install(w, theta_g);
  return evaluate(w, cs.prepared->test);
}

// ---------------------------------------------------------------------------
// Aggregation

/// Elementwise mean of the candidates, summed in the given order. Positions
/// where every candidate agrees return that value unchanged. With sample
/// counts the mean is weighted by them.
inline ParamSet fed_average(const std::vector<ParamSet>& candidates,
                            const std::vector<std::uint64_t>* sample_counts = nullptr) {
  if (candidates.empty()) throw Error(Errc::empty_round, "no candidates to average");
  for (const auto& c : candidates)
    if (!same_shape(c, candidates.front())) throw Error(Errc::shape_mismatch, "candidates differ in shape");
  if (sample_counts && sample_counts->size() != candidates.size())
    throw Error(Errc::length_mismatch, "one sample count per candidate");
  double total = 0;
  if (sample_counts)
    for (auto n : *sample_counts) total += static_cast<double>(n);
  if (sample_counts && !(total > 0)) throw Error(Errc::empty_round, "zero total sample count");
  const double U = static_cast<double>(candidates.size());

  ParamSet out = candidates.front();
  for (std::size_t l = 0; l < out.size(); ++l) {
    auto& dst = out[l].values;
    for (std::size_t k = 0; k < dst.size(); ++k) {
      const double first = candidates.front()[l].values[k];
      bool all_equal = true;
      double acc = 0;
      for (std::size_t u = 0; u < candidates.size(); ++u) {
        const double v = candidates[u][l].values[k];
        all_equal &= v == first;
        acc += sample_counts ? static_cast<double>((*sample_counts)[u]) * v : v;
      }
      dst[k] = all_equal ? first : acc / (sample_counts ? total : U);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Round driver

struct GlobalState {
  ModelWeights bootstrap;  // theta_4G snapshot
  ParamSet theta_g;
  std::size_t round = 0;
  std::vector<std::string> registry;
};

inline GlobalState make_global_state(const ModelWeights& bootstrap) {
  return {bootstrap, global_part(bootstrap), 0, {}};
}

struct ClientRoundEntry {
  std::string client_id;
  UpdateStatus status = UpdateStatus::ok;
  std::uint64_t sample_count = 0;
  double train_loss = 0;
  double test_r2 = std::numeric_limits<double>::quiet_NaN();
  double test_mae = std::numeric_limits<double>::quiet_NaN();
  std::string reason;
};

struct FedRoundReport {
  std::size_t round = 0;
  std::vector<std::string> participants;
  std::vector<ClientRoundEntry> clients;
  std::string theta_g_sha256;
  std::size_t attempts = 1;

  /// Mean test R2 over clients that returned an update.
  double mean_r2() const {
    double acc = 0;
    std::size_t n = 0;
    for (const auto& c : clients)
      if (c.status == UpdateStatus::ok && std::isfinite(c.test_r2)) {
        acc += c.test_r2;
        ++n;
      }
    return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }
};

inline nlohmann::json to_json(const FedRoundReport& r) {
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : r.clients) {
    nlohmann::json j{{"client_id", c.client_id},
                     {"status", update_status_name(c.status)},
                     {"sample_count", c.sample_count},
                     {"train_loss", num(c.train_loss)},
                     {"test_r2", num(c.test_r2)},
                     {"test_mae", num(c.test_mae)}};
    if (!c.reason.empty()) j["reason"] = c.reason;
    clients.push_back(std::move(j));
  }
  return {{"round", r.round},
          {"participants", r.participants},
          {"clients", std::move(clients)},
          {"mean_test_r2", num(r.mean_r2())},
          {"theta_g_sha256", r.theta_g_sha256},
          {"attempts", r.attempts}};
}

inline std::string params_digest(const ParamSet& ps) { return sha256_hex(encode_params(ps)); }

/// Runs one round for a set of participants and returns one update per
/// participant, in participant order.
class ClientExecutor {
 public:
  virtual ~ClientExecutor() = default;
  /// Called once when a client becomes part of the federation.
  virtual void on_join(const std::string& client_id, const GlobalState& gs) = 0;
  virtual std::vector<LocalUpdate> run_round(std::size_t round, const ParamSet& theta_g,
                                             const std::vector<std::string>& participants) = 0;
};

/// Clients living in this process. Training may run on several threads;
/// every client owns its state, so results do not depend on scheduling.
class InProcessExecutor : public ClientExecutor {
 public:
  InProcessExecutor(std::vector<ClientState>& clients, RoundConfig cfg, TrainConfig tcfg, bool parallel = false)
      : clients_(clients), cfg_(std::move(cfg)), tcfg_(std::move(tcfg)), parallel_(parallel) {}

  void on_join(const std::string& client_id, const GlobalState& gs) override { join(find(client_id), gs.bootstrap); }

  std::vector<LocalUpdate> run_round(std::size_t round, const ParamSet& theta_g,
                                     const std::vector<std::string>& participants) override {
    std::vector<LocalUpdate> out(participants.size());
    std::vector<ClientState*> who;
    for (const auto& id : participants) who.push_back(&find(id));
    broadcast_digests_.emplace_back();
    for (std::size_t i = 0; i < who.size(); ++i) broadcast_digests_.back().push_back(params_digest(theta_g));
    auto work = [&](std::size_t i) { out[i] = client_local_round(*who[i], theta_g, cfg_, tcfg_, round); };
    if (parallel_ && who.size() > 1) {
      std::vector<std::thread> threads;
      std::vector<std::exception_ptr> errors(who.size());
      for (std::size_t i = 0; i < who.size(); ++i)
        threads.emplace_back([&, i] {
          try {
            work(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        });
      for (auto& t : threads) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    } else {
      for (std::size_t i = 0; i < who.size(); ++i) work(i);
    }
    return out;
  }

  // Digest of the theta_g each participant installed, per round.
  const std::vector<std::vector<std::string>>& broadcast_digests() const { return broadcast_digests_; }

 private:
  ClientState& find(const std::string& id) {
    for (auto& c : clients_)
      if (c.client_id == id) return c;
    throw Error(Errc::invalid_argument, "unknown client " + id);
  }

  std::vector<ClientState>& clients_;
  RoundConfig cfg_;
  TrainConfig tcfg_;
  bool parallel_;
  std::vector<std::vector<std::string>> broadcast_digests_;
};

/// A client id and the round (1-based) at which it joins.
struct Enrollment {
  std::string client_id;
  std::size_t join_round = 1;
};

/// Everyone from round 1, or one new client per round when incremental.
inline std::vector<Enrollment> enroll(const std::vector<std::string>& ids, bool incremental) {
  std::vector<Enrollment> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], incremental ? i + 1 : 1});
  return out;
}

/// k = max(1, floor(fraction * N)) clients drawn by a seeded shuffle,
/// returned in ascending id order.
inline std::vector<std::string> sample_clients(std::vector<std::string> registry, double fraction,
                                               std::uint64_t seed, std::size_t round) {
  std::sort(registry.begin(), registry.end());
  if (registry.empty()) return registry;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(registry.size()) + 1e-9)));
  if (k < registry.size()) {
    Rng rng(mix_seed(seed, 0x5A4D, round));
    rng.shuffle(registry);
    registry.resize(k);
    std::sort(registry.begin(), registry.end());
  }
  return registry;
}

using ReportSink = std::function<void(const FedRoundReport&)>;

/// The federated loop: sample, broadcast, collect, average, log.
inline std::vector<FedRoundReport> run_federated(ClientExecutor& exec, GlobalState& gs, const RoundConfig& cfg,
                                                 const std::vector<Enrollment>& enrollment,
                                                 const ReportSink& sink = {}) {
  cfg.validate();
  if (enrollment.empty()) throw Error(Errc::invalid_argument, "no clients");
  for (std::size_t i = 0; i < enrollment.size(); ++i)
    for (std::size_t j = i + 1; j < enrollment.size(); ++j)
      if (enrollment[i].client_id == enrollment[j].client_id)
        throw Error(Errc::invalid_argument, "duplicate client id " + enrollment[i].client_id);
  std::vector<FedRoundReport> reports;
  for (std::size_t r = 1; r <= cfg.n_rounds; ++r) {
    for (const auto& e : enrollment)
      if (e.join_round <= r &&
          std::find(gs.registry.begin(), gs.registry.end(), e.client_id) == gs.registry.end()) {
        gs.registry.push_back(e.client_id);
        exec.on_join(e.client_id, gs);
      }
    const auto participants = sample_clients(gs.registry, cfg.client_fraction, cfg.seed, r);
    FedRoundReport report;
    report.round = r;
    report.participants = participants;
    std::vector<ParamSet> candidates;
    std::vector<std::uint64_t> counts;
    for (std::size_t attempt = 1; attempt <= 2; ++attempt) {
      report.attempts = attempt;
      report.clients.clear();
      candidates.clear();
      counts.clear();
      const auto updates = exec.run_round(r, gs.theta_g, participants);
      for (const auto& u : updates) {
        report.clients.push_back({u.client_id, u.status, u.sample_count, u.train_loss, u.test_r2, u.test_mae, u.reason});
        if (u.status == UpdateStatus::ok) {
          candidates.push_back(u.candidate);
          counts.push_back(u.sample_count);
        }
      }
      if (!candidates.empty()) break;
    }
    if (candidates.empty()) throw Error(Errc::empty_round, "round " + std::to_string(r) + " produced no candidates");
    gs.theta_g = fed_average(candidates, cfg.weighted ? &counts : nullptr);
    gs.round = r;
    report.theta_g_sha256 = params_digest(gs.theta_g);
    if (sink) sink(report);
    reports.push_back(std::move(report));
  }
  return reports;
}

/// Least-squares slope of y against x = 1..n.
inline double trend_slope(const std::vector<double>& y) {
  const auto n = static_cast<double>(y.size());
  if (y.size() < 2) return 0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x = static_cast<double>(i + 1);
    sx += x;
    sy += y[i];
    sxx += x * x;
    sxy += x * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace fedtput
