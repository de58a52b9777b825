// fedtput: command-line front end for ingest, bootstrap, federation,
// evaluation and the ABR case study.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedtput/abr.hpp"
#include "fedtput/digest.hpp"
#include "fedtput/evaluation.hpp"
#include "fedtput/federation.hpp"
#include "fedtput/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedtput;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

int exit_code_for(Errc c) {
  switch (c) {
    case Errc::empty_round:
    case Errc::zero_variance:
    case Errc::insufficient_history:
    case Errc::trace_exhausted:
    case Errc::protocol: return kExitRuntime;
    default: return kExitUsage;
  }
}

// ---------------------------------------------------------------------------
// Shared option groups

struct WindowOpts {
  std::size_t H = 5;
  std::size_t W = 1;
  double sigma = 2.0;
  std::string filter = "prefix";
  double train_fraction = 0.7;

  void add(CLI::App* app) {
    app->add_option("--H", H, "History window (steps)");
    app->add_option("--W", W, "Prediction window (steps)");
    app->add_option("--sigma", sigma, "Gaussian filter sigma");
    app->add_option("--filter-mode", filter, "prefix | trace | none")->check(CLI::IsMember({"prefix", "trace", "none"}));
    app->add_option("--train-fraction", train_fraction, "Chronological training share");
  }

  RoundConfig round_config() const {
    RoundConfig c;
    c.H = H;
    c.W = W;
    c.sigma = sigma;
    c.filter = *parse_filter_mode(filter);
    c.train_fraction = train_fraction;
    return c;
  }
};

struct TrainOpts {
  std::size_t epochs = 25;
  std::size_t batch = 32;
  double lr = 1e-3;
  double dropout = 0.2;
  std::uint64_t seed = 0;

  void add(CLI::App* app, bool with_epochs = true, bool with_seed = true) {
    if (with_epochs) app->add_option("--epochs", epochs, "Training epochs (per round when federating)");
    app->add_option("--batch-size", batch, "Mini-batch size");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--dropout", dropout, "Dropout rate");
    if (with_seed) app->add_option("--seed", seed, "Random seed");
  }

  TrainConfig config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch;
    t.learning_rate = lr;
    t.dropout = dropout;
    t.seed = seed;
    return t;
  }
};

struct ModelOpts {
  std::size_t hidden = 128;
  std::string dense = "local";

  void add(CLI::App* app, bool with_hidden = true) {
    if (with_hidden) app->add_option("--hidden", hidden, "LSTM width of both layers");
    app->add_option("--dense-ownership", dense, "Dense head ownership: local | global")
        ->check(CLI::IsMember({"local", "global"}));
  }
  DenseOwnership owner() const { return dense == "global" ? DenseOwnership::global : DenseOwnership::local; }
};

// ---------------------------------------------------------------------------
// Run bookkeeping

struct Run {
  std::string command;
  std::vector<std::string> argv;
  fs::path out;

  fs::path file(const std::string& name) const { return out / name; }

  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream f(file(name), std::ios::binary);
    if (!f) throw Error(Errc::io, "cannot write " + file(name).string());
    f << text;
  }
};

std::string option_value(const CLI::Option* o) {
  if (o->count() == 0) return o->get_default_str();
  const auto& r = o->results();
  std::string s;
  for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
  return s;
}

std::string digest_file(const fs::path& p) { return sha256_hex(read_bytes(p.string())); }

/// Written before any computation.
void write_manifest(const Run& run, const CLI::App* sub, const std::vector<fs::path>& inputs) {
  json config = json::object();
  std::string seed;
  for (const auto* o : sub->get_options()) {
    const auto name = o->get_single_name();
    if (name.empty() || name == "help") continue;
    config[name] = option_value(o);
    if (name == "seed") seed = option_value(o);
  }
  json digests = json::object();
  for (const auto& p : inputs)
    if (fs::is_regular_file(p)) digests[p.string()] = digest_file(p);
  json m{{"tool", "fedtput"},        {"version", kVersion}, {"command", run.command}, {"argv", run.argv},
         {"config", config},         {"seed", seed},        {"inputs", digests},      {"out", run.out.string()}};
  run.write_text("manifest.json", m.dump(2) + "\n");
}

/// sha256 of every output file except the manifest, sorted by name.
void write_digests(const Run& run) {
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(run.out))
    if (e.is_regular_file()) {
      const auto rel = fs::relative(e.path(), run.out).generic_string();
      if (rel != "manifest.json" && rel != "digests.txt") names.push_back(rel);
    }
  std::sort(names.begin(), names.end());
  std::string text;
  for (const auto& n : names) text += digest_file(run.out / n) + "  " + n + "\n";
  run.write_text("digests.txt", text);
}

SourceTag source_tag(const std::string& s) {
  auto t = parse_source_tag(s);
  if (!t) throw CLI::ValidationError("--source-tag", "unknown source tag " + s);
  return *t;
}

TraceDataset load_trace(const std::string& path, SourceTag tag) {
  if (!fs::is_regular_file(path)) throw Error(Errc::io, "no such file " + path);
  return canonicalize(parse_csv_trace(path, tag), FeatureSchema::canonical());
}

std::vector<fs::path> csv_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::io, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(Errc::empty_dataset, "no .csv files in " + dir.string());
  return out;
}

std::string fmt(double v, int prec = 4) {
  if (!std::isfinite(v)) return "NaN";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw Error(Errc::invalid_argument, "not a number list: " + s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct SynthCmd {
  std::string regime = "linear";
  std::size_t length = 1000;
  std::uint64_t seed = 0;
  std::size_t count = 1;
  std::string prefix = "client";
  double centre = 30;
  std::string slopes = "4,6,-2,-4,3";
  double noise = 1.0;
  double high = BurstyRegime{}.high_mbps, low = BurstyRegime{}.low_mbps, sw = BurstyRegime{}.switch_probability;

  void add(CLI::App* app) {
    app->add_option("--regime", regime, "smooth | bursty | linear")->check(CLI::IsMember({"smooth", "bursty", "linear"}));
    app->add_option("--length", length, "Records per trace");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--count", count, "Number of traces");
    app->add_option("--prefix", prefix, "File name prefix");
    app->add_option("--centre", centre, "linear: throughput at typical features (Mbps)");
    app->add_option("--slopes", slopes, "linear: Mbps per typical spread of each feature");
    app->add_option("--noise", noise, "linear: uniform noise half-width (Mbps)");
    app->add_option("--high", high, "bursty: high-state level (Mbps)");
    app->add_option("--low", low, "bursty: low-state level (Mbps)");
    app->add_option("--switch", sw, "bursty: per-second switch probability");
  }

  int run(const Run& r) const {
    SynthRegime reg = SmoothRegime{};
    if (regime == "bursty") reg = BurstyRegime{high, low, sw};
    if (regime == "linear") {
      const auto s = parse_list(slopes);
      if (s.size() != 5) throw Error(Errc::invalid_argument, "--slopes needs 5 values");
      reg = ClientLinearRegime::standardized(centre, {s[0], s[1], s[2], s[3], s[4]}, noise);
    }
    for (std::size_t i = 0; i < count; ++i) {
      auto ds = synth_trace(mix_seed(seed, i), length, reg);
      const auto name = prefix + std::to_string(i) + ".csv";
      write_csv_trace(ds, r.file(name).string());
      std::cout << name << " " << ds.size() << " records\n";
    }
    return kExitOk;
  }
};

struct IngestCmd {
  std::string input;
  std::string tag;

  void add(CLI::App* app) {
    app->add_option("--input", input, "Raw trace CSV")->required();
    app->add_option("--source-tag", tag, "4G | SIM5G | LUMOS | IRISH | MNWILD | SYNTH")->required();
  }

  int run(const Run& r) const {
    const auto t = source_tag(tag);
    if (!fs::is_regular_file(input)) throw Error(Errc::io, "no such file " + input);
    const auto raw = parse_csv_trace(input, t);
    const auto ds = canonicalize(raw, FeatureSchema::canonical());
    const auto stem = fs::path(input).stem().string();
    write_csv_trace(ds, r.file(stem + ".csv").string());
    json cols = json::object();
    auto minmax = [](const std::vector<double>& v) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (double x : v)
        if (!is_missing(x)) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
      return json{{"min", lo}, {"max", hi}};
    };
    for (std::size_t c = 0; c < ds.feature_names.size(); ++c) cols[ds.feature_names[c]] = minmax(ds.features[c]);
    cols["throughput"] = minmax(ds.throughput);
    json summary{{"client_id", ds.client_id},     {"source", std::string(source_tag_name(t))},
                 {"raw_rows", raw.size()},        {"dropped_rows", raw.dropped_rows},
                 {"canonical_rows", ds.size()},   {"columns", cols}};
    r.write_text("summary.json", summary.dump(2) + "\n");
    std::cout << "rows " << raw.size() << " (dropped " << raw.dropped_rows << "), canonical " << ds.size() << "\n";
    for (auto it = cols.begin(); it != cols.end(); ++it)
      std::cout << "  " << it.key() << ": " << it.value()["min"] << " .. " << it.value()["max"] << "\n";
    return kExitOk;
  }
};

struct BootstrapCmd {
  std::string train_path;
  std::string model_name = "model.fpw";
  std::string tag = "SYNTH";
  WindowOpts win;
  TrainOpts tr;
  ModelOpts model;

  void add(CLI::App* app) {
    app->add_option("--train", train_path, "4G trace CSV")->required();
    app->add_option("--source-tag", tag, "Source tag of the trace");
    win.add(app);
    tr.add(app);
    model.add(app);
  }

  int run(const Run& r) const {
    auto cfg = win.round_config();
    cfg.epochs_local = tr.epochs;
    const auto tcfg = tr.config();
    tcfg.validate();
    cfg.validate();
    const auto ds = load_trace(train_path, source_tag(tag));
    auto result = train_global_lstm(ds, cfg, tcfg, {6, model.hidden, model.hidden});
    result.weights.dense_owner = model.owner();
    save_weights(result.weights, r.file(model_name).string());
    json metrics{{"test_r2", result.test.r2}, {"test_mae", result.test.mae}, {"records", ds.size()}};
    r.write_text("metrics.json", metrics.dump(2) + "\n");
    std::cout << "test R2 " << fmt(result.test.r2, 2) << " %, MAE " << fmt(result.test.mae) << " Mbps\n";
    return kExitOk;
  }
};

struct FederateCmd {
  std::string bootstrap;
  std::string clients_dir;
  std::string tag = "SYNTH";
  std::size_t rounds = 10;
  double client_fraction = 1.0;
  bool weighted = false;
  bool incremental = false;
  bool parallel = false;
  bool in_process = false;
  std::string serve;
  std::size_t client_count = 1;
  double timeout_s = 120;
  WindowOpts win;
  TrainOpts tr;
  ModelOpts model;

  void add(CLI::App* app) {
    app->add_option("--bootstrap", bootstrap, "Bootstrap model (FPW1)")->required();
    app->add_option("--clients", clients_dir, "Directory of client CSV traces (in-process)");
    app->add_option("--source-tag", tag, "Source tag of client traces");
    app->add_option("--rounds", rounds, "Federated rounds");
    app->add_option("--client-fraction", client_fraction, "Share of clients sampled per round");
    app->add_flag("--weighted", weighted, "Weight the average by sample count");
    app->add_flag("--incremental", incremental, "Clients join one per round");
    app->add_flag("--parallel", parallel, "Train in-process clients on threads");
    auto* ip = app->add_flag("--in-process", in_process, "Simulate clients in this process (default)");
    auto* sv = app->add_option("--serve", serve, "Run the aggregator on host:port");
    ip->excludes(sv);
    app->add_option("--client-count", client_count, "Clients to wait for when serving");
    app->add_option("--timeout", timeout_s, "Registration and per-round timeout (s)");
    win.add(app);
    tr.add(app);
    model.add(app, false);
  }

  int run(const Run& r) const {
    auto cfg = win.round_config();
    cfg.epochs_local = tr.epochs;
    cfg.n_rounds = rounds;
    cfg.client_fraction = client_fraction;
    cfg.seed = tr.seed;
    cfg.weighted = weighted;
    const auto tcfg = tr.config();
    tcfg.validate();
    cfg.validate();
    auto boot = load_weights(bootstrap, model.owner());
    auto gs = make_global_state(boot);

    std::ofstream log(r.file("rounds.jsonl"), std::ios::binary);
    auto sink = [&](const FedRoundReport& rep) {
      log << to_json(rep).dump() << "\n";
      log.flush();
      std::cout << "round " << rep.round << ": mean R2 " << fmt(rep.mean_r2(), 2) << " over "
                << rep.participants.size() << " clients\n";
    };

    std::vector<FedRoundReport> reports;
    std::vector<ClientState> clients;
    if (!serve.empty()) {
      wire::Listener listener(wire::parse_endpoint(serve));
      std::cout << "listening on port " << listener.port() << std::endl;
      const auto ms = std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000));
      wire::NetworkExecutor exec(listener, cfg, {client_count, ms, ms});
      const auto ids = exec.accept_clients();
      reports = run_federated(exec, gs, cfg, enroll(ids, incremental), sink);
    } else {
      if (clients_dir.empty()) throw Error(Errc::invalid_argument, "--clients is required in-process");
      const auto t = source_tag(tag);
      std::vector<std::string> ids;
      for (const auto& p : csv_files(clients_dir)) {
        auto ds = load_trace(p.string(), t);
        const auto cid = ds.client_id;
        ids.push_back(cid);
        clients.push_back(make_client(cid, std::move(ds)));
      }
      InProcessExecutor exec(clients, cfg, tcfg, parallel);
      reports = run_federated(exec, gs, cfg, enroll(ids, incremental), sink);
      fs::create_directories(r.file("clients"));
      for (const auto& c : clients)
        if (c.model) save_weights(*c.model, r.file("clients/" + c.client_id + ".fpw").string());
    }
    write_bytes(r.file("global.fpw").string(), encode_params(gs.theta_g));

    std::map<std::string, ClientRoundEntry> last;
    for (const auto& rep : reports)
      for (const auto& c : rep.clients) last[c.client_id] = c;
    std::string csv = "client_id,status,sample_count,test_r2,test_mae\n";
    for (const auto& [id, c] : last) {
      csv += id + "," + std::string(update_status_name(c.status)) + "," + std::to_string(c.sample_count) + "," +
             fmt(c.test_r2) + "," + fmt(c.test_mae) + "\n";
      std::cout << "client " << id << ": R2 " << fmt(c.test_r2, 2) << " %\n";
    }
    r.write_text("client_metrics.csv", csv);
    std::cout << "theta_G sha256 " << params_digest(gs.theta_g) << "\n";
    return kExitOk;
  }
};

struct ClientCmd {
  std::string server;
  std::string bootstrap;
  std::string data;
  std::string tag = "SYNTH";
  std::string id;
  double timeout_s = 600;
  WindowOpts win;
  TrainOpts tr;
  ModelOpts model;

  void add(CLI::App* app) {
    app->add_option("--server", server, "Aggregator host:port")->required();
    app->add_option("--bootstrap", bootstrap, "Local copy of the bootstrap model")->required();
    app->add_option("--data", data, "Local trace CSV")->required();
    app->add_option("--source-tag", tag, "Source tag of the trace");
    app->add_option("--client-id", id, "Client id (default: file stem)");
    app->add_option("--timeout", timeout_s, "Idle timeout waiting for the server (s)");
    app->add_option("--train-fraction", win.train_fraction, "Chronological training share");
    app->add_option("--filter-mode", win.filter, "prefix | trace | none")->check(CLI::IsMember({"prefix", "trace", "none"}));
    tr.add(app, false, false);
    model.add(app, false);
  }

  int run(const Run& r) const {
    auto ds = load_trace(data, source_tag(tag));
    if (!id.empty()) ds.client_id = id;
    const auto cid = ds.client_id;
    auto cs = make_client(cid, std::move(ds));
    const auto boot = load_weights(bootstrap, model.owner());
    wire::ClientOptions opts;
    opts.idle_timeout = std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000));
    const auto served = wire::run_client(wire::parse_endpoint(server), cs, boot, win.round_config(), tr.config(), opts);
    if (cs.model) save_weights(*cs.model, r.file("personal.fpw").string());
    json summary{{"client_id", cs.client_id}, {"rounds", served}, {"test_r2", cs.last.test_r2},
                 {"test_mae", cs.last.test_mae}};
    r.write_text("client.json", summary.dump(2) + "\n");
    std::cout << "client " << cs.client_id << " served " << served << " rounds, R2 " << fmt(cs.last.test_r2, 2)
              << " %\n";
    return kExitOk;
  }
};

struct EvalCmd {
  std::string model_path;
  std::string data;
  std::string tag = "SYNTH";
  std::string split = "test";
  WindowOpts win;

  void add(CLI::App* app) {
    app->add_option("--model", model_path, "Model (FPW1 with scaler)")->required();
    app->add_option("--data", data, "Trace CSV")->required();
    app->add_option("--source-tag", tag, "Source tag of the trace");
    app->add_option("--split", split, "test | all")->check(CLI::IsMember({"test", "all"}));
    win.add(app);
  }

  int run(const Run& r) const {
    const auto w = load_weights(model_path);
    const auto ds = load_trace(data, source_tag(tag));
    const auto cfg = win.round_config();
    cfg.validate();
    const SampleSet samples = split == "all" ? build_samples(ds, cfg.H, cfg.W, cfg.sigma, cfg.filter)
                                             : prepare_data(ds, cfg).test;
    if (samples.input_dim != w.lstm1.input)
      throw Error(Errc::shape_mismatch, "model expects input_dim " + std::to_string(w.lstm1.input) + ", data has " +
                                            std::to_string(samples.input_dim));
    const auto preds = predict_mbps(w, samples);
    PredictionResult res{preds, samples.targets, "model", ds.client_id};
    const double mae = res.mae();
    double r2 = std::numeric_limits<double>::quiet_NaN();
    try {
      r2 = res.r2();
    } catch (const Error& e) {
      if (e.code() != Errc::zero_variance) throw;
    }
    std::string csv = "target,prediction\n";
    for (std::size_t i = 0; i < preds.size(); ++i) csv += fmt(samples.targets[i], 6) + "," + fmt(preds[i], 6) + "\n";
    r.write_text("predictions.csv", csv);
    r.write_text("metrics.json", json{{"r2", std::isfinite(r2) ? json(r2) : json(nullptr)}, {"mae", mae},
                                      {"samples", preds.size()}}
                                         .dump(2) +
                                     "\n");
    std::cout << "R2 " << fmt(r2, 2) << " %, MAE " << fmt(mae) << " Mbps over " << preds.size() << " samples\n";
    return kExitOk;
  }
};

struct CrossEvalCmd {
  std::vector<std::string> data;
  std::string tag = "SYNTH";
  std::string kind = "plain_lstm";
  std::string bootstrap;
  WindowOpts win;
  TrainOpts tr;
  ModelOpts model;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Trace CSVs (at least two)")->required();
    app->add_option("--source-tag", tag, "Source tag of the traces");
    app->add_option("--kind", kind, "ctfl | plain_lstm | baseline")->check(CLI::IsMember({"ctfl", "plain_lstm", "baseline"}));
    app->add_option("--bootstrap", bootstrap, "Bootstrap model for ctfl");
    win.add(app);
    tr.add(app);
    model.add(app);
  }

  int run(const Run& r) const {
    const auto t = source_tag(tag);
    std::vector<TraceDataset> sets;
    for (const auto& d : data) sets.push_back(load_trace(d, t));
    auto cfg = win.round_config();
    cfg.epochs_local = tr.epochs;
    const auto tcfg = tr.config();
    tcfg.validate();
    std::optional<ModelWeights> boot;
    if (!bootstrap.empty()) boot = load_weights(bootstrap, model.owner());
    const auto k = *parse_model_kind(kind);
    if (k == ModelKind::ctfl && !boot) throw Error(Errc::invalid_argument, "--kind ctfl needs --bootstrap");
    const auto m = cross_eval(sets, k, cfg, tcfg, {6, model.hidden, model.hidden}, boot ? &*boot : nullptr);
    r.write_text("matrix.csv", m.to_csv());
    std::cout << m.to_csv();
    return kExitOk;
  }
};

struct AbrCmd {
  std::vector<std::string> traces;
  std::string tag = "SYNTH";
  std::string predictors = "hm,oracle";
  std::string model_path;
  double chunk = 4, buffer_max = 30, video = 250;
  std::size_t horizon = 5;
  double mu = 1.0, lambda = 4.3;
  std::string ladder = "6.5,10,15,20,30,50";
  double ewma_alpha = 0.5;
  std::size_t ar_order = 2;
  WindowOpts win;

  void add(CLI::App* app) {
    app->add_option("--traces", traces, "Throughput trace CSVs")->required();
    app->add_option("--source-tag", tag, "Source tag of the traces");
    app->add_option("--predictors", predictors, "Comma list of hm, ewma, ar, oracle, lstm, ctfl");
    app->add_option("--model", model_path, "Model for the lstm / ctfl predictors");
    app->add_option("--chunk", chunk, "Chunk duration (s)");
    app->add_option("--buffer-max", buffer_max, "Buffer cap (s)");
    app->add_option("--video", video, "Video length (s)");
    app->add_option("--horizon", horizon, "MPC lookahead (chunks)");
    app->add_option("--mu", mu, "Smoothness penalty per Mbps");
    app->add_option("--lambda", lambda, "Rebuffer penalty per second");
    app->add_option("--ladder", ladder, "Bitrate ladder (Mbps, ascending)");
    app->add_option("--ewma-alpha", ewma_alpha, "EWMA smoothing factor");
    app->add_option("--ar-order", ar_order, "AR order for the ar predictor");
    win.add(app);
  }

  int run(const Run& r) const {
    const auto t = source_tag(tag);
    std::vector<TraceDataset> sets;
    for (const auto& p : traces) sets.push_back(load_trace(p, t));
    std::optional<ModelWeights> m;
    std::vector<abr::Predictor> preds;
    std::stringstream ss(predictors);
    std::string name;
    while (std::getline(ss, name, ',')) {
      if (name == "hm") preds.push_back(abr::harmonic_mean_predictor());
      else if (name == "ewma") preds.push_back(abr::ewma_predictor(ewma_alpha));
      else if (name == "ar") preds.push_back(abr::ar_predictor(ar_order));
      else if (name == "oracle") preds.push_back(abr::oracle_predictor());
      else if (name == "lstm" || name == "ctfl") {
        if (model_path.empty()) throw Error(Errc::invalid_argument, "predictor " + name + " needs --model");
        if (!m) m = load_weights(model_path);
        preds.push_back(abr::model_predictor(name, *m, win.H, win.sigma, *parse_filter_mode(win.filter)));
      } else {
        throw Error(Errc::invalid_argument, "unknown predictor " + name);
      }
    }
    abr::BitrateLadder lad{parse_list(ladder)};
    abr::SessionConfig sc{chunk, buffer_max, video, horizon};
    const auto cs = abr::run_case_study(sets, preds, lad, {mu, lambda}, sc);
    r.write_text("comparison.csv", cs.table_csv());
    for (const auto& s : cs.schemes) r.write_text("ecdf_" + s.scheme + ".csv", cs.ecdf(s.scheme));
    std::cout << cs.table_csv();
    return kExitOk;
  }
};

std::string upper_env(const std::string& name) {
  std::string s = "FEDTPUT_";
  for (char c : name) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

int run(const std::vector<std::string>& args);

int replay(const std::string& manifest_path, const std::string& out_override) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(Errc::io, "cannot open " + manifest_path);
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("bad manifest: ") + e.what());
  }
  auto argv = m.at("argv").get<std::vector<std::string>>();
  if (!out_override.empty()) {
    bool replaced = false;
    for (std::size_t i = 0; i + 1 < argv.size(); ++i)
      if (argv[i] == "--out") {
        argv[i + 1] = out_override;
        replaced = true;
      }
    if (!replaced) {
      argv.push_back("--out");
      argv.push_back(out_override);
    }
  }
  return run(argv);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Cellular throughput prediction with cross-technology federated learning"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::string out = ".";
  SynthCmd synth;
  IngestCmd ingest;
  BootstrapCmd boot;
  FederateCmd fed;
  ClientCmd client;
  EvalCmd eval;
  CrossEvalCmd xeval;
  AbrCmd abr_cmd;
  std::string manifest, replay_out;

  std::vector<std::pair<CLI::App*, std::function<int(const Run&)>>> commands;
  auto add = [&](const char* name, const char* desc, auto& cmd) {
    auto* sub = app.add_subcommand(name, desc);
    cmd.add(sub);
    sub->add_option("--out", out, "Output directory");
    commands.emplace_back(sub, [&cmd](const Run& r) { return cmd.run(r); });
    return sub;
  };
  add("synth", "Write synthetic traces", synth);
  add("ingest", "Parse a raw trace into the canonical schema", ingest);
  add("bootstrap", "Train the global model on 4G data", boot);
  add("federate", "Run federated rounds (in-process or as aggregator)", fed);
  add("client", "Join a networked federation", client);
  add("eval", "Evaluate a model on a trace", eval);
  add("cross-eval", "Train/test matrix over datasets", xeval);
  add("abr-sim", "ABR case study over throughput traces", abr_cmd);
  auto* rp = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  rp->add_option("--manifest", manifest, "manifest.json of an earlier run")->required();
  rp->add_option("--out", replay_out, "Output directory (default: the recorded one)");

  for (auto* sub : app.get_subcommands({}))
    for (auto* o : sub->get_options()) {
      const auto n = o->get_single_name();
      if (!n.empty() && n != "help" && o->get_positional() == false && !o->get_lnames().empty())
        o->envname(upper_env(n));
    }

  std::vector<const char*> cargv{"fedtput"};
  for (const auto& a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (rp->parsed()) return replay(manifest, replay_out);
    for (auto& [sub, fn] : commands) {
      if (!sub->parsed()) continue;
      // bootstrap also accepts --out path/to/model.fpw
      if (sub->get_name() == "bootstrap" && fs::path(out).extension() == ".fpw") {
        boot.model_name = fs::path(out).filename().string();
        out = fs::path(out).has_parent_path() ? fs::path(out).parent_path().string() : ".";
      }
      Run r{sub->get_name(), args, fs::path(out)};
      fs::create_directories(r.out);
      std::vector<fs::path> inputs;
      auto add_input = [&](const std::string& p) {
        if (!p.empty()) inputs.emplace_back(p);
      };
      add_input(ingest.input);
      add_input(boot.train_path);
      add_input(fed.bootstrap);
      if (!fed.clients_dir.empty() && fs::is_directory(fed.clients_dir))
        for (const auto& f : csv_files(fed.clients_dir)) inputs.push_back(f);
      add_input(client.bootstrap);
      add_input(client.data);
      add_input(eval.model_path);
      add_input(eval.data);
      for (const auto& d : xeval.data) add_input(d);
      add_input(xeval.bootstrap);
      for (const auto& d : abr_cmd.traces) add_input(d);
      add_input(abr_cmd.model_path);
      write_manifest(r, sub, inputs);
      const int rc = fn(r);
      write_digests(r);
      return rc;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}
