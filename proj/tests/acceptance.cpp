// Acceptance driver: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "fedtput/abr.hpp"
#include "fedtput/evaluation.hpp"
#include "fedtput/federation.hpp"
#include "fedtput/metrics.hpp"
#include "fedtput/wire.hpp"
#include "reference_lstm.hpp"

using namespace fedtput;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

constexpr ModelShape kShape{6, 16, 16};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome architecture() {
  const auto c = count_params(zero_model({}));
  Outcome o;
  o.pass = c.lstm1 == 69120 && c.lstm2 == 131584 && c.dense == 129 && c.total() == 200833;
  o.detail = "counts [" + std::to_string(c.lstm1) + ", " + std::to_string(c.lstm2) + ", " + std::to_string(c.dense) +
             "] total " + std::to_string(c.total());
  return o;
}

SampleSet random_samples(std::size_t n, std::size_t H, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  SampleSet s;
  s.history = H;
  s.horizon = 1;
  s.input_dim = d;
  for (std::size_t i = 0; i < n * H * d; ++i) s.inputs.push_back(rng.uniform(-1, 1));
  for (std::size_t i = 0; i < n; ++i) s.targets.push_back(rng.uniform(-1, 1));
  return s;
}

Outcome gradients() {
  const double eps = 1e-5;
  std::size_t checked = 0, bad = 0;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto w = init_model({2, 4, 4}, mix_seed(seed, 0xFD));
    const auto s = random_samples(4, 3, 2, mix_seed(seed, 0xFE));
    auto g = backward(w, s);
    for_each_param(w, g, [&](auto& pv, auto& gv) {
      for (std::size_t k = 0; k < pv.size(); ++k) {
        if (std::abs(gv[k]) < 1e-8) continue;
        const double keep = pv[k];
        pv[k] = keep + eps;
        const auto up = testing_support::reference_mae(w, s);
        pv[k] = keep - eps;
        const auto down = testing_support::reference_mae(w, s);
        pv[k] = keep;
        const double fd = static_cast<double>((up - down) / (2 * testing_support::Real(eps)));
        const double rel = std::abs(fd - gv[k]) / std::abs(gv[k]);
        worst = std::max(worst, rel);
        ++checked;
        if (rel > 1e-4) ++bad;
      }
    });
  }
  return {bad == 0, std::to_string(checked) + " components over 50 models, " + std::to_string(bad) +
                        " beyond 1e-4, worst relative error " + fmt("%.2e", worst)};
}

// Shared loopback fixture for the privacy and transparency criteria.
struct LoopbackRun {
  ModelWeights boot;
  std::vector<ClientState> local, remote;
  GlobalState in_process, networked;
  wire::FrameLog log;
};

TraceDataset net_client(std::size_t i) {
  auto ds = synth_trace(mix_seed(41, i), 300,
                        ClientLinearRegime::standardized(25.0 + 10.0 * static_cast<double>(i), {5, -3, 2, 4, -1}, 1.0));
  ds.client_id = "u" + std::to_string(i);
  return ds;
}

std::unique_ptr<LoopbackRun> loopback_run() {
  auto run = std::make_unique<LoopbackRun>();
  RoundConfig cfg;
  cfg.n_rounds = 2;
  cfg.epochs_local = 3;
  cfg.seed = 17;
  TrainConfig tcfg;
  tcfg.epochs = 3;
  tcfg.seed = 17;
  run->boot = train_global_lstm(synth_trace(40, 400, ClientLinearRegime::standardized(30, {4, 6, -2, -4, 3}, 1.0)),
                                cfg, tcfg, {6, 8, 8})
                  .weights;
  for (std::size_t i = 0; i < 2; ++i) {
    run->local.push_back(make_client("u" + std::to_string(i), net_client(i)));
    run->remote.push_back(make_client("u" + std::to_string(i), net_client(i)));
  }
  run->in_process = make_global_state(run->boot);
  InProcessExecutor inproc(run->local, cfg, tcfg);
  run_federated(inproc, run->in_process, cfg, enroll({"u0", "u1"}, false));

  wire::Listener listener({"127.0.0.1", 0});
  const auto port = listener.port();
  std::vector<std::future<std::size_t>> served;
  for (auto& cs : run->remote)
    served.push_back(std::async(std::launch::async, [&, port] {
      return wire::run_client({"127.0.0.1", port}, cs, run->boot, RoundConfig{}, tcfg, {}, &run->log);
    }));
  run->networked = make_global_state(run->boot);
  {
    wire::NetworkExecutor exec(listener, cfg, {2, std::chrono::milliseconds(20000), std::chrono::milliseconds(120000)});
    const auto ids = exec.accept_clients();
    run_federated(exec, run->networked, cfg, enroll(ids, false));
  }
  for (auto& f : served) f.get();
  return run;
}

bool contains(const std::vector<std::uint8_t>& hay, const void* needle, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(needle);
  return std::search(hay.begin(), hay.end(), p, p + n) != hay.end();
}

Outcome mechanics(const LoopbackRun& run) {
  std::vector<std::string> failures;
  Rng rng(3);
  // elementwise mean oracle on random candidates
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t U = 1 + rng.below(6);
    std::vector<ParamSet> cands;
    for (std::size_t u = 0; u < U; ++u) cands.push_back(global_part(init_model({6, 5, 5}, rng.below(1u << 30))));
    const auto avg = fed_average(cands);
    for (std::size_t l = 0; l < avg.size(); ++l)
      for (std::size_t k = 0; k < avg[l].values.size(); ++k) {
        double acc = 0;
        for (const auto& c : cands) acc += c[l].values[k];
        const double mean = U == 1 ? cands[0][l].values[k] : acc / static_cast<double>(U);
        if (avg[l].values[k] != mean) failures.push_back("mean");
      }
  }
  ParamSet ones = global_part(zero_model({6, 5, 5})), threes = ones, twos = ones;
  for (auto& t : ones) std::fill(t.values.begin(), t.values.end(), 1.0);
  for (auto& t : threes) std::fill(t.values.begin(), t.values.end(), 3.0);
  for (auto& t : twos) std::fill(t.values.begin(), t.values.end(), 2.0);
  if (fed_average({ones, threes}) != twos) failures.push_back("ones/threes");
  const auto w = global_part(init_model({6, 5, 5}, 9));
  if (fed_average({w}) != w) failures.push_back("identity");
  if (fed_average({w, w, w}) != w) failures.push_back("idempotence");
  auto neg = w;
  for (auto& t : neg)
    for (auto& v : t.values) v = -v;
  for (const auto& t : fed_average({w, neg}))
    for (double v : t.values)
      if (v != 0.0) failures.push_back("symmetry");

  // no frame to the server carries the local part or raw throughput
  std::size_t frames = 0;
  for (const auto& lf : run.log.frames()) {
    if (!lf.to_server) continue;
    ++frames;
    const auto& payload = lf.frame.payload;
    if (contains(payload, "lstm2", 5) || contains(payload, "dense", 5)) failures.push_back("local layer name on wire");
    const auto& cs = lf.peer == "u0" ? run.remote[0] : run.remote[1];
    for (const auto* vec : {&cs.model->lstm2.wx, &cs.model->lstm2.wh, &cs.model->dense.w})
      for (std::size_t k = 0; k < std::min<std::size_t>(vec->size(), 16); ++k)
        if (contains(payload, &(*vec)[k], sizeof(double))) failures.push_back("local weight bytes on wire");
    for (std::size_t k = 0; k < 32; ++k)
      if (contains(payload, &cs.data.throughput[k], sizeof(double))) failures.push_back("raw throughput on wire");
  }
  Outcome o;
  o.pass = failures.empty() && frames > 0;
  o.detail = "mean/identity/symmetry/idempotence oracles; " + std::to_string(frames) + " client frames scanned; " +
             (failures.empty() ? std::string("no violations") : std::to_string(failures.size()) + " violations, first: " +
                                                                     failures.front());
  return o;
}

Outcome transparency(const LoopbackRun& run) {
  const auto a = params_digest(run.in_process.theta_g), b = params_digest(run.networked.theta_g);
  bool local_equal = true;
  for (std::size_t i = 0; i < 2; ++i) local_equal &= run.local[i].model->lstm2 == run.remote[i].model->lstm2;
  return {a == b && local_equal, "in-process " + a.substr(0, 16) + " networked " + b.substr(0, 16) +
                                     (local_equal ? ", local parts equal" : ", local parts differ")};
}

// ---------------------------------------------------------------------------

const std::array<std::array<double, 5>, 4> kMaps{{{-6, 4, 3, 2, -2}, {5, -6, -3, 3, 2}, {2, 7, 4, -5, -3}, {-4, -5, 2, 6, 4}}};
const std::array<double, 4> kCentres{20, 35, 28, 42};
constexpr double kNoise = 2.0;

std::vector<ClientState> heterogeneous_clients(std::uint64_t seed, std::size_t len) {
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < 4; ++i)
    clients.push_back(make_client("c" + std::to_string(i),
                                  synth_trace(mix_seed(seed, i), len,
                                              ClientLinearRegime::standardized(kCentres[i], kMaps[i], kNoise))));
  return clients;
}

ModelWeights bootstrap_for(std::uint64_t seed, const RoundConfig& cfg, const TrainConfig& tcfg) {
  const auto g4 = ClientLinearRegime::standardized(30, {4, 6, -2, -4, 3}, kNoise);
  return train_global_lstm(synth_trace(mix_seed(seed, 99), 2000, g4), cfg, tcfg, kShape).weights;
}

Outcome ctfl_benefit(std::string& log) {
  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RoundConfig cfg;
    cfg.n_rounds = 8;
    cfg.seed = seed;
    TrainConfig tcfg;
    tcfg.seed = seed;
    const auto boot = bootstrap_for(seed, cfg, tcfg);
    auto clients = heterogeneous_clients(seed, 1000);

    double direct = 0, pooled_r2 = 0;
    SampleSet pooled;
    std::vector<SampleSet> tests;
    for (const auto& c : clients) {
      const auto p = prepare_data(c.data, cfg);
      direct += evaluate(boot, p.test).r2 / 4;
      pooled.append(p.train);
      tests.push_back(p.test);
    }
    auto pw = init_model(kShape, mix_seed(seed, 7));
    TrainConfig ptc = tcfg;
    ptc.epochs = cfg.epochs_local;
    fit_local(pw, pooled, ptc);
    for (const auto& t : tests) pooled_r2 += evaluate(pw, t).r2 / 4;

    auto gs = make_global_state(boot);
    InProcessExecutor exec(clients, cfg, tcfg);
    const auto reports = run_federated(exec, gs, cfg, enroll({"c0", "c1", "c2", "c3"}, false));
    const double fed = reports.back().mean_r2();
    const bool pass = fed >= direct + 5 && fed >= pooled_r2 + 5;
    ok += pass;
    log += "    seed " + std::to_string(seed) + ": federated " + fmt("%.2f", fed) + ", bootstrap " + fmt("%.2f", direct) +
           ", pooled " + fmt("%.2f", pooled_r2) + (pass ? "" : "  (miss)") + "\n";
  }
  return {ok >= 4, std::to_string(ok) + "/5 seeds beat bootstrap and pooled by >= 5 points"};
}

Outcome window_sweep(std::string& log) {
  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ds = synth_trace(mix_seed(seed, 0x57), 1500, ClientLinearRegime::standardized(30, kMaps[seed % 4], kNoise));
    TrainConfig tcfg;
    tcfg.seed = seed;
    double r2[2];
    for (int k = 0; k < 2; ++k) {
      RoundConfig cfg;
      cfg.seed = seed;
      cfg.W = k == 0 ? 1 : 5;
      r2[k] = train_global_lstm(ds, cfg, tcfg, kShape).test.r2;
    }
    const bool pass = r2[0] >= r2[1];
    ok += pass;
    log += "    seed " + std::to_string(seed) + ": W=1 " + fmt("%.2f", r2[0]) + ", W=5 " + fmt("%.2f", r2[1]) +
           (pass ? "" : "  (miss)") + "\n";
  }
  return {ok >= 4, std::to_string(ok) + "/5 seeds with R2(H=5,W=1) >= R2(H=5,W=5)"};
}

double ls_slope(const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  const double xbar = (n + 1) / 2;
  double ybar = 0;
  for (double v : y) ybar += v / n;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double dx = static_cast<double>(i + 1) - xbar;
    num += dx * (y[i] - ybar);
    den += dx * dx;
  }
  return num / den;
}

Outcome convergence(std::string& log) {
  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RoundConfig cfg;
    cfg.n_rounds = 8;
    cfg.seed = seed;
    TrainConfig tcfg;
    tcfg.seed = seed;
    const auto boot = bootstrap_for(seed, cfg, tcfg);
    auto clients = heterogeneous_clients(mix_seed(seed, 0xC7), 1000);
    auto gs = make_global_state(boot);
    InProcessExecutor exec(clients, cfg, tcfg);
    const auto reports = run_federated(exec, gs, cfg, enroll({"c0", "c1", "c2", "c3"}, true));
    std::vector<double> series;
    std::string trace;
    for (const auto& r : reports) {
      series.push_back(r.mean_r2());
      trace += fmt(" %.1f", r.mean_r2());
    }
    const double slope = ls_slope(series);
    const bool pass = slope >= 0;
    ok += pass;
    log += "    seed " + std::to_string(seed) + ": slope " + fmt("%.3f", slope) + " over" + trace +
           (pass ? "" : "  (miss)") + "\n";
  }
  return {ok >= 4, std::to_string(ok) + "/5 seeds with non-negative R2 trend under incremental joining"};
}

// ---------------------------------------------------------------------------

TraceDataset constant_trace(double mbps, std::size_t seconds) {
  TraceDataset ds;
  ds.client_id = "const";
  ds.feature_names = FeatureSchema::canonical().feature_names;
  ds.features.assign(5, std::vector<double>(seconds, 1.0));
  ds.throughput.assign(seconds, mbps);
  for (std::size_t i = 0; i < seconds; ++i) ds.timestamp.push_back(static_cast<double>(i));
  return ds;
}

Outcome metric_oracles() {
  std::vector<std::string> failures;
  auto check = [&](bool c, const char* what) {
    if (!c) failures.push_back(what);
  };
  using V = std::vector<double>;
  check(r2_score(V{1, 2, 3}, V{1, 2, 3}) == 100.0, "r2 perfect");
  check(r2_score(V{1, 2, 3}, V{2, 2, 2}) == 0.0, "r2 mean");
  check(std::abs(r2_score(V{1, 2, 3}, V{1, 2, 2}) - 50.0) < 1e-12, "r2 half");
  try {
    r2_score(V{2, 2, 2}, V{1, 2, 3});
    failures.push_back("r2 zero variance");
  } catch (const Error& e) {
    check(e.code() == Errc::zero_variance, "r2 zero variance code");
  }
  check(harmonic_mean_predict(V{4, 4, 4}) == 4.0, "hm constant");
  check(std::abs(harmonic_mean_predict(V{2, 4}) - 8.0 / 3.0) < 1e-12, "hm pair");
  check(std::abs(harmonic_mean_predict(V{0, 4}) - 2.0 / (1000.0 + 0.25)) < 1e-12, "hm floor");
  check(ewma_predict(V{3, 9, 1, 7}, 1.0) == 7.0, "ewma alpha 1");
  check(ewma_predict(V{0, 4}, 0.5) == 2.0, "ewma half");
  V y{10};
  for (int t = 1; t < 30; ++t) y.push_back(0.9 * y.back());
  check(std::abs(ar_fit(y, 1).coefficients.at(0) - 0.9) < 1e-6, "ar1 recovery");

  abr::StreamSession a, b, c;
  for (double r : {10.0, 10.0}) a.chunks.push_back({0, r, 0, 0, 0, 0, 0, 0});
  for (double r : {10.0, 20.0}) b.chunks.push_back({0, r, 0, 0, 0, 0, 0, 0});
  c.chunks.push_back({0, 6.5, 0, 0, 2.0, 0, 0, 0});
  check(abr::qoe_score(a).total == 20.0, "qoe steady");
  check(abr::qoe_score(b).total == 20.0, "qoe switch");
  check(std::abs(abr::qoe_score(c).total + 2.1) < 1e-12, "qoe rebuffer");

  const auto flat = constant_trace(100, 400);
  const auto s = abr::simulate_download(flat, {}, {}, abr::harmonic_mean_predictor(), abr::Controller::fixed(0));
  bool closed_form = true;
  for (const auto& ch : s.chunks) closed_form &= std::abs(ch.download_s - 0.26) < 1e-12 && ch.rebuffer_s == 0;
  check(closed_form, "constant 100 Mbps download time");

  return {failures.empty(), failures.empty() ? "r2, harmonic mean, EWMA, AR(1), QoE and download examples hold"
                                             : std::to_string(failures.size()) + " failed, first: " + failures.front()};
}

Outcome abr_dominance(std::string& log) {
  const std::uint64_t seed = 1;
  const BurstyRegime cell{};
  RoundConfig cfg;
  cfg.n_rounds = 3;
  cfg.seed = seed;
  cfg.W = 20;  // about five chunks of lookahead
  TrainConfig tcfg;
  tcfg.seed = seed;
  const BurstyRegime lte{cell.high_mbps * 0.6, cell.low_mbps * 0.6, cell.switch_probability};
  const auto boot = train_global_lstm(synth_trace(mix_seed(seed, 99), 1500, lte), cfg, tcfg, kShape);
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < 4; ++i)
    clients.push_back(make_client("c" + std::to_string(i), synth_trace(mix_seed(seed, i + 10), 800, cell)));
  auto gs = make_global_state(boot.weights);
  InProcessExecutor exec(clients, cfg, tcfg);
  const auto reports = run_federated(exec, gs, cfg, enroll({"c0", "c1", "c2", "c3"}, false));

  std::vector<TraceDataset> traces;
  for (std::size_t i = 0; i < 20; ++i) traces.push_back(synth_trace(mix_seed(seed, 1000 + i), 600, cell));
  const auto cs = abr::run_case_study(
      traces, {abr::oracle_predictor(), abr::harmonic_mean_predictor(),
               abr::model_predictor("ctfl", *clients[0].model, cfg.H, cfg.sigma, cfg.filter)});
  int wins = 0;
  for (std::size_t i = 0; i < 20; ++i) wins += cs.schemes[2].per_trace_qoe[i] >= cs.schemes[1].per_trace_qoe[i];
  const bool oracle_ok = cs.schemes[0].mean_qoe >= cs.schemes[1].mean_qoe;
  log += "    bootstrap R2 " + fmt("%.2f", boot.test.r2) + ", last-round client R2 " + fmt("%.2f", reports.back().mean_r2()) +
         "\n";
  for (const auto& s : cs.schemes)
    log += "    " + s.scheme + ": mean QoE " + fmt("%.3f", s.mean_qoe) + ", bitrate " + fmt("%.2f", s.mean_bitrate) +
           ", rebuffer " + fmt("%.3f", s.mean_rebuffer) + " s/chunk\n";
  return {oracle_ok && wins >= 15, std::string("oracle ") + (oracle_ok ? ">=" : "<") + " harmonic mean; ctfl >= hm on " +
                                       std::to_string(wins) + "/20 traces"};
}

// ---------------------------------------------------------------------------

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs every seeded command into root and returns digests.txt per command.
std::map<std::string, std::string> cli_pipeline(const fs::path& root, int port, std::string& err) {
  const std::string bin = FEDTPUT_BIN;
  const auto q = [&](const std::string& rel) { return (root / rel).string(); };
  const auto quiet = " > " + q("log.txt") + " 2>&1";
  const std::vector<std::pair<std::string, std::string>> steps{
      {"synth", "synth --count 3 --length 500 --seed 11 --out " + q("synth")},
      {"synth-bursty", "synth --regime bursty --count 2 --length 700 --seed 12 --out " + q("bursty")},
      {"ingest", "ingest --input " + q("synth/client0.csv") + " --source-tag SYNTH --out " + q("ingest")},
      {"bootstrap", "bootstrap --train " + q("synth/client2.csv") + " --hidden 8 --epochs 3 --seed 5 --out " + q("boot")},
      {"federate", "federate --bootstrap " + q("boot/model.fpw") + " --clients " + q("synth") +
                       " --rounds 2 --epochs 2 --seed 5 --out " + q("fed")},
      {"federate-parallel", "federate --bootstrap " + q("boot/model.fpw") + " --clients " + q("synth") +
                                " --rounds 3 --epochs 2 --seed 5 --parallel --incremental --client-fraction 0.7 --out " +
                                q("fedp")},
      {"eval", "eval --model " + q("fed/clients/client1.fpw") + " --data " + q("synth/client1.csv") + " --out " + q("eval")},
      {"cross-eval", "cross-eval --data " + q("synth/client0.csv") + " " + q("synth/client1.csv") +
                         " --kind plain_lstm --hidden 6 --epochs 2 --seed 5 --out " + q("xeval")},
      {"cross-eval-ctfl", "cross-eval --data " + q("synth/client0.csv") + " " + q("synth/client1.csv") + " --kind ctfl --bootstrap " +
                              q("boot/model.fpw") + " --epochs 2 --seed 5 --out " + q("xctfl")},
      {"abr-sim", "abr-sim --traces " + q("bursty/client0.csv") + " " + q("bursty/client1.csv") +
                      " --predictors hm,ewma,ar,oracle,ctfl --model " + q("fed/clients/client0.fpw") + " --out " + q("abr")},
  };
  std::map<std::string, std::string> out;
  for (const auto& [name, args] : steps) {
    if (shell(bin + " " + args + quiet) != 0) {
      err += name + " failed; ";
      continue;
    }
  }
  // networked federation: aggregator plus two client processes
  const std::string addr = "127.0.0.1:" + std::to_string(port);
  auto server = std::async(std::launch::async, [&] {
    return shell(bin + " federate --bootstrap " + q("boot/model.fpw") + " --serve " + addr +
                 " --client-count 2 --timeout 60 --rounds 2 --epochs 2 --seed 5 --out " + q("srv") + " > " +
                 q("srv.txt") + " 2>&1");
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(400));
  std::vector<std::future<int>> cl;
  for (int i = 0; i < 2; ++i)
    cl.push_back(std::async(std::launch::async, [&, i] {
      const auto id = std::to_string(i);
      return shell(bin + " client --server " + addr + " --bootstrap " + q("boot/model.fpw") + " --data " +
                   q("synth/client" + id + ".csv") + " --timeout 60 --out " + q("cli" + id) + " > " + q("c" + id + ".txt") +
                   " 2>&1");
    }));
  for (auto& f : cl)
    if (f.get() != 0) err += "client failed; ";
  if (server.get() != 0) err += "server failed; ";
  for (const auto& dir : {"synth", "bursty", "ingest", "boot", "fed", "fedp", "eval", "xeval", "xctfl", "abr", "srv",
                          "cli0", "cli1"})
    out[dir] = slurp(root / dir / "digests.txt");
  return out;
}

Outcome determinism(std::string& log) {
  const auto base = fs::temp_directory_path() / ("fedtput_acceptance_" + std::to_string(::getpid()));
  const auto root = base / "run";
  const int port = 43000 + static_cast<int>(::getpid() % 2000);
  std::string err;
  fs::remove_all(base);
  fs::create_directories(root);
  const auto first = cli_pipeline(root, port, err);
  fs::remove_all(root);
  fs::create_directories(root);
  const auto second = cli_pipeline(root, port + 1, err);
  std::size_t same = 0, files = 0;
  std::string differing;
  for (const auto& [dir, digests] : first) {
    files += static_cast<std::size_t>(std::count(digests.begin(), digests.end(), '\n'));
    if (!digests.empty() && digests == second.at(dir)) ++same;
    else differing += " " + dir;
  }
  if (err.empty()) fs::remove_all(base);
  log += "    " + std::to_string(files) + " output files across " + std::to_string(first.size()) + " commands\n";
  if (!err.empty()) log += "    errors: " + err + "\n";
  return {err.empty() && same == first.size(),
          std::to_string(same) + "/" + std::to_string(first.size()) + " commands with identical digests" +
              (differing.empty() ? "" : "; differing:" + differing)};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int id, const char* name, const std::function<Outcome(std::string&)>& fn) {
    std::string log;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(log);
    } catch (const std::exception& e) {
      o = {false, std::string("threw ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fputs(log.c_str(), stdout);
    std::fflush(stdout);
  };

  report(1, "architecture fidelity", [](std::string&) { return architecture(); });
  report(2, "gradient correctness", [](std::string&) { return gradients(); });
  std::unique_ptr<LoopbackRun> run;
  try {
    run = loopback_run();
  } catch (const std::exception& e) {
    std::printf("loopback fixture threw %s\n", e.what());
  }
  report(3, "aggregation mechanics and privacy", [&](std::string&) {
    return run ? mechanics(*run) : Outcome{false, "no loopback run"};
  });
  report(4, "protocol transparency", [&](std::string&) {
    return run ? transparency(*run) : Outcome{false, "no loopback run"};
  });
  report(5, "federated benefit", ctfl_benefit);
  report(6, "window sweep", window_sweep);
  report(7, "convergence trend", convergence);
  report(8, "metric oracles", [](std::string&) { return metric_oracles(); });
  report(9, "ABR dominance", abr_dominance);
  report(10, "determinism", determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
