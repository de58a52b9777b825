#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <thread>

#include "fedtput/weights_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kBin = FEDTPUT_BIN;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / ("fedtput_cli_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir);
  }

  int run(const std::string& args, const std::string& log = "log.txt", const std::string& env = "") const {
    const std::string cmd = env + " " + kBin + " " + args + " > " + (dir / log).string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const fs::path& p) const {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string p(const std::string& rel) const { return (dir / rel).string(); }

  // four linear clients of 400 records and a narrow bootstrap model
  void small_fixture() {
    ASSERT_EQ(run("synth --count 4 --length 400 --seed 7 --out " + p("clients")), 0);
    ASSERT_EQ(run("synth --count 1 --length 600 --seed 8 --slopes 6,-3,4,2,-5 --out " + p("g4")), 0);
    ASSERT_EQ(run("bootstrap --train " + p("g4/client0.csv") + " --source-tag 4G --hidden 8 --epochs 3 --seed 1 --out " +
                  p("boot")),
              0);
  }

  fs::path dir;
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(Cli, IngestMissingFileIsUsageError) {
  EXPECT_EQ(run("ingest --input " + p("absent.csv") + " --source-tag 4G --out " + p("o")), 2);
}

TEST_F(Cli, UnknownSourceTagPrintsUsage) {
  ASSERT_EQ(run("synth --out " + p("s")), 0);
  EXPECT_EQ(run("ingest --input " + p("s/client0.csv") + " --source-tag bogus --out " + p("o")), 2);
  EXPECT_NE(read(dir / "log.txt").find("Usage"), std::string::npos);
}

TEST_F(Cli, ZeroEpochsRejected) {
  ASSERT_EQ(run("synth --out " + p("s")), 0);
  EXPECT_EQ(run("bootstrap --train " + p("s/client0.csv") + " --epochs 0 --out " + p("b")), 2);
}

TEST_F(Cli, IngestWritesCanonicalCsv) {
  ASSERT_EQ(run("synth --length 50 --out " + p("s")), 0);
  ASSERT_EQ(run("ingest --input " + p("s/client0.csv") + " --source-tag SYNTH --out " + p("i")), 0);
  EXPECT_TRUE(fs::exists(dir / "i" / "client0.csv"));
  const auto summary = json::parse(read(dir / "i" / "summary.json"));
  EXPECT_EQ(summary["canonical_rows"], 50);
  const auto manifest = json::parse(read(dir / "i" / "manifest.json"));
  EXPECT_EQ(manifest["command"], "ingest");
  EXPECT_TRUE(manifest.contains("config"));
}

TEST_F(Cli, EnvironmentOverride) {
  ASSERT_EQ(run("synth --out " + p("s")), 0);
  EXPECT_EQ(run("bootstrap --train " + p("s/client0.csv") + " --out " + p("b"), "log.txt", "FEDTPUT_EPOCHS=0"), 2);
  ASSERT_EQ(run("synth --out " + p("t"), "log.txt", "FEDTPUT_LENGTH=37"), 0);
  EXPECT_EQ(count_lines(read(dir / "t" / "client0.csv")), 38u);
}

TEST_F(Cli, BootstrapDefaultsReachHighR2AndAreDeterministic) {
  ASSERT_EQ(run("synth --seed 3 --length 2000 --out " + p("s")), 0);
  ASSERT_EQ(run("bootstrap --train " + p("s/client0.csv") + " --source-tag 4G --seed 1 --out " + p("a/model.fpw")), 0);
  const auto metrics = json::parse(read(dir / "a" / "metrics.json"));
  EXPECT_GT(metrics["test_r2"].get<double>(), 90.0);
  // identical seeds, identical digests (narrow model keeps the rerun short)
  ASSERT_EQ(run("bootstrap --train " + p("s/client0.csv") + " --hidden 8 --epochs 2 --seed 4 --out " + p("x")), 0);
  ASSERT_EQ(run("bootstrap --train " + p("s/client0.csv") + " --hidden 8 --epochs 2 --seed 4 --out " + p("y")), 0);
  EXPECT_EQ(read(dir / "x" / "digests.txt"), read(dir / "y" / "digests.txt"));
  EXPECT_EQ(read(dir / "x" / "model.fpw"), read(dir / "y" / "model.fpw"));
}

TEST_F(Cli, FederateInProcessWritesOneLinePerRound) {
  small_fixture();
  ASSERT_EQ(run("federate --bootstrap " + p("boot/model.fpw") + " --clients " + p("clients") +
                " --rounds 8 --epochs 2 --in-process --out " + p("f")),
            0);
  const auto rounds = read(dir / "f" / "rounds.jsonl");
  EXPECT_EQ(count_lines(rounds), 8u);
  const auto first = json::parse(rounds.substr(0, rounds.find('\n')));
  EXPECT_EQ(first["round"], 1);
  EXPECT_EQ(first["participants"].size(), 4u);
  EXPECT_EQ(first["theta_g_sha256"].get<std::string>().size(), 64u);
  EXPECT_TRUE(fs::exists(dir / "f" / "global.fpw"));
  EXPECT_EQ(count_lines(read(dir / "f" / "client_metrics.csv")), 5u);
  for (int i = 0; i < 4; ++i) EXPECT_TRUE(fs::exists(dir / "f" / "clients" / ("client" + std::to_string(i) + ".fpw")));
}

TEST_F(Cli, ServeWithoutClientsTimesOut) {
  small_fixture();
  EXPECT_EQ(run("federate --bootstrap " + p("boot/model.fpw") + " --serve 127.0.0.1:0 --client-count 2 --timeout 1 --out " +
                p("f")),
            3);
}

TEST_F(Cli, ServeAndClientsOverLoopbackMatchInProcess) {
  small_fixture();
  const int port = 41000 + static_cast<int>(::getpid() % 2000);
  const std::string common = " --rounds 2 --epochs 2 --seed 3";
  std::thread server([&] {
    EXPECT_EQ(run("federate --bootstrap " + p("boot/model.fpw") + " --serve 127.0.0.1:" + std::to_string(port) +
                      " --client-count 2 --timeout 60" + common + " --out " + p("srv"),
                  "srv.txt"),
              0);
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(500));
  std::vector<std::thread> clients;
  for (int i = 0; i < 2; ++i)
    clients.emplace_back([&, i] {
      const auto id = "client" + std::to_string(i);
      EXPECT_EQ(run("client --server 127.0.0.1:" + std::to_string(port) + " --bootstrap " + p("boot/model.fpw") +
                        " --data " + p("clients/" + id + ".csv") + " --timeout 60 --out " +
                        p("c" + std::to_string(i)),
                    id + ".txt"),
                0);
    });
  for (auto& t : clients) t.join();
  server.join();

  fs::create_directories(dir / "two");
  for (int i = 0; i < 2; ++i)
    fs::copy_file(dir / "clients" / ("client" + std::to_string(i) + ".csv"),
                  dir / "two" / ("client" + std::to_string(i) + ".csv"));
  ASSERT_EQ(run("federate --bootstrap " + p("boot/model.fpw") + " --clients " + p("two") + common + " --out " + p("loc")),
            0);
  const auto last = [&](const fs::path& f) {
    const auto s = read(f);
    const auto lines = s.substr(0, s.size() - 1);
    return json::parse(lines.substr(lines.rfind('\n') + 1))["theta_g_sha256"].get<std::string>();
  };
  EXPECT_EQ(last(dir / "srv" / "rounds.jsonl"), last(dir / "loc" / "rounds.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "c0" / "personal.fpw"));
}

TEST_F(Cli, CrossEvalMatrixShape) {
  ASSERT_EQ(run("synth --count 3 --length 300 --seed 9 --out " + p("s")), 0);
  ASSERT_EQ(run("cross-eval --data " + p("s/client0.csv") + " " + p("s/client1.csv") + " " + p("s/client2.csv") +
                " --kind baseline --out " + p("x")),
            0);
  const auto m = read(dir / "x" / "matrix.csv");
  EXPECT_EQ(count_lines(m), 4u);
  EXPECT_EQ(m.substr(0, m.find('\n')), "train\\test,client0,client1,client2");
}

TEST_F(Cli, AbrSimTwoPredictorsTwoRows) {
  ASSERT_EQ(run("synth --regime bursty --count 2 --length 900 --out " + p("t")), 0);
  ASSERT_EQ(run("abr-sim --traces " + p("t/client0.csv") + " " + p("t/client1.csv") + " --predictors hm,oracle --out " +
                p("a")),
            0);
  const auto table = read(dir / "a" / "comparison.csv");
  EXPECT_EQ(count_lines(table), 3u);
  EXPECT_NE(table.find("\nhm,"), std::string::npos);
  EXPECT_NE(table.find("\noracle,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "a" / "ecdf_oracle.csv"));
}

TEST_F(Cli, EvalDimensionMismatch) {
  small_fixture();
  ASSERT_EQ(run("eval --model " + p("boot/model.fpw") + " --data " + p("clients/client0.csv") + " --out " + p("e")), 0);
  EXPECT_TRUE(json::parse(read(dir / "e" / "metrics.json")).contains("r2"));
  // a model built for four input channels cannot read the six-channel schema
  auto w = fedtput::init_model({4, 8, 8}, 1);
  w.scaler = fedtput::Scaler::make(fedtput::ScalerMode::minmax, {0, 0, 0, 0}, {1, 1, 1, 1});
  fedtput::save_weights(w, p("narrow.fpw"));
  EXPECT_EQ(run("eval --model " + p("narrow.fpw") + " --data " + p("clients/client0.csv") + " --out " + p("e2")), 2);
  EXPECT_NE(read(dir / "log.txt").find("ShapeMismatch"), std::string::npos);
}

TEST_F(Cli, ReplayReproducesDigests) {
  ASSERT_EQ(run("synth --count 2 --length 300 --seed 5 --out " + p("s")), 0);
  ASSERT_EQ(run("bootstrap --train " + p("s/client0.csv") + " --hidden 6 --epochs 2 --seed 2 --out " + p("b")), 0);
  ASSERT_EQ(run("replay --manifest " + p("b/manifest.json") + " --out " + p("r")), 0);
  EXPECT_EQ(read(dir / "b" / "digests.txt"), read(dir / "r" / "digests.txt"));
  EXPECT_FALSE(read(dir / "r" / "digests.txt").empty());
}
