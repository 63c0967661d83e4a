#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dscsim/config.hpp"
#include "dscsim/functional.hpp"
#include "dscsim/netfile.hpp"
#include "dscsim/tensor_io.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dscsim;
namespace fs = std::filesystem;

namespace {

const std::string kCli = DSCSIM_CLI;

std::string src(const std::string& rel) { return testutil::source_dir() + "/" + rel; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("dscsim_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  // Runs the CLI; returns its exit status and keeps stdout/stderr.
  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + kCli + "' " + args + " > '" +
                            path("stdout").string() + "' 2> '" + path("stderr").string() + "'";
    const int st = std::system(cmd.c_str());
    out_ = slurp(path("stdout"));
    err_ = slurp(path("stderr"));
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
  }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream f(path(name), std::ios::binary);
    f << text;
  }

  fs::path dir_;
  std::string out_, err_;
};

// "key = value" lines of a report
std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv.emplace(line.substr(0, eq), line.substr(eq + 3));
  }
  return kv;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line) && !line.empty()) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// cost

TEST_F(Cli, CostMobileNet) {
  ASSERT_EQ(run("cost --net '" + src("configs/mobilenet_v2.net") + "' --out '" + path("o").string() + "'"), 0) << err_;
  const auto kv = key_values(out_);
  const double macs = std::stod(kv.at("total_macs"));
  EXPECT_GE(macs, 280e6);
  EXPECT_LE(macs, 340e6);
  EXPECT_EQ(kv.at("total_macs"), std::to_string(network_cost(build_mobilenet_v2()).total_macs));
  EXPECT_EQ(slurp(path("o/cost.txt")), out_);
  EXPECT_TRUE(fs::exists(path("o/manifest.json")));
}

TEST_F(Cli, CostSingleLayerByHand) {
  write("one.net", "input 14x14x64\n14x14x64 conv3x3 - 32 1 1\n");
  ASSERT_EQ(run("cost --net '" + path("one.net").string() + "' --out '" + path("o").string() + "'"), 0) << err_;
  const auto kv = key_values(out_);
  EXPECT_EQ(kv.at("total_weights"), std::to_string(3 * 3 * 64 * 32));
  EXPECT_EQ(kv.at("total_macs"), std::to_string(14 * 14 * 3 * 3 * 64 * 32));
}

TEST_F(Cli, MalformedNetNamesLine) {
  write("bad.net", "input 8x8x4\n8x8x4 pointwise - 8 1 1\n8x8x8 frobnicate - 8 1 1\n");
  EXPECT_EQ(run("cost --net '" + path("bad.net").string() + "' --out '" + path("o").string() + "'"), 2);
  EXPECT_NE(err_.find("line 3"), std::string::npos) << err_;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("gen random-weights --seed 1 --out '" + path("o").string() + "'"), 2);  // no --net
  EXPECT_EQ(run("run --net x --weights y --input z --real --quantized"), 2);
  EXPECT_EQ(run("--version"), 0);
}

// ---------------------------------------------------------------------------
// gen

TEST_F(Cli, GenWeightsDeterministic) {
  const std::string net = src("configs/toy.net");
  ASSERT_EQ(run("gen random-weights --net '" + net + "' --seed 42 --out '" + path("a").string() + "'"), 0) << err_;
  ASSERT_EQ(run("gen random-weights --net '" + net + "' --seed 42 --out '" + path("b").string() + "'"), 0) << err_;
  ASSERT_EQ(run("gen random-weights --net '" + net + "' --seed 43 --out '" + path("c").string() + "'"), 0) << err_;
  const std::string a = slurp(path("a/weights.dscb"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(path("b/weights.dscb")));
  EXPECT_NE(a, slurp(path("c/weights.dscb")));
  // same recipe as the library
  std::ostringstream lib;
  const NetworkSpec toy = load_network(net);
  write_bundle(lib, toy, testutil::seeded_weights(toy, 42));
  EXPECT_EQ(a, lib.str());
}

TEST_F(Cli, GenToyNet) {
  ASSERT_EQ(run("gen toy-net --seed 0 --out '" + path("o").string() + "'"), 0) << err_;
  const NetworkSpec got = load_network(path("o/toy.net").string());
  const NetworkSpec want = testutil::toy_net();
  EXPECT_EQ(got.layers, want.layers);
  EXPECT_EQ(got.layers.size(), 3u);
  for (const auto& l : got.layers) EXPECT_TRUE(l.kind == LayerKind::DepthwiseConv || l.kind == LayerKind::PointwiseConv);
}

TEST_F(Cli, GenTestTensorHeader) {
  ASSERT_EQ(run("gen test-tensor --seed 3 --out '" + path("o").string() + "'"), 0) << err_;
  const std::string b = slurp(path("o/input.dsct"));
  ASSERT_GE(b.size(), 20u);
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = v << 8 | std::uint8_t(b[off + std::size_t(i)]);
    return v;
  };
  EXPECT_EQ(b.substr(0, 4), "DSCT");
  EXPECT_EQ(u32(4), 3u);
  EXPECT_EQ(u32(8), 3u);
  EXPECT_EQ(u32(12), 224u);
  EXPECT_EQ(u32(16), 224u);
  const Tensor t = std::get<Tensor>(load_tensor(path("o/input.dsct").string()));
  EXPECT_EQ(t.data, random_tensor({224, 224, 3}, 3).data);
}

// ---------------------------------------------------------------------------
// run

class CliToy : public Cli {
 protected:
  void SetUp() override {
    Cli::SetUp();
    ASSERT_EQ(run("gen random-weights --net '" + net_ + "' --seed 42 --out '" + path("w").string() + "'"), 0) << err_;
    ASSERT_EQ(run("gen test-tensor --net '" + net_ + "' --seed 7 --q16 --out '" + path("x").string() + "'"), 0)
        << err_;
  }
  std::string toy_args() const {
    return "--net '" + net_ + "' --weights '" + path("w/weights.dscb").string() + "' --input '" +
           path("x/input.dsct").string() + "'";
  }
  const std::string net_ = src("configs/toy.net");
};

TEST_F(CliToy, GoldenOutputComesFromNaiveOracle) {
  const NetworkSpec net = load_network(net_);
  const QTensor oracle_out = oracle::run(net, testutil::seeded_weights(net, 42), testutil::seeded_input(net, 7));
  std::ostringstream bytes;
  write_tensor(bytes, oracle_out);
  EXPECT_EQ(slurp(src("tests/data/toy_golden.dsct")), bytes.str());
}

TEST_F(CliToy, QuantizedRunMatchesGolden) {
  ASSERT_EQ(run("run " + toy_args() + " --out '" + path("r").string() + "'"), 0) << err_;
  EXPECT_EQ(slurp(path("r/output.dsct")), slurp(src("tests/data/toy_golden.dsct")));
  EXPECT_EQ(key_values(out_).at("saturations"), "0");
}

TEST_F(CliToy, DumpActivations) {
  ASSERT_EQ(run("run " + toy_args() + " --dump-activations --out '" + path("r").string() + "'"), 0) << err_;
  for (const char* f : {"layer_000.dsct", "layer_001.dsct", "layer_002.dsct"})
    EXPECT_TRUE(fs::exists(path("r/activations") / f)) << f;
  EXPECT_EQ(slurp(path("r/activations/layer_002.dsct")), slurp(path("r/output.dsct")));
}

TEST_F(CliToy, RealVersusQuantizedWithinBound) {
  ASSERT_EQ(run("run " + toy_args() + " --out '" + path("q").string() + "'"), 0) << err_;
  ASSERT_EQ(run("run " + toy_args() + " --real --out '" + path("r").string() + "'"), 0) << err_;
  const QTensor q = std::get<QTensor>(load_tensor(path("q/output.dsct").string()));
  const Tensor r = std::get<Tensor>(load_tensor(path("r/output.dsct").string()));
  ASSERT_EQ(q.shape, r.shape);
  const double ulp = std::ldexp(1.0, -q.params.frac_bits);
  double worst = 0;
  for (std::size_t i = 0; i < r.data.size(); ++i)
    worst = std::max(worst, std::fabs(r.data[i] - dequantize(q.data[i], q.params)));
  EXPECT_LE(worst, 8 * ulp);  // documented bound for unsaturated runs
  EXPECT_GT(worst, 0.0);
}

TEST_F(CliToy, MissingFilesAreIoErrors) {
  EXPECT_EQ(run("run --net '" + net_ + "' --weights '" + path("nope.dscb").string() + "' --input '" +
                path("x/input.dsct").string() + "' --out '" + path("r").string() + "'"),
            4);
  EXPECT_EQ(run("cost --net '" + path("nope.net").string() + "'"), 4);
}

TEST_F(CliToy, WeightsForAnotherNetworkRejected) {
  write("other.net", "input 10x10x24\n10x10x24 pointwise - 8 1 1\n");
  EXPECT_EQ(run("run --net '" + path("other.net").string() + "' --weights '" + path("w/weights.dscb").string() +
                "' --input '" + path("x/input.dsct").string() + "' --out '" + path("r").string() + "'"),
            2);
}

TEST_F(CliToy, CosimulationOutputMatchesRun) {
  ASSERT_EQ(run("simulate " + toy_args() + " --config '" + src("configs/paper.cfg") + "' --out '" +
                path("s").string() + "'"),
            0)
      << err_;
  EXPECT_EQ(slurp(path("s/output.dsct")), slurp(src("tests/data/toy_golden.dsct")));
  // timing equals the weightless estimate
  const std::string with_data = slurp(path("s/report.txt"));
  ASSERT_EQ(run("simulate --net '" + net_ + "' --out '" + path("e").string() + "'"), 0) << err_;
  EXPECT_EQ(slurp(path("e/report.txt")), with_data);
}

// ---------------------------------------------------------------------------
// simulate

TEST_F(Cli, SimulateMobileNetBand) {
  ASSERT_EQ(run("simulate --net '" + src("configs/mobilenet_v2.net") + "' --config '" + src("configs/paper.cfg") +
                "' --out '" + path("o").string() + "'"),
            0)
      << err_;
  const auto kv = key_values(out_);
  const double ms = std::stod(kv.at("latency_ms"));
  EXPECT_GE(ms, 3.0);
  EXPECT_LE(ms, 4.7);
  const double util = std::stod(kv.at("utilization"));
  EXPECT_NEAR(util, 0.56, 0.08);
  EXPECT_NEAR(std::stod(kv.at("fps")) * ms / 1e3, 1.0, 1e-12);
  const auto rows = csv_rows(slurp(path("o/layers.csv")));
  EXPECT_EQ(rows.size(), 1 + build_mobilenet_v2().layers.size());
}

TEST_F(Cli, SimulateDeterministic) {
  const std::string args = "simulate --net '" + src("configs/mobilenet_v2.net") + "' --config '" +
                           src("configs/paper.cfg") + "'";
  ASSERT_EQ(run(args + " --out '" + path("a").string() + "'"), 0) << err_;
  ASSERT_EQ(run(args + " --out '" + path("b").string() + "'"), 0) << err_;
  for (const char* f : {"report.txt", "layers.csv"}) EXPECT_EQ(slurp(path("a") / f), slurp(path("b") / f)) << f;
  const std::string ma = slurp(path("a/manifest.json"));
  EXPECT_NE(ma.find("\"command\": \"simulate\""), std::string::npos) << ma;
}

TEST_F(Cli, ZeroBandwidthRejectedAtParse) {
  write("zero.cfg", "num_mmes = 4\nbandwidth_bytes_per_s = 0\n");
  EXPECT_EQ(run("simulate --net '" + src("configs/toy.net") + "' --config '" + path("zero.cfg").string() + "' --out '" +
                path("o").string() + "'"),
            2);
  EXPECT_NE(err_.find("line 2"), std::string::npos) << err_;
}

TEST_F(Cli, InfeasibleDesignNamesConstraint) {
  write("small.cfg", "feature_map_bits = 8000000\n");
  EXPECT_EQ(run("simulate --net '" + src("configs/mobilenet_v2.net") + "' --config '" + path("small.cfg").string() +
                "' --out '" + path("o").string() + "'"),
            3);
  EXPECT_NE(err_.find("feature maps need"), std::string::npos) << err_;
  write("bank.cfg", "weight_bank_bits = 1000\n");
  EXPECT_EQ(run("simulate --net '" + src("configs/mobilenet_v2.net") + "' --config '" + path("bank.cfg").string() +
                "' --out '" + path("o").string() + "'"),
            3);
  EXPECT_NE(err_.find("exceeds bank"), std::string::npos) << err_;
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
  ASSERT_EQ(run("cost --net '" + src("configs/toy.net") + "'", "DSCSIM_OUT='" + path("env").string() + "'"), 0) << err_;
  EXPECT_TRUE(fs::exists(path("env/cost.txt")));
}

// ---------------------------------------------------------------------------
// explore

TEST_F(Cli, ExploreArria10) {
  ASSERT_EQ(run("explore --net '" + src("configs/mobilenet_v2.net") + "' --device '" + src("configs/arria10.dev") +
                "' --mmes 1..8 --out '" + path("o").string() + "'"),
            0)
      << err_;
  const auto rows = csv_rows(slurp(path("o/explore.csv")));
  ASSERT_EQ(rows.size(), 9u);
  const auto& header = rows[0];
  auto col = [&](const std::string& name) {
    return std::size_t(std::find(header.begin(), header.end(), name) - header.begin());
  };
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    EXPECT_EQ(r[col("num_mmes")], std::to_string(i));
    if (i == 4) {
      EXPECT_EQ(r[col("alms")], "81753");
      EXPECT_EQ(r[col("dsps")], "1278");
      EXPECT_EQ(r[col("m20k")], "1844");
    }
    EXPECT_EQ(r[col("feasible")], i <= 5 ? "1" : "0") << i;
    if (i >= 6) {
      EXPECT_EQ(r[col("violation")], "dsp");
    }
  }
  const auto kv = key_values(slurp(path("o/pareto.txt")));
  EXPECT_EQ(kv.at("points"), "8");
}

TEST_F(Cli, ExploreEmptyRange) {
  ASSERT_EQ(run("explore --net '" + src("configs/mobilenet_v2.net") + "' --mmes none --out '" + path("o").string() +
                "'"),
            0)
      << err_;
  const auto rows = csv_rows(slurp(path("o/explore.csv")));
  EXPECT_EQ(rows.size(), 1u);  // header only
  EXPECT_EQ(key_values(slurp(path("o/pareto.txt"))).at("points"), "0");
}

TEST_F(Cli, ExploreBadRange) {
  EXPECT_EQ(run("explore --net '" + src("configs/toy.net") + "' --mmes 0..2 --out '" + path("o").string() + "'"), 2);
  EXPECT_EQ(run("explore --net '" + src("configs/toy.net") + "' --mmes x --out '" + path("o").string() + "'"), 2);
}
