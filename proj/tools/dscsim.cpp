// dscsim: cost analytics, weight generation, functional runs, cycle
// simulation and design-space exploration for the DSC accelerator model.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dscsim/dscsim.hpp"

namespace fs = std::filesystem;
using namespace dscsim;

namespace {

constexpr const char* kVersion = "1.0.0";

enum Exit { kOk = 0, kFailure = 1, kParse = 2, kInfeasible = 3, kIo = 4 };

struct Common {
  std::string net;
  std::string weights;
  std::string input;
  std::string config;
  std::string device;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool real = false;
  bool dump = false;
  std::string kind;
  std::string shape;
  bool q16 = false;
  std::string mmes = "1..8";
  std::string bank_bits = "auto";
  std::string fm_bits = "25690112";
};

std::string out_dir(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("DSCSIM_OUT"); env && *env) return env;
  return "dscsim_out";
}

fs::path prepare_out(const Common& c) {
  fs::path dir = out_dir(c);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) throw IoError("cannot write " + p.string());
  return f;
}

void write_text(const fs::path& p, const std::string& text) {
  auto f = open_out(p);
  f << text;
  if (!f) throw IoError("write failed: " + p.string());
}

// Inputs and outputs of one run; identical manifests give identical outputs.
void write_manifest(const fs::path& dir, const std::string& command, const Common& c,
                    const std::vector<fs::path>& outputs) {
  nlohmann::ordered_json j;
  j["tool"] = "dscsim";
  j["version"] = kVersion;
  j["command"] = command;
  nlohmann::ordered_json in;
  if (!c.kind.empty()) in["kind"] = c.kind;
  if (!c.net.empty()) in["net"] = c.net;
  if (!c.weights.empty()) in["weights"] = c.weights;
  if (!c.input.empty()) in["input"] = c.input;
  if (!c.config.empty()) in["config"] = c.config;
  if (!c.device.empty()) in["device"] = c.device;
  if (!c.shape.empty()) in["shape"] = c.shape;
  j["inputs"] = in;
  if (c.seed_given) j["seed"] = c.seed;
  if (command == "run") j["mode"] = c.real ? "real" : "quantized";
  if (command == "explore") j["ranges"] = {{"mmes", c.mmes}, {"bank_bits", c.bank_bits}, {"fm_bits", c.fm_bits}};
  std::vector<std::string> outs;
  for (const auto& p : outputs) outs.push_back(p.string());
  j["outputs"] = outs;
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

TensorShape parse_shape_arg(const std::string& s) {
  std::istringstream in("name shape\ninput " + s + "\n");
  try {
    return parse_network(in).input_shape;
  } catch (const Error&) {
    throw ParseError("bad shape '" + s + "', expected HxWxC");
  }
}

template <typename T>
std::vector<T> parse_range(const std::string& s, const char* what) {
  std::vector<T> v;
  if (s.empty() || s == "none") return v;
  auto num = [&](const std::string& t) {
    try {
      std::size_t pos = 0;
      const long long x = std::stoll(t, &pos);
      if (pos != t.size()) throw std::invalid_argument(t);
      return static_cast<T>(x);
    } catch (const std::exception&) {
      throw ParseError(std::string(what) + ": bad value '" + t + "'");
    }
  };
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      v.push_back(num(item));
    } else {
      const T a = num(item.substr(0, dots)), b = num(item.substr(dots + 2));
      for (T x = a; x <= b; ++x) v.push_back(x);
    }
  }
  return v;
}

int cmd_cost(const Common& c) {
  const NetworkSpec net = load_network(c.net);
  const CostReport cost = network_cost(net);
  std::ostringstream text;
  write_cost_report(text, net, cost);
  std::cout << text.str();
  const fs::path dir = prepare_out(c);
  write_text(dir / "cost.txt", text.str());
  write_manifest(dir, "cost", c, {dir / "cost.txt"});
  return kOk;
}

NetworkSpec toy_network() {
  std::istringstream in(
      "name toy\n"
      "input 10x10x24\n"
      "# expansion 1x1, depthwise 3x3, projection 1x1 with shortcut\n"
      "10x10x24 bottleneck 3 24 1 1\n");
  return parse_network(in);
}

// Calibration input for seeded weights: derived from the same seed.
Tensor calibration_input(const NetworkSpec& net, std::uint64_t seed) { return random_tensor(net.input_shape, seed + 1); }

int cmd_gen(const Common& c) {
  const fs::path dir = prepare_out(c);
  std::vector<fs::path> outs;
  if (c.kind == "random-weights") {
    if (c.net.empty()) throw ParseError("gen random-weights needs --net");
    const NetworkSpec net = load_network(c.net);
    const NetworkWeights w = random_weights(net, c.seed, calibration_input(net, c.seed));
    outs.push_back(dir / "weights.dscb");
    save_bundle(outs.back().string(), net, w);
  } else if (c.kind == "toy-net") {
    outs.push_back(dir / "toy.net");
    auto f = open_out(outs.back());
    write_network(f, toy_network());
  } else if (c.kind == "test-tensor") {
    TensorShape shape{224, 224, 3};
    if (!c.shape.empty()) shape = parse_shape_arg(c.shape);
    if (!c.net.empty()) shape = load_network(c.net).input_shape;
    const Tensor t = random_tensor(shape, c.seed);
    outs.push_back(dir / "input.dsct");
    if (c.q16)
      save_tensor(outs.back().string(), quantize_auto(t));
    else
      save_tensor(outs.back().string(), t);
  } else {
    throw ParseError("unknown gen kind '" + c.kind + "' (random-weights, toy-net, test-tensor)");
  }
  write_manifest(dir, "gen", c, outs);
  for (const auto& p : outs) std::cout << p.string() << "\n";
  return kOk;
}

std::string layer_file(std::size_t i) {
  std::ostringstream s;
  s << "layer_" << std::setw(3) << std::setfill('0') << i << ".dsct";
  return s.str();
}

QTensor as_quantized(const AnyTensor& t) {
  if (auto q = std::get_if<QTensor>(&t)) return *q;
  return quantize_auto(std::get<Tensor>(t));
}

Tensor as_real(const AnyTensor& t) {
  if (auto r = std::get_if<Tensor>(&t)) return *r;
  return dequantize(std::get<QTensor>(t));
}

int cmd_run(const Common& c) {
  const NetworkSpec net = load_network(c.net);
  const NetworkWeights w = load_bundle(c.weights, net);
  const AnyTensor input = load_tensor(c.input);
  const fs::path dir = prepare_out(c);
  std::vector<fs::path> outs{dir / "output.dsct"};
  if (c.dump) fs::create_directories(dir / "activations");
  if (c.real) {
    const RealRun r = run_network(net, w, as_real(input), c.dump);
    save_tensor(outs[0].string(), r.output);
    for (std::size_t i = 0; i < r.activations.size(); ++i) {
      outs.push_back(dir / "activations" / layer_file(i));
      save_tensor(outs.back().string(), r.activations[i]);
    }
    std::cout << "mode = real\nmacs = " << r.macs.macs << "\n";
  } else {
    const QuantizedRun r = run_network(net, w, as_quantized(input), c.dump);
    save_tensor(outs[0].string(), r.output);
    for (std::size_t i = 0; i < r.activations.size(); ++i) {
      outs.push_back(dir / "activations" / layer_file(i));
      save_tensor(outs.back().string(), r.activations[i]);
    }
    std::cout << "mode = quantized\nmacs = " << r.macs.macs << "\nsaturations = " << r.saturations.count << "\n";
  }
  std::cout << "output = " << outs[0].string() << "\n";
  write_manifest(dir, "run", c, outs);
  return kOk;
}

int cmd_simulate(const Common& c) {
  const NetworkSpec net = load_network(c.net);
  const AcceleratorConfig cfg = c.config.empty() ? AcceleratorConfig{} : load_config(c.config);
  if (c.weights.empty() != c.input.empty()) throw ParseError("simulate needs both --weights and --input, or neither");
  const fs::path dir = prepare_out(c);
  std::vector<fs::path> outs{dir / "report.txt", dir / "layers.csv"};
  PerformanceReport rep;
  if (!c.weights.empty()) {
    const NetworkWeights w = load_bundle(c.weights, net);
    const QTensor in = as_quantized(load_tensor(c.input));
    SimResult sim = simulate_network(net, w, in, cfg);
    rep = sim.report;
    outs.push_back(dir / "output.dsct");
    save_tensor(outs.back().string(), *sim.output);
  } else {
    rep = estimate_network(net, cfg);
  }
  std::ostringstream text, csv;
  write_performance_report(text, rep);
  write_layer_csv(csv, rep);
  write_text(outs[0], text.str());
  write_text(outs[1], csv.str());
  std::cout << text.str();
  write_manifest(dir, "simulate", c, outs);
  return kOk;
}

int cmd_explore(const Common& c) {
  const NetworkSpec net = load_network(c.net);
  const DeviceSpec dev = c.device.empty() ? arria10_device() : load_device(c.device);
  ExploreRanges ranges;
  ranges.num_mmes = parse_range<int>(c.mmes, "--mmes");
  ranges.weight_bank_bits = c.bank_bits == "auto" ? std::vector<std::int64_t>{0}
                                                  : parse_range<std::int64_t>(c.bank_bits, "--bank-bits");
  ranges.feature_map_bits = parse_range<std::int64_t>(c.fm_bits, "--fm-bits");
  for (int n : ranges.num_mmes)
    if (n < 1) throw ParseError("--mmes: MME counts must be >= 1");
  AcceleratorConfig base = c.config.empty() ? AcceleratorConfig{} : load_config(c.config);
  const ExploreResult r = explore(net, dev, ranges, base);
  const fs::path dir = prepare_out(c);
  std::ostringstream csv, summary;
  write_explore_csv(csv, r);
  write_pareto_summary(summary, r);
  write_text(dir / "explore.csv", csv.str());
  write_text(dir / "pareto.txt", summary.str());
  std::cout << csv.str() << "\n" << summary.str();
  write_manifest(dir, "explore", c, {dir / "explore.csv", dir / "pareto.txt"});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depthwise-separable CNN accelerator simulator"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Common c;
  auto add_out = [&](CLI::App* s) { s->add_option("--out", c.out, "output directory (default $DSCSIM_OUT or ./dscsim_out)"); };

  auto* cost = app.add_subcommand("cost", "weights, MACs and reduction factors of a network");
  cost->add_option("--net", c.net, "network file")->required();
  add_out(cost);

  auto* gen = app.add_subcommand("gen", "seeded generation: random-weights, toy-net, test-tensor");
  gen->add_option("kind", c.kind, "random-weights | toy-net | test-tensor")->required();
  gen->add_option("--seed", c.seed, "PRNG seed")->required();
  gen->add_option("--net", c.net, "network file (random-weights; test-tensor shape)");
  gen->add_option("--shape", c.shape, "test-tensor shape HxWxC (default 224x224x3)");
  gen->add_flag("--q16", c.q16, "write the test tensor quantized");
  add_out(gen);

  auto* run = app.add_subcommand("run", "functional reference run");
  run->add_option("--net", c.net, "network file")->required();
  run->add_option("--weights", c.weights, "weight bundle")->required();
  run->add_option("--input", c.input, "input tensor")->required();
  auto* quant = run->add_flag("--quantized", "16-bit fixed point (default)");
  run->add_flag("--real", c.real, "double precision")->excludes(quant);
  run->add_flag("--dump-activations", c.dump, "write every layer output");
  add_out(run);

  auto* sim = app.add_subcommand("simulate", "cycle simulation; bit-exact co-simulation when weights are given");
  sim->add_option("--net", c.net, "network file")->required();
  sim->add_option("--config", c.config, "accelerator config");
  sim->add_option("--weights", c.weights, "weight bundle");
  sim->add_option("--input", c.input, "input tensor");
  add_out(sim);

  auto* exp = app.add_subcommand("explore", "design-space sweep with device gating and Pareto front");
  exp->add_option("--net", c.net, "network file")->required();
  exp->add_option("--device", c.device, "device file (default Arria 10)");
  exp->add_option("--config", c.config, "base accelerator config");
  exp->add_option("--mmes", c.mmes, "MME counts, e.g. 1..8 or 2,4");
  exp->add_option("--bank-bits", c.bank_bits, "weight bank bits per bank, or auto");
  exp->add_option("--fm-bits", c.fm_bits, "feature-map buffer bits");
  add_out(exp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kParse;
  }
  c.seed_given = gen->parsed();

  try {
    if (cost->parsed()) return cmd_cost(c);
    if (gen->parsed()) return cmd_gen(c);
    if (run->parsed()) return cmd_run(c);
    if (sim->parsed()) return cmd_simulate(c);
    if (exp->parsed()) return cmd_explore(c);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kParse;
  } catch (const Error& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kParse;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
