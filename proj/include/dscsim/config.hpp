#pragma once

// key = value files for accelerator configs (.cfg) and devices (.dev).
// Blank lines and '#' comments are ignored; unknown keys are errors.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "dscsim/design_space.hpp"
#include "dscsim/error.hpp"
#include "dscsim/scheduler.hpp"

namespace dscsim {

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Integer, optionally written as a decimal or with an exponent (8.5e9).
inline std::int64_t parse_integer(const std::string& v, const std::string& key, std::size_t line) {
  std::int64_t i = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
  if (ec == std::errc() && p == v.data() + v.size()) return i;
  double d = 0;
  auto [q, ec2] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ec2 != std::errc() || q != v.data() + v.size() || !std::isfinite(d) || d != std::floor(d) ||
      std::fabs(d) > 9.0e18)
    throw ParseError(key + ": expected an integer, got '" + v + "'", line);
  return static_cast<std::int64_t>(d);
}

inline bool parse_bool(const std::string& v, const std::string& key, std::size_t line) {
  if (v == "yes" || v == "true" || v == "1") return true;
  if (v == "no" || v == "false" || v == "0") return false;
  throw ParseError(key + ": expected yes or no, got '" + v + "'", line);
}

using Setter = std::function<void(const std::string& value, std::size_t line)>;

inline void parse_pairs(std::istream& in, const std::map<std::string, Setter>& keys) {
  std::string raw;
  std::size_t line = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(std::string_view(raw).substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line);
    const std::string key = trim(std::string_view(text).substr(0, eq));
    const std::string value = trim(std::string_view(text).substr(eq + 1));
    auto it = keys.find(key);
    if (it == keys.end()) throw ParseError("unknown key '" + key + "'", line);
    if (seen.count(key)) throw ParseError("duplicate key '" + key + "'", line);
    if (value.empty()) throw ParseError(key + ": missing value", line);
    seen[key] = line;
    it->second(value, line);
  }
}

inline std::ifstream open(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  return f;
}

}  // namespace config_detail

inline AcceleratorConfig parse_config(std::istream& in) {
  using namespace config_detail;
  AcceleratorConfig c;
  auto integer = [](auto& field, std::int64_t lo) {
    return [&field, lo](const std::string& v, std::size_t line) {
      const std::int64_t x = parse_integer(v, "value", line);
      if (x < lo) throw ParseError("value " + v + " must be >= " + std::to_string(lo), line);
      field = static_cast<std::remove_reference_t<decltype(field)>>(x);
    };
  };
  std::map<std::string, Setter> keys{
      {"num_mmes", integer(c.num_mmes, 1)},
      {"clock_hz", integer(c.clock_hz, 1)},
      {"weight_bank_bits", integer(c.weight_bank_bits, 1)},
      {"feature_map_bits", integer(c.feature_map_bits, 1)},
      {"bandwidth_bytes_per_s", integer(c.memory.bandwidth_bytes_per_s, 1)},
      {"dma_setup_cycles", integer(c.memory.setup_cycles, 0)},
      {"slices", integer(c.mme.slices, 3)},
      {"kernel_side", integer(c.mme.kernel_side, 1)},
      {"max_line_width", integer(c.mme.max_line_width, 1)},
      {"multiplier_latency", integer(c.mme.multiplier_latency, 0)},
      {"adder_tree_latency", integer(c.mme.adder_tree_latency, 0)},
      {"norm_latency", integer(c.mme.norm_latency, 0)},
      {"requant_latency", integer(c.mme.requant_latency, 0)},
      {"post_op_latency", integer(c.mme.post_op_latency, 0)},
      {"dwc_policy",
       [&](const std::string& v, std::size_t line) {
         if (v == "channel-split")
           c.dwc_policy = DwcPolicy::ChannelSplit;
         else if (v == "time-multiplex")
           c.dwc_policy = DwcPolicy::TimeMultiplex;
         else
           throw ParseError("dwc_policy: expected channel-split or time-multiplex", line);
       }},
      {"pwc_policy",
       [&](const std::string& v, std::size_t line) {
         if (v == "output-split")
           c.pwc_policy = PwcPolicy::OutputSplit;
         else if (v == "input-split")
           c.pwc_policy = PwcPolicy::InputSplit;
         else
           throw ParseError("pwc_policy: expected output-split or input-split", line);
       }},
      {"count_elementwise_ops",
       [&](const std::string& v, std::size_t line) { c.count_elementwise_ops = parse_bool(v, "count_elementwise_ops", line); }},
  };
  parse_pairs(in, keys);
  validate(c);
  return c;
}

inline AcceleratorConfig load_config(const std::string& path) {
  auto f = config_detail::open(path);
  return parse_config(f);
}

inline void write_config(std::ostream& out, const AcceleratorConfig& c) {
  out << "num_mmes = " << c.num_mmes << "\nclock_hz = " << c.clock_hz << "\nweight_bank_bits = " << c.weight_bank_bits
      << "\nfeature_map_bits = " << c.feature_map_bits << "\nbandwidth_bytes_per_s = " << c.memory.bandwidth_bytes_per_s
      << "\ndma_setup_cycles = " << c.memory.setup_cycles << "\nslices = " << c.mme.slices
      << "\nkernel_side = " << c.mme.kernel_side << "\nmax_line_width = " << c.mme.max_line_width
      << "\nmultiplier_latency = " << c.mme.multiplier_latency << "\nadder_tree_latency = " << c.mme.adder_tree_latency
      << "\nnorm_latency = " << c.mme.norm_latency << "\nrequant_latency = " << c.mme.requant_latency
      << "\npost_op_latency = " << c.mme.post_op_latency << "\ndwc_policy = " << to_string(c.dwc_policy)
      << "\npwc_policy = " << to_string(c.pwc_policy)
      << "\ncount_elementwise_ops = " << (c.count_elementwise_ops ? "yes" : "no") << "\n";
}

inline DeviceSpec parse_device(std::istream& in) {
  using namespace config_detail;
  DeviceSpec d;
  bool alms = false, m20k = false, dsp = false;
  std::map<std::string, Setter> keys{
      {"name", [&](const std::string& v, std::size_t) { d.name = v; }},
      {"alms", [&](const std::string& v, std::size_t l) { d.alms = parse_integer(v, "alms", l), alms = true; }},
      {"m20k_blocks",
       [&](const std::string& v, std::size_t l) { d.m20k_blocks = parse_integer(v, "m20k_blocks", l), m20k = true; }},
      {"dsp_blocks",
       [&](const std::string& v, std::size_t l) { d.dsp_blocks = parse_integer(v, "dsp_blocks", l), dsp = true; }},
  };
  parse_pairs(in, keys);
  if (!alms || !m20k || !dsp) throw ParseError("device file needs alms, m20k_blocks and dsp_blocks");
  try {
    validate(d);
  } catch (const ShapeError& e) {
    throw ParseError(e.what());
  }
  return d;
}

inline DeviceSpec load_device(const std::string& path) {
  auto f = config_detail::open(path);
  return parse_device(f);
}

}  // namespace dscsim
