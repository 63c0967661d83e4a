#pragma once

// Line-oriented network description files. See docs/formats.md.
//
//   name mobilenet_v2
//   # input      operator    t  c     n  s   [key=value ...]
//   224x224x3    conv3x3     -  32    1  2
//   112x112x32   bottleneck  1  16    1  1
//   7x7x1280     avgpool7x7  -  -     1  -
//   1x1x1280     pointwise   -  1000  1  1   bn=no relu=none

#include <cctype>
#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/network_model.hpp"

namespace dscsim {

namespace netfile_detail {

inline std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<TensorShape> parse_shape(std::string_view s) {
  std::vector<int> dims;
  std::size_t start = 0;
  while (true) {
    const std::size_t x = s.find('x', start);
    auto v = parse_int(s.substr(start, x == std::string_view::npos ? std::string_view::npos : x - start));
    if (!v) return std::nullopt;
    dims.push_back(*v);
    if (x == std::string_view::npos) break;
    start = x + 1;
  }
  if (dims.size() != 3) return std::nullopt;
  return TensorShape{dims[0], dims[1], dims[2]};
}

// "conv3x3" -> 3 when prefix is "conv"; nullopt otherwise.
inline std::optional<int> square_suffix(std::string_view op, std::string_view prefix) {
  if (op.substr(0, prefix.size()) != prefix) return std::nullopt;
  auto rest = op.substr(prefix.size());
  const std::size_t x = rest.find('x');
  if (x == std::string_view::npos) return std::nullopt;
  auto a = parse_int(rest.substr(0, x));
  auto b = parse_int(rest.substr(x + 1));
  if (!a || !b || *a != *b) return std::nullopt;
  return *a;
}

}  // namespace netfile_detail

inline NetworkSpec parse_network(std::istream& in) {
  using namespace netfile_detail;
  std::string name = "network";
  std::optional<NetworkBuilder> builder;
  std::optional<TensorShape> declared_input;
  std::string raw;
  std::size_t lineno = 0;

  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;

    try {
      if (tok[0] == "name") {
        if (tok.size() < 2) throw ParseError("name needs a value", lineno);
        name = raw.substr(raw.find(tok[1]));
        while (!name.empty() && std::isspace(static_cast<unsigned char>(name.back()))) name.pop_back();
        continue;
      }
      if (tok[0] == "input") {
        if (tok.size() != 2 || !parse_shape(tok[1])) throw ParseError("expected 'input HxWxC'", lineno);
        declared_input = parse_shape(tok[1]);
        continue;
      }
      if (tok.size() < 6) throw ParseError("expected 6 columns: input operator t c n s", lineno);

      std::optional<TensorShape> row_in;
      if (tok[0] != "*") {
        row_in = parse_shape(tok[0]);
        if (!row_in) throw ParseError("bad input shape '" + tok[0] + "'", lineno);
      }
      if (!builder) {
        TensorShape first = declared_input ? *declared_input : row_in.value_or(TensorShape{});
        if (!declared_input && !row_in) throw ParseError("first layer needs an explicit input shape", lineno);
        builder.emplace(name, first);
      }
      if (row_in && !(*row_in == builder->current()))
        throw ParseError("input " + tok[0] + " does not match previous output " + to_string(builder->current()),
                         lineno);

      auto field = [&](std::size_t i, const char* what) -> std::optional<int> {
        if (tok[i] == "-") return std::nullopt;
        auto v = parse_int(tok[i]);
        if (!v) throw ParseError(std::string("bad ") + what + " '" + tok[i] + "'", lineno);
        return v;
      };
      const auto t = field(2, "extend factor");
      const auto c = field(3, "output channels");
      const int n = field(4, "repeat").value_or(1);
      const int s = field(5, "stride").value_or(1);
      if (n < 1) throw ParseError("repeat must be >= 1", lineno);

      std::optional<bool> bn;
      std::optional<Activation> relu;
      int residual = 0;
      for (std::size_t i = 6; i < tok.size(); ++i) {
        const auto eq = tok[i].find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value, got '" + tok[i] + "'", lineno);
        const std::string key = tok[i].substr(0, eq), val = tok[i].substr(eq + 1);
        if (key == "bn") {
          if (val != "yes" && val != "no") throw ParseError("bn must be yes or no", lineno);
          bn = val == "yes";
        } else if (key == "relu") {
          if (val == "none") relu = Activation::None;
          else if (val == "relu") relu = Activation::Relu;
          else if (val == "relu6") relu = Activation::Relu6;
          else throw ParseError("relu must be none, relu or relu6", lineno);
        } else if (key == "residual") {
          auto v = parse_int(val);
          if (!v || *v < 1) throw ParseError("residual must be a positive layer span", lineno);
          residual = *v;
        } else {
          throw ParseError("unknown option '" + key + "'", lineno);
        }
      }

      const std::string& op = tok[1];
      if (op == "bottleneck") {
        if (!t || !c) throw ParseError("bottleneck needs extend factor and output channels", lineno);
        builder->add(expand_bottleneck(builder->current(), {*t, *c, n, s}));
        continue;
      }

      LayerSpec proto;
      if (auto k = square_suffix(op, "conv")) {
        if (!c) throw ParseError("conv needs output channels", lineno);
        proto = standard_conv(*k, s, *c);
      } else if (auto k = square_suffix(op, "depthwise")) {
        proto = depthwise_conv(*k, s);
        if (c) proto.out_channels = *c;
      } else if (op == "pointwise") {
        if (!c) throw ParseError("pointwise needs output channels", lineno);
        proto = pointwise_conv(*c);
        proto.stride = s;
      } else if (auto k = square_suffix(op, "avgpool")) {
        proto = avg_pool(*k, s);
      } else if (auto k = square_suffix(op, "maxpool")) {
        proto = max_pool(*k, s);
      } else {
        throw ParseError("unknown operator '" + op + "'", lineno);
      }
      if (t) throw ParseError("extend factor only applies to bottleneck rows", lineno);
      if (bn) proto.has_batchnorm = *bn;
      if (relu) proto.relu = *relu;
      proto.residual = residual;
      for (int r = 0; r < n; ++r) {
        LayerSpec l = proto;
        if (r > 0) l.stride = 1;
        builder->add(l);
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (!builder) {
    if (declared_input) return NetworkBuilder(name, *declared_input).build();
    throw ParseError("network file has no layers and no input declaration");
  }
  try {
    return builder->build();
  } catch (const Error& e) {
    throw ParseError(e.what(), lineno);
  }
}

inline NetworkSpec load_network(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open network file " + path);
  return parse_network(f);
}

// Writes one row per (already expanded) layer, so bottlenecks come back as
// their PWC/DWC/PWC triples with explicit residual options.
inline void write_network(std::ostream& out, const NetworkSpec& net) {
  out << "name " << net.name << "\n";
  out << "input " << to_string(net.input_shape) << "\n";
  out << "# input operator t c n s options\n";
  for (const auto& l : net.layers) {
    out << to_string(l.input) << ' ';
    switch (l.kind) {
      case LayerKind::StandardConv: out << "conv" << l.kernel << 'x' << l.kernel << " - " << l.out_channels; break;
      case LayerKind::DepthwiseConv: out << "depthwise" << l.kernel << 'x' << l.kernel << " - -"; break;
      case LayerKind::PointwiseConv: out << "pointwise - " << l.out_channels; break;
      case LayerKind::AvgPool: out << "avgpool" << l.kernel << 'x' << l.kernel << " - -"; break;
      case LayerKind::MaxPool: out << "maxpool" << l.kernel << 'x' << l.kernel << " - -"; break;
    }
    out << " 1 " << l.stride;
    if (is_conv(l.kind)) out << " bn=" << (l.has_batchnorm ? "yes" : "no") << " relu=" << to_string(l.relu);
    if (l.residual > 0) out << " residual=" << l.residual;
    out << "\n";
  }
}

}  // namespace dscsim
