#pragma once

// Per-layer quantized parameters and the weight bundle file.
//
// bundle: "DSCB" u32 version (1), u32 layer count, then per layer
//   u32 layer index, u8 kind, i8 output frac_bits, u8 flags
//   (1 weights, 2 bias, 4 batch norm), followed by the present arrays in
//   the order weights, bias, bn scale, bn shift (each a DSCQ record).

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/fixedpoint.hpp"
#include "dscsim/network_model.hpp"
#include "dscsim/tensor.hpp"
#include "dscsim/tensor_io.hpp"

namespace dscsim {

inline constexpr std::array<char, 4> kBundleMagic{'D', 'S', 'C', 'B'};
inline constexpr std::uint32_t kBundleVersion = 1;

struct LayerWeights {
  // [P][N][K][K] standard, [N][1][K][K] depthwise, [P][N][1][1] pointwise
  std::optional<QArray> weights;
  std::optional<QArray> bias;
  std::optional<QuantizedNorm> norm;
  QParams output;  // scale of this layer's output activation
};

struct NetworkWeights {
  std::vector<LayerWeights> layers;
};

inline std::vector<int> expected_weight_dims(const LayerSpec& l) {
  const int n = l.input.channels, k = l.kernel;
  switch (l.kind) {
    case LayerKind::StandardConv: return {l.out_channels, n, k, k};
    case LayerKind::DepthwiseConv: return {n, 1, k, k};
    case LayerKind::PointwiseConv: return {l.out_channels, n, 1, 1};
    default: return {};
  }
}

// Worst-case number of products summed into one accumulator.
inline std::int64_t accumulation_terms(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::StandardConv: return std::int64_t{l.kernel} * l.kernel * l.input.channels;
    case LayerKind::DepthwiseConv: return std::int64_t{l.kernel} * l.kernel;
    case LayerKind::PointwiseConv: return l.input.channels;
    default: return 0;
  }
}

inline void validate_weights(const NetworkSpec& net, const NetworkWeights& w) {
  if (w.layers.size() != net.layers.size())
    throw ShapeError("weights cover " + std::to_string(w.layers.size()) + " layers, network has " +
                     std::to_string(net.layers.size()));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const auto& lw = w.layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    validate(lw.output);
    if (!is_conv(l.kind)) {
      if (lw.weights || lw.bias || lw.norm) throw ShapeError(where + "pooling layer carries parameters");
      continue;
    }
    if (!lw.weights) throw ShapeError(where + "missing weights");
    if (lw.weights->dims != expected_weight_dims(l)) throw ShapeError(where + "weight dims do not match layer");
    const std::size_t outs = static_cast<std::size_t>(l.output.channels);
    if (lw.bias && (lw.bias->dims != std::vector<int>{static_cast<int>(outs)}))
      throw ShapeError(where + "bias length does not match output channels");
    if (l.has_batchnorm != lw.norm.has_value())
      throw ShapeError(where + (l.has_batchnorm ? "missing batch-norm parameters" : "unexpected batch-norm parameters"));
    if (lw.norm && (lw.norm->scale.size() != outs || lw.norm->shift.size() != outs))
      throw ShapeError(where + "batch-norm vector length does not match output channels");
    if (!accumulator_safe(accumulation_terms(l))) throw ShapeError(where + "fan-in exceeds accumulator width");
  }
}

inline void write_bundle(std::ostream& out, const NetworkSpec& net, const NetworkWeights& w) {
  validate_weights(net, w);
  out.write(kBundleMagic.data(), 4);
  io::put<std::uint32_t>(out, kBundleVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(w.layers.size()));
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& lw = w.layers[i];
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(i));
    io::put<std::uint8_t>(out, static_cast<std::uint8_t>(net.layers[i].kind));
    io::put<std::int8_t>(out, static_cast<std::int8_t>(lw.output.frac_bits));
    const std::uint8_t flags = (lw.weights ? 1 : 0) | (lw.bias ? 2 : 0) | (lw.norm ? 4 : 0);
    io::put<std::uint8_t>(out, flags);
    if (lw.weights) write_array(out, *lw.weights);
    if (lw.bias) write_array(out, *lw.bias);
    if (lw.norm) {
      const int n = static_cast<int>(lw.norm->scale.size());
      write_array(out, QArray{{n}, lw.norm->scale, lw.norm->scale_params});
      write_array(out, QArray{{n}, lw.norm->shift, lw.norm->shift_params});
    }
  }
}

inline NetworkWeights read_bundle(std::istream& in, const NetworkSpec& net) {
  io::expect_magic(in, kBundleMagic);
  if (io::get<std::uint32_t>(in, "version") != kBundleVersion) throw ParseError("unsupported bundle version");
  const auto count = io::get<std::uint32_t>(in, "layer count");
  NetworkWeights w;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (io::get<std::uint32_t>(in, "layer index") != i) throw ParseError("bundle layers out of order");
    const auto kind = io::get<std::uint8_t>(in, "layer kind");
    if (i < net.layers.size() && kind != static_cast<std::uint8_t>(net.layers[i].kind))
      throw ParseError("bundle layer " + std::to_string(i) + " kind does not match network");
    LayerWeights lw;
    lw.output.frac_bits = io::get<std::int8_t>(in, "output frac_bits");
    const auto flags = io::get<std::uint8_t>(in, "flags");
    if (flags & 1) lw.weights = read_array(in);
    if (flags & 2) lw.bias = read_array(in);
    if (flags & 4) {
      QArray s = read_array(in), t = read_array(in);
      lw.norm = QuantizedNorm{std::move(s.data), std::move(t.data), s.params, t.params};
    }
    w.layers.push_back(std::move(lw));
  }
  validate_weights(net, w);
  return w;
}

inline void save_bundle(const std::string& path, const NetworkSpec& net, const NetworkWeights& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  write_bundle(f, net, w);
  if (!f) throw IoError("write failed for " + path);
}

inline NetworkWeights load_bundle(const std::string& path, const NetworkSpec& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open weight file " + path);
  return read_bundle(f, net);
}

}  // namespace dscsim
