#pragma once

// Reference execution of every layer type in real and 16-bit fixed-point
// arithmetic. The fixed-point path is the golden model the cycle simulator
// has to reproduce bit for bit.
//
// Geometry: zero padding of (K-1)/2 on the top/left, output side
// ceil(M / stride). Real-valued sums run input channel, then kernel row,
// then kernel column.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/fixedpoint.hpp"
#include "dscsim/network_model.hpp"
#include "dscsim/tensor.hpp"
#include "dscsim/weights.hpp"

namespace dscsim {

struct MacCounter {
  std::int64_t macs = 0;
};

// Pre-requantization results at accumulator precision.
struct AccTensor {
  TensorShape shape;
  std::vector<std::int64_t> data;
  int frac_bits = 0;
};

inline int conv_padding(int kernel) { return (kernel - 1) / 2; }

namespace kernels {

// out[p][oy][ox] += sum_n sum_kh sum_kw in[n][iy][ix] * w[((p*N + n)*K + kh)*K + kw]
template <typename Acc, typename In, typename W>
void standard(const In* in, TensorShape is, const W* w, int out_channels, int k, int stride, Acc* out) {
  const int m_out = conv_output_side(is.height, stride);
  const int pad = conv_padding(k);
  const int n_ch = is.channels;
  for (int p = 0; p < out_channels; ++p)
    for (int oy = 0; oy < m_out; ++oy)
      for (int ox = 0; ox < m_out; ++ox) {
        Acc acc = out[(std::size_t(p) * m_out + oy) * m_out + ox];
        for (int n = 0; n < n_ch; ++n)
          for (int kh = 0; kh < k; ++kh) {
            const int iy = oy * stride + kh - pad;
            if (iy < 0 || iy >= is.height) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int ix = ox * stride + kw - pad;
              if (ix < 0 || ix >= is.width) continue;
              acc += Acc(in[(std::size_t(n) * is.height + iy) * is.width + ix]) *
                     Acc(w[((std::size_t(p) * n_ch + n) * k + kh) * k + kw]);
            }
          }
        out[(std::size_t(p) * m_out + oy) * m_out + ox] = acc;
      }
}

template <typename Acc, typename In, typename W>
void depthwise(const In* in, TensorShape is, const W* w, int k, int stride, Acc* out) {
  const int m_out = conv_output_side(is.height, stride);
  const int pad = conv_padding(k);
  for (int n = 0; n < is.channels; ++n)
    for (int oy = 0; oy < m_out; ++oy)
      for (int ox = 0; ox < m_out; ++ox) {
        Acc acc = out[(std::size_t(n) * m_out + oy) * m_out + ox];
        for (int kh = 0; kh < k; ++kh) {
          const int iy = oy * stride + kh - pad;
          if (iy < 0 || iy >= is.height) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int ix = ox * stride + kw - pad;
            if (ix < 0 || ix >= is.width) continue;
            acc += Acc(in[(std::size_t(n) * is.height + iy) * is.width + ix]) *
                   Acc(w[(std::size_t(n) * k + kh) * k + kw]);
          }
        }
        out[(std::size_t(n) * m_out + oy) * m_out + ox] = acc;
      }
}

// Pointwise over input channels [n_begin, n_end) and output channels
// [p_begin, p_end); `out` holds (p_end - p_begin) planes.
template <typename Acc, typename In, typename W>
void pointwise(const In* in, TensorShape is, const W* w, int n_begin, int n_end, int p_begin, int p_end,
               int stride, Acc* out) {
  const int m_out = conv_output_side(is.height, stride);
  const std::size_t plane = std::size_t(m_out) * m_out;
  for (int p = p_begin; p < p_end; ++p) {
    Acc* o = out + std::size_t(p - p_begin) * plane;
    for (int n = n_begin; n < n_end; ++n) {
      const Acc wv = Acc(w[std::size_t(p) * is.channels + n]);
      const In* src = in + std::size_t(n) * is.pixels();
      if (stride == 1) {
        for (std::size_t i = 0; i < plane; ++i) o[i] += Acc(src[i]) * wv;
      } else {
        for (int oy = 0; oy < m_out; ++oy)
          for (int ox = 0; ox < m_out; ++ox)
            o[std::size_t(oy) * m_out + ox] += Acc(src[std::size_t(oy * stride) * is.width + ox * stride]) * wv;
      }
    }
  }
}

}  // namespace kernels

namespace detail {

inline void require_dims(const QArray& w, const std::vector<int>& dims, const char* op) {
  if (w.dims != dims) throw ShapeError(std::string(op) + ": weight dims do not match input/output shape");
}

inline void require_stride(int stride) {
  if (stride != 1 && stride != 2) throw ShapeError("stride must be 1 or 2");
}

inline std::int64_t aligned_bias(const QArray* bias, std::size_t c, int acc_frac) {
  if (!bias) return 0;
  return static_cast<std::int64_t>(shift_round(Wide{bias->data[c]}, bias->params.frac_bits - acc_frac));
}

inline AccTensor make_acc(TensorShape shape, int frac, const QArray* bias) {
  AccTensor a{shape, std::vector<std::int64_t>(static_cast<std::size_t>(shape.elements()), 0), frac};
  if (bias) {
    if (bias->size() != static_cast<std::size_t>(shape.channels)) throw ShapeError("bias length mismatch");
    for (int c = 0; c < shape.channels; ++c)
      std::fill_n(a.data.begin() + std::ptrdiff_t(c) * shape.pixels(), shape.pixels(), aligned_bias(bias, c, frac));
  }
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fixed-point convolution to accumulator precision (frac = input + weight).

inline AccTensor conv_standard_acc(const QTensor& in, const QArray& w, const QArray* bias, int stride,
                                   MacCounter* counter = nullptr) {
  detail::require_stride(stride);
  if (w.dims.size() != 4 || w.dims[2] != w.dims[3]) throw ShapeError("conv_standard: weights must be P x N x K x K");
  const int p = w.dims[0], k = w.dims[2];
  detail::require_dims(w, {p, in.shape.channels, k, k}, "conv_standard");
  const int m = conv_output_side(in.shape.height, stride);
  AccTensor out = detail::make_acc({m, m, p}, in.params.frac_bits + w.params.frac_bits, bias);
  kernels::standard(in.data.data(), in.shape, w.data.data(), p, k, stride, out.data.data());
  if (counter) counter->macs += std::int64_t(m) * m * k * k * in.shape.channels * p;
  return out;
}

inline AccTensor conv_depthwise_acc(const QTensor& in, const QArray& w, const QArray* bias, int stride,
                                    MacCounter* counter = nullptr) {
  detail::require_stride(stride);
  if (w.dims.size() != 4 || w.dims[2] != w.dims[3]) throw ShapeError("conv_depthwise: weights must be N x 1 x K x K");
  const int k = w.dims[2];
  detail::require_dims(w, {in.shape.channels, 1, k, k}, "conv_depthwise");
  const int m = conv_output_side(in.shape.height, stride);
  AccTensor out = detail::make_acc({m, m, in.shape.channels}, in.params.frac_bits + w.params.frac_bits, bias);
  kernels::depthwise(in.data.data(), in.shape, w.data.data(), k, stride, out.data.data());
  if (counter) counter->macs += std::int64_t(m) * m * k * k * in.shape.channels;
  return out;
}

inline AccTensor conv_pointwise_acc(const QTensor& in, const QArray& w, const QArray* bias, int stride = 1,
                                    MacCounter* counter = nullptr) {
  detail::require_stride(stride);
  if (w.dims.size() != 4) throw ShapeError("conv_pointwise: weights must be P x N x 1 x 1");
  const int p = w.dims[0];
  detail::require_dims(w, {p, in.shape.channels, 1, 1}, "conv_pointwise");
  const int m = conv_output_side(in.shape.height, stride);
  AccTensor out = detail::make_acc({m, m, p}, in.params.frac_bits + w.params.frac_bits, bias);
  kernels::pointwise(in.data.data(), in.shape, w.data.data(), 0, in.shape.channels, 0, p, stride, out.data.data());
  if (counter) counter->macs += std::int64_t(m) * m * in.shape.channels * p;
  return out;
}

// Folded BN, one requantization, then the activation clamp.
inline QTensor finish(const AccTensor& acc, const QuantizedNorm* norm, Activation relu, QParams out,
                      SaturationCounter* sat = nullptr) {
  validate(out);
  if (norm && (norm->scale.size() != std::size_t(acc.shape.channels) || norm->shift.size() != norm->scale.size()))
    throw ShapeError("batch-norm vectors do not match channel count");
  QTensor q(acc.shape, out);
  const std::size_t plane = static_cast<std::size_t>(acc.shape.pixels());
  for (std::size_t i = 0; i < acc.data.size(); ++i) {
    const q16 v = finish_accumulator(acc.data[i], acc.frac_bits, norm, i / plane, out.frac_bits, sat);
    q.data[i] = relu_fixed(v, relu, out);
  }
  return q;
}

inline QTensor conv_standard(const QTensor& in, const QArray& w, const QArray* bias, int stride, QParams out,
                             MacCounter* counter = nullptr) {
  return finish(conv_standard_acc(in, w, bias, stride, counter), nullptr, Activation::None, out);
}

inline QTensor conv_depthwise(const QTensor& in, const QArray& w, const QArray* bias, int stride, QParams out,
                              MacCounter* counter = nullptr) {
  return finish(conv_depthwise_acc(in, w, bias, stride, counter), nullptr, Activation::None, out);
}

inline QTensor conv_pointwise_direct(const QTensor& in, const QArray& w, const QArray* bias, QParams out,
                                     MacCounter* counter = nullptr) {
  return finish(conv_pointwise_acc(in, w, bias, 1, counter), nullptr, Activation::None, out);
}

// ---------------------------------------------------------------------------
// Divide-and-conquer pointwise convolution.

struct ChannelTile {
  int begin = 0;
  int size = 0;

  int end() const { return begin + size; }
  friend bool operator==(const ChannelTile&, const ChannelTile&) = default;
};

struct TilePlan {
  std::vector<ChannelTile> input_tiles;
  std::vector<ChannelTile> output_tiles;
  // (input tile, output tile) index pairs in execution order
  std::vector<std::pair<std::size_t, std::size_t>> order;
};

inline constexpr int kInputTileWidth = 32;
inline constexpr int kOutputTileWidth = 9;

inline std::vector<ChannelTile> split_channels(int channels, int width) {
  std::vector<ChannelTile> tiles;
  for (int b = 0; b < channels; b += width) tiles.push_back({b, std::min(width, channels - b)});
  return tiles;
}

// Output tiles outer, input tiles inner: every output tile accumulates over
// all input tiles before moving on.
inline TilePlan make_tile_plan(int in_channels, int out_channels, int in_width = kInputTileWidth,
                               int out_width = kOutputTileWidth) {
  if (in_channels < 1 || out_channels < 1 || in_width < 1 || out_width < 1)
    throw ShapeError("make_tile_plan: non-positive size");
  TilePlan plan{split_channels(in_channels, in_width), split_channels(out_channels, out_width), {}};
  for (std::size_t o = 0; o < plan.output_tiles.size(); ++o)
    for (std::size_t i = 0; i < plan.input_tiles.size(); ++i) plan.order.emplace_back(i, o);
  return plan;
}

inline void validate_plan(const TilePlan& plan, int in_channels, int out_channels) {
  auto check_partition = [](const std::vector<ChannelTile>& tiles, int total, int max_width, const char* what) {
    std::vector<int> cover(static_cast<std::size_t>(total), 0);
    for (const auto& t : tiles) {
      if (t.size < 1 || t.size > max_width || t.begin < 0 || t.end() > total)
        throw ShapeError(std::string("tile plan: bad ") + what + " tile");
      for (int c = t.begin; c < t.end(); ++c) ++cover[std::size_t(c)];
    }
    if (std::any_of(cover.begin(), cover.end(), [](int v) { return v != 1; }))
      throw ShapeError(std::string("tile plan: ") + what + " tiles do not partition the channels");
  };
  check_partition(plan.input_tiles, in_channels, kInputTileWidth, "input");
  check_partition(plan.output_tiles, out_channels, kOutputTileWidth, "output");
  std::vector<int> seen(plan.input_tiles.size() * plan.output_tiles.size(), 0);
  for (auto [i, o] : plan.order) {
    if (i >= plan.input_tiles.size() || o >= plan.output_tiles.size())
      throw ShapeError("tile plan: order references a missing tile");
    ++seen[o * plan.input_tiles.size() + i];
  }
  if (std::any_of(seen.begin(), seen.end(), [](int v) { return v != 1; }))
    throw ShapeError("tile plan: every (input, output) tile pair must appear exactly once");
}

struct TiledAccResult {
  AccTensor result;
  // partials[k] is the contribution of plan.order[k] alone: M x M x |output tile|
  std::vector<AccTensor> partials;
};

// Partial sums stay at accumulator precision across input tiles; the bias
// joins once per output element.
inline TiledAccResult conv_pointwise_tiled_acc(const QTensor& in, const QArray& w, const QArray* bias,
                                               const TilePlan& plan, MacCounter* counter = nullptr) {
  if (w.dims.size() != 4) throw ShapeError("conv_pointwise_tiled: weights must be P x N x 1 x 1");
  const int p = w.dims[0];
  detail::require_dims(w, {p, in.shape.channels, 1, 1}, "conv_pointwise_tiled");
  validate_plan(plan, in.shape.channels, p);
  const int m = in.shape.height;
  const int frac = in.params.frac_bits + w.params.frac_bits;
  TiledAccResult r{detail::make_acc({m, m, p}, frac, bias), {}};
  const std::size_t plane = static_cast<std::size_t>(in.shape.pixels());
  for (auto [i, o] : plan.order) {
    const ChannelTile& it = plan.input_tiles[i];
    const ChannelTile& ot = plan.output_tiles[o];
    AccTensor part{{m, m, ot.size}, std::vector<std::int64_t>(plane * std::size_t(ot.size), 0), frac};
    kernels::pointwise(in.data.data(), in.shape, w.data.data(), it.begin, it.end(), ot.begin, ot.end(), 1,
                       part.data.data());
    for (int c = 0; c < ot.size; ++c)
      for (std::size_t px = 0; px < plane; ++px)
        r.result.data[std::size_t(ot.begin + c) * plane + px] += part.data[std::size_t(c) * plane + px];
    if (counter) counter->macs += std::int64_t(plane) * it.size * ot.size;
    r.partials.push_back(std::move(part));
  }
  return r;
}

inline QTensor conv_pointwise_tiled(const QTensor& in, const QArray& w, const QArray* bias, const TilePlan& plan,
                                    QParams out, MacCounter* counter = nullptr) {
  return finish(conv_pointwise_tiled_acc(in, w, bias, plan, counter).result, nullptr, Activation::None, out);
}

// ---------------------------------------------------------------------------
// Real-valued convolution. Weight layouts match the quantized ones.

inline Tensor conv_standard(const Tensor& in, std::span<const double> w, std::span<const double> bias, int kernel,
                            int stride, int out_channels, MacCounter* counter = nullptr) {
  detail::require_stride(stride);
  if (w.size() != std::size_t(out_channels) * in.shape.channels * kernel * kernel)
    throw ShapeError("conv_standard: weight count mismatch");
  const int m = conv_output_side(in.shape.height, stride);
  Tensor out({m, m, out_channels});
  kernels::standard(in.data.data(), in.shape, w.data(), out_channels, kernel, stride, out.data.data());
  if (!bias.empty()) {
    if (bias.size() != std::size_t(out_channels)) throw ShapeError("bias length mismatch");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bias[i / std::size_t(out.shape.pixels())];
  }
  if (counter) counter->macs += std::int64_t(m) * m * kernel * kernel * in.shape.channels * out_channels;
  return out;
}

inline Tensor conv_depthwise(const Tensor& in, std::span<const double> w, std::span<const double> bias, int kernel,
                             int stride, MacCounter* counter = nullptr) {
  detail::require_stride(stride);
  if (w.size() != std::size_t(in.shape.channels) * kernel * kernel)
    throw ShapeError("conv_depthwise: weight count mismatch");
  const int m = conv_output_side(in.shape.height, stride);
  Tensor out({m, m, in.shape.channels});
  kernels::depthwise(in.data.data(), in.shape, w.data(), kernel, stride, out.data.data());
  if (!bias.empty()) {
    if (bias.size() != std::size_t(in.shape.channels)) throw ShapeError("bias length mismatch");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bias[i / std::size_t(out.shape.pixels())];
  }
  if (counter) counter->macs += std::int64_t(m) * m * kernel * kernel * in.shape.channels;
  return out;
}

// w is laid out [P][N].
inline Tensor conv_pointwise_direct(const Tensor& in, std::span<const double> w, std::span<const double> bias,
                                    int out_channels, int stride = 1, MacCounter* counter = nullptr) {
  detail::require_stride(stride);
  if (w.size() != std::size_t(out_channels) * in.shape.channels)
    throw ShapeError("conv_pointwise: weight count mismatch");
  const int m = conv_output_side(in.shape.height, stride);
  Tensor out({m, m, out_channels});
  kernels::pointwise(in.data.data(), in.shape, w.data(), 0, in.shape.channels, 0, out_channels, stride,
                     out.data.data());
  if (!bias.empty()) {
    if (bias.size() != std::size_t(out_channels)) throw ShapeError("bias length mismatch");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bias[i / std::size_t(out.shape.pixels())];
  }
  if (counter) counter->macs += std::int64_t(m) * m * in.shape.channels * out_channels;
  return out;
}

// Real tiled variant: per output tile, input tiles are summed in plan order.
inline Tensor conv_pointwise_tiled(const Tensor& in, std::span<const double> w, std::span<const double> bias,
                                   int out_channels, const TilePlan& plan) {
  validate_plan(plan, in.shape.channels, out_channels);
  if (w.size() != std::size_t(out_channels) * in.shape.channels)
    throw ShapeError("conv_pointwise_tiled: weight count mismatch");
  Tensor out({in.shape.height, in.shape.width, out_channels});
  for (auto [i, o] : plan.order) {
    const auto& it = plan.input_tiles[i];
    const auto& ot = plan.output_tiles[o];
    kernels::pointwise(in.data.data(), in.shape, w.data(), it.begin, it.end(), ot.begin, ot.end(), 1,
                       out.data.data() + std::size_t(ot.begin) * in.shape.pixels());
  }
  if (!bias.empty())
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bias[i / std::size_t(out.shape.pixels())];
  return out;
}

// ---------------------------------------------------------------------------
// Activation and pooling.

inline Tensor relu(Tensor t, Activation mode) {
  for (auto& v : t.data) v = relu_real(v, mode);
  return t;
}

inline QTensor relu(QTensor t, Activation mode) {
  for (auto& v : t.data) v = relu_fixed(v, mode, t.params);
  return t;
}

inline TensorShape pool_output(const TensorShape& in, int window, int stride) {
  if (window < 1 || stride < 1) throw ShapeError("pool: window and stride must be >= 1");
  if (window > in.height) throw ShapeError("pool: window larger than input");
  return {(in.height - window) / stride + 1, (in.width - window) / stride + 1, in.channels};
}

inline Tensor pool(const Tensor& in, LayerKind kind, int window, int stride) {
  if (!is_pool(kind)) throw ShapeError("pool: not a pooling kind");
  const TensorShape os = pool_output(in.shape, window, stride);
  Tensor out(os);
  const double count = double(window) * window;
  for (int c = 0; c < os.channels; ++c)
    for (int oy = 0; oy < os.height; ++oy)
      for (int ox = 0; ox < os.width; ++ox) {
        double acc = kind == LayerKind::MaxPool ? in.at(c, oy * stride, ox * stride) : 0.0;
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const double v = in.at(c, oy * stride + dy, ox * stride + dx);
            acc = kind == LayerKind::MaxPool ? std::max(acc, v) : acc + v;
          }
        out.at(c, oy, ox) = kind == LayerKind::MaxPool ? acc : acc / count;
      }
  return out;
}

inline QTensor pool(const QTensor& in, LayerKind kind, int window, int stride) {
  if (!is_pool(kind)) throw ShapeError("pool: not a pooling kind");
  const TensorShape os = pool_output(in.shape, window, stride);
  QTensor out(os, in.params);
  const std::int64_t count = std::int64_t(window) * window;
  for (int c = 0; c < os.channels; ++c)
    for (int oy = 0; oy < os.height; ++oy)
      for (int ox = 0; ox < os.width; ++ox) {
        std::int64_t acc = kind == LayerKind::MaxPool ? in.at(c, oy * stride, ox * stride) : 0;
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const std::int64_t v = in.at(c, oy * stride + dy, ox * stride + dx);
            acc = kind == LayerKind::MaxPool ? std::max(acc, v) : acc + v;
          }
        out.at(c, oy, ox) = kind == LayerKind::MaxPool ? static_cast<q16>(acc) : average_from_sum(acc, count);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-network execution.

struct QuantizedRun {
  QTensor output;
  std::vector<QTensor> activations;  // activations[i] = output of layer i
  MacCounter macs;
  SaturationCounter saturations;
};

struct RealRun {
  Tensor output;
  std::vector<Tensor> activations;
  MacCounter macs;
};

inline QTensor run_layer(const LayerSpec& l, const LayerWeights& lw, const QTensor& in, const QTensor* shortcut,
                         MacCounter* macs, SaturationCounter* sat) {
  if (!(in.shape == l.input)) throw ShapeError("layer input shape " + to_string(in.shape) + " != " + to_string(l.input));
  if (is_pool(l.kind)) return pool(in, l.kind, l.kernel, l.stride);
  if (!lw.weights) throw ShapeError("missing weights");
  const QArray* bias = lw.bias ? &*lw.bias : nullptr;
  AccTensor acc;
  switch (l.kind) {
    case LayerKind::StandardConv: acc = conv_standard_acc(in, *lw.weights, bias, l.stride, macs); break;
    case LayerKind::DepthwiseConv: acc = conv_depthwise_acc(in, *lw.weights, bias, l.stride, macs); break;
    case LayerKind::PointwiseConv: acc = conv_pointwise_acc(in, *lw.weights, bias, l.stride, macs); break;
    default: break;
  }
  QTensor out = finish(acc, lw.norm ? &*lw.norm : nullptr, l.relu, lw.output, sat);
  if (shortcut) {
    if (!(shortcut->shape == out.shape)) throw ShapeError("residual shortcut shape mismatch");
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = residual_add(out.data[i], shortcut->data[i], shortcut->params.frac_bits, out.params.frac_bits, sat);
  }
  return out;
}

inline QuantizedRun run_network(const NetworkSpec& net, const NetworkWeights& weights, const QTensor& input,
                                bool keep_activations = true) {
  validate_network(net);
  validate_weights(net, weights);
  if (!(input.shape == net.input_shape))
    throw ShapeError("input shape " + to_string(input.shape) + " does not match network input " +
                     to_string(net.input_shape));
  QuantizedRun run;
  // acts[i] is activation i (acts[0] = input); only kept while still needed
  std::vector<std::optional<QTensor>> acts(net.layers.size() + 1);
  acts[0] = input;
  std::vector<std::size_t> last_use(net.layers.size() + 1, 0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    last_use[i] = std::max(last_use[i], i);
    if (net.layers[i].residual > 0) last_use[i + 1 - net.layers[i].residual] = i;
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const QTensor* shortcut = l.residual > 0 ? &*acts[i + 1 - l.residual] : nullptr;
    acts[i + 1] = run_layer(l, weights.layers[i], *acts[i], shortcut, &run.macs, &run.saturations);
    if (keep_activations) run.activations.push_back(*acts[i + 1]);
    for (std::size_t j = 0; j <= i; ++j)
      if (acts[j] && last_use[j] <= i) acts[j].reset();
  }
  run.output = std::move(*acts.back());
  return run;
}

inline Tensor run_layer(const LayerSpec& l, const LayerWeights& lw, const Tensor& in, const Tensor* shortcut,
                        MacCounter* macs) {
  if (!(in.shape == l.input)) throw ShapeError("layer input shape mismatch");
  if (is_pool(l.kind)) return pool(in, l.kind, l.kernel, l.stride);
  if (!lw.weights) throw ShapeError("missing weights");
  const std::vector<double> w = dequantize(*lw.weights);
  const std::vector<double> b = lw.bias ? dequantize(*lw.bias) : std::vector<double>{};
  Tensor out;
  switch (l.kind) {
    case LayerKind::StandardConv: out = conv_standard(in, w, b, l.kernel, l.stride, l.out_channels, macs); break;
    case LayerKind::DepthwiseConv: out = conv_depthwise(in, w, b, l.kernel, l.stride, macs); break;
    case LayerKind::PointwiseConv: out = conv_pointwise_direct(in, w, b, l.out_channels, l.stride, macs); break;
    default: break;
  }
  const std::size_t plane = static_cast<std::size_t>(out.shape.pixels());
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double v = out.data[i];
    if (lw.norm) {
      const std::size_t c = i / plane;
      v = v * dequantize(lw.norm->scale[c], lw.norm->scale_params) + dequantize(lw.norm->shift[c], lw.norm->shift_params);
    }
    v = relu_real(v, l.relu);
    if (shortcut) v += shortcut->data[i];
    out.data[i] = v;
  }
  return out;
}

inline RealRun run_network(const NetworkSpec& net, const NetworkWeights& weights, const Tensor& input,
                           bool keep_activations = true) {
  validate_network(net);
  validate_weights(net, weights);
  if (!(input.shape == net.input_shape)) throw ShapeError("input shape does not match network input");
  RealRun run;
  std::vector<Tensor> acts{input};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const Tensor* shortcut = l.residual > 0 ? &acts[i + 1 - l.residual] : nullptr;
    acts.push_back(run_layer(l, weights.layers[i], acts[i], shortcut, &run.macs));
  }
  run.output = acts.back();
  if (keep_activations) run.activations.assign(acts.begin() + 1, acts.end());
  return run;
}

}  // namespace dscsim
