#pragma once

// Network description for depthwise-separable CNNs plus the analytic
// weight/MAC counting used throughout the simulator.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include <boost/rational.hpp>

#include "dscsim/error.hpp"

namespace dscsim {

using Count = std::int64_t;
using Rational = boost::rational<std::int64_t>;

struct TensorShape {
  int height = 1;
  int width = 1;
  int channels = 1;

  Count pixels() const { return Count(height) * width; }
  Count elements() const { return pixels() * channels; }

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

inline std::string to_string(const TensorShape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

// Feature maps are square M x M x N.
inline void validate_shape(const TensorShape& s) {
  if (s.height < 1 || s.width < 1 || s.channels < 1)
    throw ShapeError("tensor shape " + to_string(s) + " has a zero dimension");
  if (s.height != s.width)
    throw ShapeError("tensor shape " + to_string(s) + " is not square");
}

enum class LayerKind { StandardConv, DepthwiseConv, PointwiseConv, AvgPool, MaxPool };
enum class Activation { None, Relu, Relu6 };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::StandardConv: return "conv";
    case LayerKind::DepthwiseConv: return "depthwise";
    case LayerKind::PointwiseConv: return "pointwise";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::MaxPool: return "maxpool";
  }
  return "?";
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Relu6: return "relu6";
  }
  return "?";
}

inline bool is_conv(LayerKind k) {
  return k == LayerKind::StandardConv || k == LayerKind::DepthwiseConv || k == LayerKind::PointwiseConv;
}
inline bool is_pool(LayerKind k) { return k == LayerKind::AvgPool || k == LayerKind::MaxPool; }

struct LayerSpec {
  LayerKind kind = LayerKind::PointwiseConv;
  int kernel = 1;
  int stride = 1;
  int out_channels = 0;  // unused for pooling and depthwise
  bool has_batchnorm = false;
  Activation relu = Activation::None;
  // Residual shortcut: when > 0 the output of this layer is summed with the
  // activation `residual` positions back, i.e. the input of layer
  // (index + 1 - residual).
  int residual = 0;

  TensorShape input;
  TensorShape output;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct BottleneckSpec {
  int expand_factor = 1;  // t
  int out_channels = 1;   // c
  int repeat = 1;         // n
  int first_stride = 1;   // s
};

struct NetworkSpec {
  std::string name;
  TensorShape input_shape;
  std::vector<LayerSpec> layers;

  // activation i is the input of layer i; activation layers.size() is the output
  TensorShape activation(std::size_t i) const { return i == 0 ? input_shape : layers[i - 1].output; }
  TensorShape output_shape() const { return activation(layers.size()); }
};

inline int conv_output_side(int in, int stride) { return (in + stride - 1) / stride; }

// Output shape of `layer` applied to `in`; throws ShapeError on violations
// of the per-kind layer invariants.
inline TensorShape infer_output(const LayerSpec& layer, const TensorShape& in) {
  validate_shape(in);
  if (layer.stride != 1 && layer.stride != 2)
    throw ShapeError(std::string(to_string(layer.kind)) + " stride must be 1 or 2, got " +
                     std::to_string(layer.stride));
  if (layer.kernel < 1) throw ShapeError("kernel must be >= 1");
  switch (layer.kind) {
    case LayerKind::StandardConv:
      if (layer.out_channels < 1) throw ShapeError("conv needs out_channels >= 1");
      return {conv_output_side(in.height, layer.stride), conv_output_side(in.width, layer.stride),
              layer.out_channels};
    case LayerKind::DepthwiseConv:
      if (layer.out_channels != 0 && layer.out_channels != in.channels)
        throw ShapeError("depthwise conv must preserve channel count (" + std::to_string(in.channels) +
                         " in, " + std::to_string(layer.out_channels) + " out)");
      return {conv_output_side(in.height, layer.stride), conv_output_side(in.width, layer.stride),
              in.channels};
    case LayerKind::PointwiseConv:
      if (layer.kernel != 1) throw ShapeError("pointwise conv requires kernel 1");
      if (layer.out_channels < 1) throw ShapeError("pointwise conv needs out_channels >= 1");
      return {conv_output_side(in.height, layer.stride), conv_output_side(in.width, layer.stride),
              layer.out_channels};
    case LayerKind::AvgPool:
    case LayerKind::MaxPool:
      if (layer.kernel > in.height)
        throw ShapeError("pooling window " + std::to_string(layer.kernel) + " larger than input " +
                         to_string(in));
      if (layer.has_batchnorm || layer.relu != Activation::None)
        throw ShapeError("pooling layers carry no normalization or activation");
      return {(in.height - layer.kernel) / layer.stride + 1, (in.width - layer.kernel) / layer.stride + 1,
              in.channels};
  }
  throw ShapeError("unknown layer kind");
}

// Checks the shape chain, per-layer invariants and residual references.
inline void validate_network(const NetworkSpec& net) {
  validate_shape(net.input_shape);
  TensorShape cur = net.input_shape;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + "): ";
    if (!(l.input == cur))
      throw ShapeError(where + "input " + to_string(l.input) + " does not chain from " + to_string(cur));
    TensorShape out;
    try {
      out = infer_output(l, cur);
    } catch (const ShapeError& e) {
      throw ShapeError(where + e.what());
    }
    if (!(l.output == out))
      throw ShapeError(where + "declared output " + to_string(l.output) + ", inferred " + to_string(out));
    if (l.residual < 0) throw ShapeError(where + "negative residual span");
    if (l.residual > 0 && is_pool(l.kind)) throw ShapeError(where + "pooling layers take no residual");
    if (l.residual > 0) {
      if (static_cast<std::size_t>(l.residual) > i + 1) throw ShapeError(where + "residual reaches before input");
      if (!(net.activation(i + 1 - l.residual) == out))
        throw ShapeError(where + "residual shortcut shape mismatch");
    }
    cur = out;
  }
}

// Appends layers while tracking the running shape.
class NetworkBuilder {
 public:
  NetworkBuilder(std::string name, TensorShape input) {
    validate_shape(input);
    net_.name = std::move(name);
    net_.input_shape = input;
  }

  TensorShape current() const { return net_.output_shape(); }

  NetworkBuilder& add(LayerSpec layer) {
    layer.input = current();
    layer.output = infer_output(layer, layer.input);
    net_.layers.push_back(layer);
    return *this;
  }

  NetworkBuilder& add(const std::vector<LayerSpec>& layers) {
    for (const auto& l : layers) add(l);
    return *this;
  }

  NetworkSpec build() const {
    validate_network(net_);
    return net_;
  }

 private:
  NetworkSpec net_;
};

inline LayerSpec standard_conv(int kernel, int stride, int out_channels, bool bn = true,
                               Activation relu = Activation::Relu6) {
  return {LayerKind::StandardConv, kernel, stride, out_channels, bn, relu, 0, {}, {}};
}
inline LayerSpec depthwise_conv(int kernel, int stride, bool bn = true, Activation relu = Activation::Relu6) {
  return {LayerKind::DepthwiseConv, kernel, stride, 0, bn, relu, 0, {}, {}};
}
inline LayerSpec pointwise_conv(int out_channels, bool bn = true, Activation relu = Activation::Relu6) {
  return {LayerKind::PointwiseConv, 1, 1, out_channels, bn, relu, 0, {}, {}};
}
inline LayerSpec avg_pool(int window, int stride = 1) {
  return {LayerKind::AvgPool, window, stride, 0, false, Activation::None, 0, {}, {}};
}
inline LayerSpec max_pool(int window, int stride = 1) {
  return {LayerKind::MaxPool, window, stride, 0, false, Activation::None, 0, {}, {}};
}

// Expansion PWC -> 3x3 DWC -> projection PWC, `repeat` times. Only the first
// repeat uses `first_stride`. The projection carries a residual add when the
// block keeps both stride 1 and the channel count.
inline std::vector<LayerSpec> expand_bottleneck(const TensorShape& input, const BottleneckSpec& spec) {
  validate_shape(input);
  if (spec.expand_factor < 1) throw ShapeError("bottleneck expand factor must be >= 1");
  if (spec.out_channels < 1 || spec.repeat < 1) throw ShapeError("bottleneck channels and repeat must be >= 1");
  if (spec.first_stride != 1 && spec.first_stride != 2) throw ShapeError("bottleneck stride must be 1 or 2");

  std::vector<LayerSpec> out;
  TensorShape cur = input;
  auto push = [&](LayerSpec l) {
    l.input = cur;
    l.output = infer_output(l, cur);
    cur = l.output;
    out.push_back(l);
  };
  for (int r = 0; r < spec.repeat; ++r) {
    const int stride = r == 0 ? spec.first_stride : 1;
    const TensorShape block_in = cur;
    push(pointwise_conv(block_in.channels * spec.expand_factor));
    push(depthwise_conv(3, stride));
    LayerSpec project = pointwise_conv(spec.out_channels, true, Activation::None);
    if (stride == 1 && block_in.channels == spec.out_channels) project.residual = 3;
    push(project);
  }
  return out;
}

// MobileNetV2 for 224x224x3 inputs: standard conv, 17 bottlenecks in 7 groups,
// 1x1 to 1280, 7x7 global average pool, 1x1 classifier to 1000 classes.
inline NetworkSpec build_mobilenet_v2() {
  NetworkBuilder b("mobilenet_v2", {224, 224, 3});
  b.add(standard_conv(3, 2, 32));
  const BottleneckSpec groups[] = {
      {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
      {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
  };
  for (const auto& g : groups) b.add(expand_bottleneck(b.current(), g));
  b.add(pointwise_conv(1280));
  b.add(avg_pool(7));
  b.add(pointwise_conv(1000, false, Activation::None));
  return b.build();
}

// ---------------------------------------------------------------------------
// Analytic counts. All M, K, N, P arguments must be >= 1.

namespace detail {
inline void require_positive(std::initializer_list<Count> xs, const char* fn) {
  for (Count x : xs)
    if (x < 1) throw ShapeError(std::string(fn) + ": dimensions must be >= 1");
}
}  // namespace detail

inline Count weights_standard(Count k, Count n, Count p) {
  detail::require_positive({k, n, p}, "weights_standard");
  return k * k * n * p;
}

inline Count ops_standard(Count m, Count k, Count n, Count p) {
  detail::require_positive({m, k, n, p}, "ops_standard");
  return m * m * k * k * n * p;
}

inline Count weights_dsc(Count k, Count n, Count p) {
  detail::require_positive({k, n, p}, "weights_dsc");
  return k * k * n + n * p;
}

inline Count ops_dsc(Count m, Count k, Count n, Count p) {
  detail::require_positive({m, k, n, p}, "ops_dsc");
  return m * m * k * k * n + m * m * n * p;
}

struct ReductionFactors {
  Rational weights;     // F_W
  Rational operations;  // F_O
};

inline ReductionFactors reduction_factors(Count k, Count p) {
  detail::require_positive({k, p}, "reduction_factors");
  const Rational f = Rational(1, p) + Rational(1, k * k);
  return {f, f};
}

struct LayerCost {
  Count weights = 0;
  Count macs = 0;
  Count elementwise = 0;  // residual adds
};

struct DscPairCost {
  std::size_t depthwise_layer = 0;
  std::size_t pointwise_layer = 0;
  Rational weight_factor;
  Rational op_factor;
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::vector<DscPairCost> dsc_pairs;
  Count total_weights = 0;
  Count total_macs = 0;
  Count total_elementwise = 0;

  Count total_ops() const { return 2 * total_macs; }
};

inline LayerCost layer_cost(const LayerSpec& l) {
  const Count m_out = l.output.height;
  const Count n = l.input.channels;
  const Count k = l.kernel;
  LayerCost c;
  switch (l.kind) {
    case LayerKind::StandardConv:
      c.weights = k * k * n * l.out_channels;
      c.macs = m_out * m_out * k * k * n * l.out_channels;
      break;
    case LayerKind::DepthwiseConv:
      c.weights = k * k * n;
      c.macs = m_out * m_out * k * k * n;
      break;
    case LayerKind::PointwiseConv:
      c.weights = n * l.out_channels;
      c.macs = m_out * m_out * n * l.out_channels;
      break;
    case LayerKind::AvgPool:
      c.macs = n * m_out * m_out * k * k;
      break;
    case LayerKind::MaxPool:
      break;
  }
  if (l.residual > 0) c.elementwise = l.output.elements();
  return c;
}

inline CostReport network_cost(const NetworkSpec& net) {
  validate_network(net);
  CostReport r;
  for (const auto& l : net.layers) {
    r.layers.push_back(layer_cost(l));
    r.total_weights += r.layers.back().weights;
    r.total_macs += r.layers.back().macs;
    r.total_elementwise += r.layers.back().elementwise;
  }
  // A DWC immediately followed by a PWC is one depthwise-separable pair; its
  // factors are measured against a standard conv producing the same output.
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
    const auto& dw = net.layers[i];
    const auto& pw = net.layers[i + 1];
    if (dw.kind != LayerKind::DepthwiseConv || pw.kind != LayerKind::PointwiseConv) continue;
    const Count m = pw.output.height, k = dw.kernel, n = dw.input.channels, p = pw.out_channels;
    DscPairCost pair;
    pair.depthwise_layer = i;
    pair.pointwise_layer = i + 1;
    pair.weight_factor = Rational(r.layers[i].weights + r.layers[i + 1].weights, weights_standard(k, n, p));
    pair.op_factor = Rational(r.layers[i].macs + r.layers[i + 1].macs, ops_standard(m, k, n, p));
    r.dsc_pairs.push_back(pair);
  }
  return r;
}

}  // namespace dscsim
