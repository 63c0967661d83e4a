#pragma once

// Seeded synthetic weights. Batch-norm statistics and every activation scale
// are calibrated by running the real-valued network on one input, so the
// quantized network stays in range without trained parameters.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dscsim/fixedpoint.hpp"
#include "dscsim/functional.hpp"
#include "dscsim/network_model.hpp"
#include "dscsim/tensor.hpp"
#include "dscsim/weights.hpp"

namespace dscsim {

// mt19937_64 is fully specified by the standard; the distributions are not,
// so values are derived from raw 64-bit draws here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 eng_;
};

inline Tensor random_tensor(TensorShape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  validate_shape(shape);
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline QTensor quantize_auto(const Tensor& t) { return quantize(t, choose_scale(t.data)); }

namespace detail {

inline QArray quantize_auto(std::vector<int> dims, const std::vector<double>& v) {
  return quantize_array(std::move(dims), v, choose_scale(v));
}

inline Tensor conv_only(const LayerSpec& l, const std::vector<double>& w, const std::vector<double>& b,
                        const Tensor& in) {
  switch (l.kind) {
    case LayerKind::StandardConv: return conv_standard(in, w, b, l.kernel, l.stride, l.out_channels, nullptr);
    case LayerKind::DepthwiseConv: return conv_depthwise(in, w, b, l.kernel, l.stride, nullptr);
    default: return conv_pointwise_direct(in, w, b, l.out_channels, l.stride, nullptr);
  }
}

}  // namespace detail

inline constexpr double kBatchNormEps = 1e-5;

// Weights ~ U(-a, a) with variance gain^2 / fan_in. Layers without batch norm
// get a small random bias. BN uses the measured per-channel statistics of the
// calibration input with random gamma / beta.
inline NetworkWeights random_weights(const NetworkSpec& net, std::uint64_t seed, const Tensor& calibration) {
  validate_network(net);
  if (!(calibration.shape == net.input_shape)) throw ShapeError("calibration input does not match network input");
  Rng rng(seed);
  NetworkWeights nw;
  nw.layers.resize(net.layers.size());

  // real activations of the already-quantized prefix
  std::vector<Tensor> acts{calibration};
  QParams in_params = choose_scale(calibration.data);
  std::vector<QParams> act_params{in_params};

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    LayerWeights& lw = nw.layers[i];
    const Tensor* shortcut = l.residual > 0 ? &acts[i + 1 - l.residual] : nullptr;

    if (is_pool(l.kind)) {
      lw.output = act_params[i];
      acts.push_back(run_layer(l, lw, acts[i], nullptr, nullptr));
      act_params.push_back(lw.output);
      continue;
    }

    const std::vector<int> dims = expected_weight_dims(l);
    const std::size_t count = product(dims);
    const double fan_in = double(count) / dims[0];
    const double gain = l.relu == Activation::None ? 1.0 : std::sqrt(2.0);
    const double a = std::sqrt(3.0) * gain / std::sqrt(fan_in);
    std::vector<double> w(count);
    for (double& v : w) v = rng.uniform(-a, a);
    lw.weights = detail::quantize_auto(dims, w);
    const std::vector<double> wq = dequantize(*lw.weights);
    const int channels = l.output.channels;

    std::vector<double> bq;
    if (!l.has_batchnorm) {
      std::vector<double> b(static_cast<std::size_t>(channels));
      for (double& v : b) v = rng.uniform(-0.1, 0.1);
      lw.bias = detail::quantize_auto({channels}, b);
      bq = dequantize(*lw.bias);
    }

    Tensor pre = detail::conv_only(l, wq, bq, acts[i]);
    if (l.has_batchnorm) {
      const std::size_t plane = std::size_t(pre.shape.pixels());
      const auto nc = static_cast<std::size_t>(channels);
      std::vector<double> gamma(nc), beta(nc), mean(nc), var(nc);
      for (int c = 0; c < channels; ++c) {
        double s = 0, s2 = 0;
        for (std::size_t k = 0; k < plane; ++k) {
          const double v = pre.data[std::size_t(c) * plane + k];
          s += v;
          s2 += v * v;
        }
        mean[c] = s / double(plane);
        var[c] = std::max(0.0, s2 / double(plane) - mean[c] * mean[c]);
        gamma[c] = rng.uniform(0.5, 1.5);
        beta[c] = rng.uniform(-0.2, 0.2);
      }
      const FoldedBN f = fold_batchnorm(gamma, beta, mean, var, kBatchNormEps);
      QuantizedNorm qn;
      qn.scale_params = choose_scale(f.scale);
      qn.shift_params = choose_scale(f.shift);
      for (int c = 0; c < channels; ++c) {
        qn.scale.push_back(quantize(f.scale[c], qn.scale_params));
        qn.shift.push_back(quantize(f.shift[c], qn.shift_params));
      }
      lw.norm = std::move(qn);
    }

    // output scale from the real result with the quantized parameters
    lw.output = QParams{0};
    Tensor out = run_layer(l, lw, acts[i], shortcut, nullptr);
    lw.output = choose_scale(out.data);
    acts.push_back(std::move(out));
    act_params.push_back(lw.output);
  }
  validate_weights(net, nw);
  return nw;
}

}  // namespace dscsim
