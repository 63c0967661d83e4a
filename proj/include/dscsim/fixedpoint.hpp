#pragma once

// 16-bit two's-complement fixed point with per-tensor power-of-two scales.
// A stored value q with frac_bits e represents q / 2^e.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/network_model.hpp"

namespace dscsim {

using q16 = std::int16_t;
using Wide = __int128;

inline constexpr int kQMin = std::numeric_limits<q16>::min();
inline constexpr int kQMax = std::numeric_limits<q16>::max();

// Accumulator of the multiplier array and adder tree.
inline constexpr int kAccBits = 48;
inline constexpr std::int64_t kAccMax = (std::int64_t{1} << (kAccBits - 1)) - 1;
inline constexpr std::int64_t kAccMin = -(std::int64_t{1} << (kAccBits - 1));

struct QParams {
  static constexpr int kMinFracBits = -8;
  static constexpr int kMaxFracBits = 15;

  int frac_bits = 0;

  friend bool operator==(const QParams&, const QParams&) = default;
};

inline void validate(const QParams& p) {
  if (p.frac_bits < QParams::kMinFracBits || p.frac_bits > QParams::kMaxFracBits)
    throw ShapeError("frac_bits " + std::to_string(p.frac_bits) + " outside [-8, 15]");
}

// Counts values clipped to the 16-bit range.
struct SaturationCounter {
  std::int64_t count = 0;
};

inline q16 saturate16(Wide v, SaturationCounter* sat = nullptr) {
  if (v > kQMax) {
    if (sat) ++sat->count;
    return static_cast<q16>(kQMax);
  }
  if (v < kQMin) {
    if (sat) ++sat->count;
    return static_cast<q16>(kQMin);
  }
  return static_cast<q16>(v);
}

// v * 2^-shift with round-half-to-even; shift <= 0 is an exact left shift.
inline Wide shift_round(Wide v, int shift) {
  if (shift <= 0) return v * (Wide{1} << -shift);
  if (shift >= 126) return 0;
  const Wide div = Wide{1} << shift;
  Wide q = v >> shift;  // floor
  const Wide rem = v - q * div;
  const Wide half = div >> 1;
  if (rem > half || (rem == half && (q & 1))) ++q;
  return q;
}

// Rescales a value stored at `from` frac bits to `to` frac bits, saturating.
inline q16 requantize(Wide v, int from, int to, SaturationCounter* sat = nullptr) {
  return saturate16(shift_round(v, from - to), sat);
}

inline q16 quantize(double x, QParams p, SaturationCounter* sat = nullptr) {
  if (!std::isfinite(x)) throw ShapeError("cannot quantize a non-finite value");
  const double scaled = std::nearbyint(std::ldexp(x, p.frac_bits));  // ties to even
  if (scaled > kQMax) {
    if (sat) ++sat->count;
    return static_cast<q16>(kQMax);
  }
  if (scaled < kQMin) {
    if (sat) ++sat->count;
    return static_cast<q16>(kQMin);
  }
  return static_cast<q16>(scaled);
}

inline double dequantize(q16 q, QParams p) { return std::ldexp(static_cast<double>(q), -p.frac_bits); }

// Largest frac_bits whose scaled maximum magnitude still fits without
// saturation. All-zero data gets the finest scale.
inline QParams choose_scale(std::span<const double> values) {
  if (values.empty()) throw ShapeError("choose_scale needs at least one value");
  double max_abs = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw ShapeError("choose_scale: non-finite value");
    max_abs = std::max(max_abs, std::fabs(v));
  }
  for (int e = QParams::kMaxFracBits; e > QParams::kMinFracBits; --e)
    if (std::ldexp(max_abs, e) <= kQMax) return {e};
  return {QParams::kMinFracBits};
}

inline std::int64_t mac_fixed(q16 a, q16 b, std::int64_t acc) {
  return acc + std::int64_t{a} * std::int64_t{b};
}

// Worst-case bound: `terms` products of two 16-bit extremes plus a bias of
// the same magnitude stays inside the accumulator.
inline bool accumulator_safe(std::int64_t terms) {
  const Wide worst = Wide{terms + 1} * (Wide{kQMin} * Wide{kQMin});
  return worst <= kAccMax;
}

// ---------------------------------------------------------------------------
// Batch-norm folding: BN(conv + bias) == conv * scale + shift.

struct FoldedBN {
  std::vector<double> scale;
  std::vector<double> shift;
};

inline FoldedBN fold_batchnorm(std::span<const double> gamma, std::span<const double> beta,
                               std::span<const double> mean, std::span<const double> var, double eps,
                               std::span<const double> conv_bias = {}) {
  const std::size_t n = gamma.size();
  if (beta.size() != n || mean.size() != n || var.size() != n || (!conv_bias.empty() && conv_bias.size() != n))
    throw ShapeError("fold_batchnorm: parameter vectors differ in length");
  if (!(eps > 0.0)) throw ShapeError("fold_batchnorm: eps must be positive");
  FoldedBN f;
  f.scale.resize(n);
  f.shift.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    if (var[c] < 0.0) throw ShapeError("fold_batchnorm: negative variance in channel " + std::to_string(c));
    const double s = gamma[c] / std::sqrt(var[c] + eps);
    const double b = conv_bias.empty() ? 0.0 : conv_bias[c];
    f.scale[c] = s;
    f.shift[c] = beta[c] + s * (b - mean[c]);
  }
  return f;
}

// Reference (unfolded) batch norm of a single pre-activation value.
inline double batchnorm_explicit(double conv_out, double bias, double gamma, double beta, double mean, double var,
                                 double eps) {
  return gamma * ((conv_out + bias) - mean) / std::sqrt(var + eps) + beta;
}

// ---------------------------------------------------------------------------
// Post-accumulation path shared by every datapath model: optional folded-BN
// multiply-add at wide precision, then one requantization to 16 bits.

struct QuantizedNorm {
  std::vector<q16> scale;
  std::vector<q16> shift;
  QParams scale_params;
  QParams shift_params;
};

inline q16 finish_accumulator(std::int64_t acc, int acc_frac, const QuantizedNorm* norm, std::size_t channel,
                              int out_frac, SaturationCounter* sat = nullptr) {
  if (!norm) return requantize(acc, acc_frac, out_frac, sat);
  const int prod_frac = acc_frac + norm->scale_params.frac_bits;
  const int shift_frac = norm->shift_params.frac_bits;
  const int common = std::max(prod_frac, shift_frac);
  const Wide prod = Wide{acc} * norm->scale[channel] * (Wide{1} << (common - prod_frac));
  const Wide shift = Wide{norm->shift[channel]} * (Wide{1} << (common - shift_frac));
  return requantize(prod + shift, common, out_frac, sat);
}

inline q16 relu_fixed(q16 v, Activation mode, QParams p) {
  switch (mode) {
    case Activation::None: return v;
    case Activation::Relu: return std::max<q16>(v, 0);
    case Activation::Relu6: return std::clamp<q16>(v, 0, quantize(6.0, p));
  }
  return v;
}

inline double relu_real(double v, Activation mode) {
  switch (mode) {
    case Activation::None: return v;
    case Activation::Relu: return std::max(v, 0.0);
    case Activation::Relu6: return std::clamp(v, 0.0, 6.0);
  }
  return v;
}

// Residual shortcut summed at the destination scale.
inline q16 residual_add(q16 main, q16 shortcut, int shortcut_frac, int out_frac, SaturationCounter* sat = nullptr) {
  return saturate16(Wide{main} + shift_round(Wide{shortcut}, shortcut_frac - out_frac), sat);
}

// Average pooling multiplies the window sum by 1/S held with this many
// fractional bits.
inline constexpr int kPoolReciprocalBits = 24;

// round(2^kPoolReciprocalBits / S), ties to even
inline std::int64_t pool_reciprocal(std::int64_t window_elements) {
  if (window_elements < 1) throw ShapeError("pooling window must be non-empty");
  const std::int64_t num = std::int64_t{1} << kPoolReciprocalBits;
  std::int64_t q = num / window_elements;
  const std::int64_t rem2 = 2 * (num % window_elements);
  if (rem2 > window_elements || (rem2 == window_elements && (q & 1))) ++q;
  return q;
}

inline q16 average_from_sum(std::int64_t sum, std::int64_t window_elements) {
  return saturate16(shift_round(Wide{sum} * pool_reciprocal(window_elements), kPoolReciprocalBits));
}

}  // namespace dscsim
