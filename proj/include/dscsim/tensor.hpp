#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/fixedpoint.hpp"
#include "dscsim/network_model.hpp"

namespace dscsim {

// Real-valued feature map, [channel][row][col].
struct Tensor {
  TensorShape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(TensorShape s) : shape(s), data(static_cast<std::size_t>(s.elements()), 0.0) {}

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape.height + y) * shape.width + x;
  }
  double& at(int c, int y, int x) { return data[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data[index(c, y, x)]; }
};

// 16-bit feature map with one power-of-two scale.
struct QTensor {
  TensorShape shape;
  std::vector<q16> data;
  QParams params;

  QTensor() = default;
  QTensor(TensorShape s, QParams p) : shape(s), data(static_cast<std::size_t>(s.elements()), 0), params(p) {}

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape.height + y) * shape.width + x;
  }
  q16& at(int c, int y, int x) { return data[index(c, y, x)]; }
  q16 at(int c, int y, int x) const { return data[index(c, y, x)]; }

  friend bool operator==(const QTensor&, const QTensor&) = default;
};

// N-d array of 16-bit values (weights, bias and BN vectors).
struct QArray {
  std::vector<int> dims;
  std::vector<q16> data;
  QParams params;

  std::size_t size() const { return data.size(); }

  friend bool operator==(const QArray&, const QArray&) = default;
};

inline std::size_t product(const std::vector<int>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

inline QTensor quantize(const Tensor& t, QParams p, SaturationCounter* sat = nullptr) {
  validate(p);
  QTensor q(t.shape, p);
  for (std::size_t i = 0; i < t.data.size(); ++i) q.data[i] = quantize(t.data[i], p, sat);
  return q;
}

inline Tensor dequantize(const QTensor& q) {
  Tensor t(q.shape);
  for (std::size_t i = 0; i < q.data.size(); ++i) t.data[i] = dequantize(q.data[i], q.params);
  return t;
}

inline QArray quantize_array(std::vector<int> dims, const std::vector<double>& values, QParams p,
                             SaturationCounter* sat = nullptr) {
  validate(p);
  if (product(dims) != values.size()) throw ShapeError("quantize_array: dims do not match value count");
  QArray a{std::move(dims), {}, p};
  a.data.reserve(values.size());
  for (double v : values) a.data.push_back(quantize(v, p, sat));
  return a;
}

inline std::vector<double> dequantize(const QArray& a) {
  std::vector<double> out;
  out.reserve(a.data.size());
  for (q16 v : a.data) out.push_back(dequantize(v, a.params));
  return out;
}

}  // namespace dscsim
