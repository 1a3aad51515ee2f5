// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace faststi {

// Row-major dense array, rank 1..3 in practice.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }

  static Tensor zeros(std::initializer_list<std::size_t> s) {
    return Tensor(std::vector<std::size_t>(s));
  }
  static Tensor from(std::vector<std::size_t> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    if (t.data.size() != numel_of(t.shape))
      throw std::invalid_argument("Tensor::from: size mismatch");
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }
};

// Binary mask over an L x N field.
struct Mask {
  std::size_t L = 0, N = 0;
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(std::size_t l, std::size_t n, bool fill = false)
      : L(l), N(n), v(l * n, fill ? 1 : 0) {}

  std::uint8_t& at(std::size_t l, std::size_t n) { return v[l * N + n]; }
  std::uint8_t at(std::size_t l, std::size_t n) const { return v[l * N + n]; }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto b : v) c += b;
    return c;
  }
  bool any() const {
    for (auto b : v)
      if (b) return true;
    return false;
  }
};

}  // namespace faststi
