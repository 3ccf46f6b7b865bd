#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ilab/errors.hpp"
#include "ilab/rng.hpp"

namespace ilab {

/// Dense row-major tensor. Rank 0 (scalar), 1 (vector) and 2 (matrix) are
/// all the transformer needs.
template <class S>
struct TensorT {
  std::vector<std::int64_t> shape;
  std::vector<S> data;
  bool requires_grad = false;

  TensorT() = default;
  TensorT(std::vector<std::int64_t> sh, std::vector<S> d, bool rg = false)
      : shape(std::move(sh)), data(std::move(d)), requires_grad(rg) {
    if (data.size() != static_cast<std::size_t>(numel_of(shape)))
      throw DimError("tensor data length does not match shape");
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& sh) {
    std::int64_t n = 1;
    for (auto e : sh) {
      if (e < 0) throw DimError("negative extent");
      n *= e;
    }
    return n;
  }

  static TensorT zeros(std::vector<std::int64_t> sh) {
    auto n = numel_of(sh);
    return TensorT(std::move(sh), std::vector<S>(static_cast<std::size_t>(n), S(0)));
  }

  static TensorT full(std::vector<std::int64_t> sh, S v) {
    auto n = numel_of(sh);
    return TensorT(std::move(sh), std::vector<S>(static_cast<std::size_t>(n), v));
  }

  static TensorT scalar(S v) { return TensorT({}, {v}); }

  static TensorT randn(std::vector<std::int64_t> sh, Rng& rng, double stddev = 1.0) {
    auto t = zeros(std::move(sh));
    for (auto& x : t.data) x = static_cast<S>(rng.normal() * stddev);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool is_scalar() const { return shape.empty(); }

  std::int64_t rows() const {
    if (shape.size() != 2) throw DimError("rows() on non-matrix");
    return shape[0];
  }
  std::int64_t cols() const {
    if (shape.size() != 2) throw DimError("cols() on non-matrix");
    return shape[1];
  }

  S& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  S at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols() + c)];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using Tensor = TensorT<double>;
using Tensor32 = TensorT<float>;

template <class S>
double dot(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.data.size() != b.data.size()) throw DimError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    acc += static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
  return acc;
}

template <class S>
double norm2(const TensorT<S>& a) {
  return std::sqrt(dot(a, a));
}

}  // namespace ilab
