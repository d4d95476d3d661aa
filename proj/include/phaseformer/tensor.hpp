#pragma once

#include <cstddef>
#include <vector>

#include "phaseformer/error.hpp"
#include "phaseformer/rng.hpp"

namespace phaseformer {

// Dense row-major tensor of 64-bit floats, rank 1 or 2. A rank-1 tensor of
// length n behaves as a 1-by-n row wherever a matrix is expected. Tensors are
// plain values: copying copies the buffer, and read-only sharing across
// threads is safe. `grad` is an optional buffer of identical length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
    check_shape();
    data.assign(count(), 0.0);
  }

  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data) x = v;
    return t;
  }

  static Tensor vec(std::vector<double> values) {
    Tensor t;
    t.shape_ = {values.size()};
    t.data = std::move(values);
    t.check_shape();
    return t;
  }

  static Tensor matrix(size_t r, size_t c, std::vector<double> values) {
    if (values.size() != r * c)
      fail(ErrorKind::dimension, "matrix literal size does not match shape");
    Tensor t;
    t.shape_ = {r, c};
    t.data = std::move(values);
    t.check_shape();
    return t;
  }

  static Tensor randn(std::vector<size_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.data) x = rng.gauss() * stddev;
    return t;
  }

  static Tensor trunc_normal(std::vector<size_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& x : t.data) x = rng.trunc_normal(stddev);
    return t;
  }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  size_t rank() const { return shape_.size(); }
  const std::vector<size_t>& shape() const { return shape_; }

  // Matrix view: rank-1 tensors are rows.
  size_t rows() const { return rank() <= 1 ? 1 : shape_[0]; }
  size_t cols() const {
    if (rank() == 0) return 0;
    return rank() == 1 ? shape_[0] : shape_[1];
  }

  double at(size_t r, size_t c) const { return data[r * cols() + c]; }
  double& at(size_t r, size_t c) { return data[r * cols() + c]; }
  double operator[](size_t i) const { return data[i]; }
  double& operator[](size_t i) { return data[i]; }

  bool same_extent(const Tensor& o) const {
    return rows() == o.rows() && cols() == o.cols();
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }

  std::vector<double> data;
  std::vector<double> grad;

 private:
  size_t count() const {
    size_t n = 1;
    for (size_t d : shape_) n *= d;
    return n;
  }
  void check_shape() const {
    if (shape_.empty() || shape_.size() > 2)
      fail(ErrorKind::dimension, "tensor rank must be 1 or 2");
    for (size_t d : shape_)
      if (d == 0) fail(ErrorKind::dimension, "tensor dims must be positive");
    if (!data.empty() && data.size() != count())
      fail(ErrorKind::dimension, "tensor data length does not match shape");
  }

  std::vector<size_t> shape_;
};

}  // namespace phaseformer
