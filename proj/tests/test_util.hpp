#pragma once

// Helpers shared by the test binaries (doctest must already be included).

#include <functional>
#include <vector>

#include "phaseformer/error.hpp"
#include "phaseformer/tape.hpp"
#include "phaseformer/tensor.hpp"

namespace test_util {

// Reduce an r-by-n node to a scalar with distinct fixed weights so every
// coordinate's gradient is exercised: s = u * Y * w.
inline phaseformer::Var weighted_sum(phaseformer::Tape& t, phaseformer::Var y) {
  using phaseformer::Tensor;
  const Tensor& ty = t.value(y);
  size_t r = ty.rows(), n = ty.cols();
  std::vector<double> uv(r), wv(n);
  for (size_t i = 0; i < r; ++i) uv[i] = 0.3 + 0.17 * static_cast<double>(i);
  for (size_t j = 0; j < n; ++j) wv[j] = -0.2 + 0.29 * static_cast<double>(j);
  phaseformer::Var u = t.constant(Tensor::matrix(1, r, uv));
  phaseformer::Var w = t.constant(Tensor::matrix(n, 1, wv));
  return t.matmul(t.matmul(u, y), w);
}

inline phaseformer::ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const phaseformer::Error& e) {
    return e.kind();
  }
  FAIL("expected an Error to be thrown");
  return phaseformer::ErrorKind::io;
}

}  // namespace test_util
