#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "phaseformer/tape.hpp"
#include "phaseformer/tensor.hpp"

namespace phaseformer {

// A differentiable scalar program: given a tape and one leaf per parameter
// tensor (in the same order), build the graph and return the scalar loss.
using ScalarProgram = std::function<Var(Tape&, const std::vector<Var>&)>;

struct CoordCheck {
  size_t param = 0;  // which parameter tensor
  size_t coord = 0;  // flat index within it
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<CoordCheck> coords;
  double max_rel_err = 0.0;
  size_t worst_param = 0;
  size_t worst_coord = 0;
  bool pass = false;  // max_rel_err < tol over all coordinates
};

// Central-difference audit of the tape gradient: for every coordinate of
// every parameter, compares d(loss)/dx against (f(x+h) - f(x-h)) / 2h.
// Relative error uses a floored denominator so coordinates whose true
// gradient is ~0 are judged on absolute error at the floor's scale.
GradCheckReport finite_diff_check(const ScalarProgram& f,
                                  const std::vector<Tensor>& params,
                                  double h = 1e-5, double tol = 1e-4);

}  // namespace phaseformer
