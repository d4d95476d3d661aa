#include "phaseformer/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace phaseformer {

namespace {

double eval_loss(const ScalarProgram& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p, /*requires_grad=*/false));
  Var loss = f(tape, leaves);
  return tape.value(loss)[0];
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarProgram& f,
                                  const std::vector<Tensor>& params,
                                  double h, double tol) {
  // One backward pass gives every analytic gradient at once.
  std::vector<std::vector<double>> analytic(params.size());
  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p, /*requires_grad=*/true));
    Var loss = f(tape, leaves);
    tape.backward(loss);
    for (size_t p = 0; p < params.size(); ++p) analytic[p] = tape.grad(leaves[p]);
  }

  GradCheckReport report;
  std::vector<Tensor> work = params;
  for (size_t p = 0; p < params.size(); ++p) {
    for (size_t i = 0; i < work[p].size(); ++i) {
      double saved = work[p][i];
      work[p][i] = saved + h;
      double fp = eval_loss(f, work);
      work[p][i] = saved - h;
      double fm = eval_loss(f, work);
      work[p][i] = saved;

      CoordCheck cc;
      cc.param = p;
      cc.coord = i;
      cc.analytic = analytic[p][i];
      cc.numeric = (fp - fm) / (2.0 * h);
      double denom = std::max({std::fabs(cc.analytic), std::fabs(cc.numeric), 1e-3});
      cc.rel_err = std::fabs(cc.analytic - cc.numeric) / denom;
      if (cc.rel_err > report.max_rel_err) {
        report.max_rel_err = cc.rel_err;
        report.worst_param = p;
        report.worst_coord = i;
      }
      report.coords.push_back(cc);
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace phaseformer
