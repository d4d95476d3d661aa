#include "phaseformer/tape.hpp"

#include <cmath>
#include <string>

namespace phaseformer {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_matrix(const Tensor& t, const char* what) {
  if (t.rank() > 2 || t.size() == 0) fail(ErrorKind::dimension, std::string(what) + ": bad tensor");
}

}  // namespace

Var Tape::push(Tensor value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<uint32_t>(nodes_.size() - 1)};
}

std::vector<double>& Tape::gbuf(uint32_t i) {
  Node& n = nodes_[i];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Var Tape::leaf(const Tensor& value, bool requires_grad) {
  check_matrix(value, "leaf");
  return push(value, requires_grad, {});
}

Var Tape::constant(Tensor value) {
  check_matrix(value, "constant");
  return push(std::move(value), false, {});
}

const std::vector<double>& Tape::grad(Var v) {
  Node& n = nodes_[v.idx];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(a.idx);
  const Tensor& tb = val(b.idx);
  if (!ta.same_extent(tb)) fail(ErrorKind::dimension, "add: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
  bool ng = wants(a.idx) || wants(b.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, b, c]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      if (wants(a.idx)) {
        std::vector<double>& ga = gbuf(a.idx);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(b.idx)) {
        std::vector<double>& gb = gbuf(b.idx);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  return c;
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = val(a.idx);
  const Tensor& tb = val(b.idx);
  if (!ta.same_extent(tb)) fail(ErrorKind::dimension, "sub: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
  bool ng = wants(a.idx) || wants(b.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, b, c]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      if (wants(a.idx)) {
        std::vector<double>& ga = gbuf(a.idx);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(b.idx)) {
        std::vector<double>& gb = gbuf(b.idx);
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  return c;
}

Var Tape::scale(Var a, double cfac) {
  Tensor out = val(a.idx);
  for (double& x : out.data) x *= cfac;
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, cfac]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      std::vector<double>& ga = gbuf(a.idx);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += cfac * g[i];
    };
  return c;
}

Var Tape::add_rowvec(Var a, Var b) {
  const Tensor& ta = val(a.idx);
  const Tensor& tb = val(b.idx);
  if (tb.rows() != 1 || tb.cols() != ta.cols())
    fail(ErrorKind::dimension, "add_rowvec: bias must be 1 x cols(a)");
  Tensor out = ta;
  size_t r = ta.rows(), n = ta.cols();
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < n; ++j) out.data[i * n + j] += tb[j];
  bool ng = wants(a.idx) || wants(b.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, b, c, r, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      if (wants(a.idx)) {
        std::vector<double>& ga = gbuf(a.idx);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(b.idx)) {
        std::vector<double>& gb = gbuf(b.idx);
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    };
  return c;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = val(a.idx);
  const Tensor& tb = val(b.idx);
  size_t m = ta.rows(), k = ta.cols(), k2 = tb.rows(), n = tb.cols();
  if (k != k2) fail(ErrorKind::dimension, "matmul: inner dims disagree");
  Tensor out({m, n});
  // ikj order: for each (i, j) contributions accumulate over ascending k,
  // matching the naive triple-loop summation order bit for bit.
  for (size_t i = 0; i < m; ++i) {
    const double* arow = ta.data.data() + i * k;
    double* crow = out.data.data() + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      const double* brow = tb.data.data() + kk * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  bool ng = wants(a.idx) || wants(b.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, b, c, m, k, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      const Tensor& ta2 = val(a.idx);
      const Tensor& tb2 = val(b.idx);
      if (wants(a.idx)) {
        // dA = dC * B^T
        std::vector<double>& ga = gbuf(a.idx);
        for (size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          double* garow = ga.data() + i * k;
          for (size_t kk = 0; kk < k; ++kk) {
            const double* brow = tb2.data.data() + kk * n;
            double acc = 0.0;
            for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            garow[kk] += acc;
          }
        }
      }
      if (wants(b.idx)) {
        // dB = A^T * dC
        std::vector<double>& gb = gbuf(b.idx);
        for (size_t i = 0; i < m; ++i) {
          const double* arow = ta2.data.data() + i * k;
          const double* grow = g.data() + i * n;
          for (size_t kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            double* gbrow = gb.data() + kk * n;
            for (size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    };
  return c;
}

Var Tape::transpose(Var a) {
  const Tensor& ta = val(a.idx);
  size_t r = ta.rows(), n = ta.cols();
  Tensor out({n, r});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < n; ++j) out.data[j * r + i] = ta.data[i * n + j];
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, r, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      std::vector<double>& ga = gbuf(a.idx);
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * r + i];
    };
  return c;
}

Var Tape::slice_rows(Var a, size_t r0, size_t nr) {
  const Tensor& ta = val(a.idx);
  size_t r = ta.rows(), n = ta.cols();
  if (nr == 0 || r0 + nr > r) fail(ErrorKind::dimension, "slice_rows: range out of bounds");
  Tensor out({nr, n});
  for (size_t i = 0; i < nr * n; ++i) out.data[i] = ta.data[r0 * n + i];
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, r0, nr, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      std::vector<double>& ga = gbuf(a.idx);
      for (size_t i = 0; i < nr * n; ++i) ga[r0 * n + i] += g[i];
    };
  return c;
}

Var Tape::slice_cols(Var a, size_t c0, size_t nc) {
  const Tensor& ta = val(a.idx);
  size_t r = ta.rows(), n = ta.cols();
  if (nc == 0 || c0 + nc > n) fail(ErrorKind::dimension, "slice_cols: range out of bounds");
  Tensor out({r, nc});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < nc; ++j) out.data[i * nc + j] = ta.data[i * n + c0 + j];
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, c0, nc, r, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      std::vector<double>& ga = gbuf(a.idx);
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < nc; ++j) ga[i * n + c0 + j] += g[i * nc + j];
    };
  return c;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::dimension, "concat_rows: no parts");
  size_t n = val(parts[0].idx).cols();
  size_t total = 0;
  bool ng = false;
  for (Var p : parts) {
    const Tensor& t = val(p.idx);
    if (t.cols() != n) fail(ErrorKind::dimension, "concat_rows: column mismatch");
    total += t.rows();
    ng = ng || wants(p.idx);
  }
  Tensor out({total, n});
  size_t row = 0;
  for (Var p : parts) {
    const Tensor& t = val(p.idx);
    for (size_t i = 0; i < t.size(); ++i) out.data[row * n + i] = t.data[i];
    row += t.rows();
  }
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng) {
    std::vector<Var> ps = parts;
    nodes_[c.idx].back = [this, ps, c, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      size_t row = 0;
      for (Var p : ps) {
        size_t pr = val(p.idx).rows();
        if (wants(p.idx)) {
          std::vector<double>& gp = gbuf(p.idx);
          for (size_t i = 0; i < pr * n; ++i) gp[i] += g[row * n + i];
        }
        row += pr;
      }
    };
  }
  return c;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::dimension, "concat_cols: no parts");
  size_t r = val(parts[0].idx).rows();
  size_t total = 0;
  bool ng = false;
  for (Var p : parts) {
    const Tensor& t = val(p.idx);
    if (t.rows() != r) fail(ErrorKind::dimension, "concat_cols: row mismatch");
    total += t.cols();
    ng = ng || wants(p.idx);
  }
  Tensor out({r, total});
  size_t col = 0;
  for (Var p : parts) {
    const Tensor& t = val(p.idx);
    size_t pc = t.cols();
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < pc; ++j) out.data[i * total + col + j] = t.data[i * pc + j];
    col += pc;
  }
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng) {
    std::vector<Var> ps = parts;
    nodes_[c.idx].back = [this, ps, c, r, total]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      size_t col = 0;
      for (Var p : ps) {
        size_t pc = val(p.idx).cols();
        if (wants(p.idx)) {
          std::vector<double>& gp = gbuf(p.idx);
          for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * total + col + j];
        }
        col += pc;
      }
    };
  }
  return c;
}

Var Tape::gather_rows(Var a, std::vector<size_t> index) {
  const Tensor& ta = val(a.idx);
  size_t r = ta.rows(), n = ta.cols();
  if (index.empty()) fail(ErrorKind::dimension, "gather_rows: empty index");
  for (size_t i : index)
    if (i >= r) fail(ErrorKind::index, "gather_rows: row index out of range");
  Tensor out({index.size(), n});
  for (size_t i = 0; i < index.size(); ++i)
    for (size_t j = 0; j < n; ++j) out.data[i * n + j] = ta.data[index[i] * n + j];
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, idx = std::move(index), n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      std::vector<double>& ga = gbuf(a.idx);
      for (size_t i = 0; i < idx.size(); ++i)
        for (size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += g[i * n + j];
    };
  return c;
}

Var Tape::repeat_rows(Var a, size_t times) {
  const Tensor& ta = val(a.idx);
  if (times == 0) fail(ErrorKind::argument, "repeat_rows: times must be positive");
  size_t r = ta.rows(), n = ta.cols();
  Tensor out({r * times, n});
  for (size_t t = 0; t < times; ++t)
    for (size_t i = 0; i < r * n; ++i) out.data[t * r * n + i] = ta.data[i];
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, times, r, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      std::vector<double>& ga = gbuf(a.idx);
      for (size_t t = 0; t < times; ++t)
        for (size_t i = 0; i < r * n; ++i) ga[i] += g[t * r * n + i];
    };
  return c;
}

Var Tape::repeat_interleave_rows(Var a, size_t times) {
  const Tensor& ta = val(a.idx);
  if (times == 0) fail(ErrorKind::argument, "repeat_interleave_rows: times must be positive");
  size_t r = ta.rows(), n = ta.cols();
  Tensor out({r * times, n});
  for (size_t i = 0; i < r; ++i)
    for (size_t t = 0; t < times; ++t)
      for (size_t j = 0; j < n; ++j) out.data[(i * times + t) * n + j] = ta.data[i * n + j];
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, times, r, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      std::vector<double>& ga = gbuf(a.idx);
      for (size_t i = 0; i < r; ++i)
        for (size_t t = 0; t < times; ++t)
          for (size_t j = 0; j < n; ++j) ga[i * n + j] += g[(i * times + t) * n + j];
    };
  return c;
}

Var Tape::mean_rows(Var a) {
  const Tensor& ta = val(a.idx);
  size_t r = ta.rows(), n = ta.cols();
  Tensor out({1, n});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < n; ++j) out.data[j] += ta.data[i * n + j];
  for (size_t j = 0; j < n; ++j) out.data[j] /= static_cast<double>(r);
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, r, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      std::vector<double>& ga = gbuf(a.idx);
      double inv = 1.0 / static_cast<double>(r);
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
    };
  return c;
}

Var Tape::softmax_rows(Var a) {
  const Tensor& ta = val(a.idx);
  size_t r = ta.rows(), n = ta.cols();
  Tensor out = ta;
  for (size_t i = 0; i < r; ++i) {
    double* row = out.data.data() + i * n;
    double mx = row[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  bool ng = wants(a.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, a, c, r, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      const Tensor& y = val(c.idx);
      std::vector<double>& ga = gbuf(a.idx);
      for (size_t i = 0; i < r; ++i) {
        const double* yrow = y.data.data() + i * n;
        const double* grow = g.data() + i * n;
        double dot = 0.0;
        for (size_t j = 0; j < n; ++j) dot += yrow[j] * grow[j];
        for (size_t j = 0; j < n; ++j) ga[i * n + j] += yrow[j] * (grow[j] - dot);
      }
    };
  return c;
}

Var Tape::masked_softmax(Var scores, const std::vector<uint8_t>& mask) {
  const Tensor& ts = val(scores.idx);
  if (ts.rows() != 1) fail(ErrorKind::dimension, "masked_softmax: expects a vector");
  size_t n = ts.cols();
  if (mask.size() != n) fail(ErrorKind::dimension, "masked_softmax: mask length mismatch");
  bool any = false;
  double mx = 0.0;
  for (size_t j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    mx = any ? std::max(mx, ts[j]) : ts[j];
    any = true;
  }
  if (!any) fail(ErrorKind::segment, "masked_softmax: empty segment (all-false mask)");
  Tensor out = ts;
  double sum = 0.0;
  for (size_t j = 0; j < n; ++j) {
    if (mask[j]) {
      out[j] = std::exp(ts[j] - mx);
      sum += out[j];
    } else {
      out[j] = 0.0;
    }
  }
  for (size_t j = 0; j < n; ++j)
    if (mask[j]) out[j] /= sum;
  bool ng = wants(scores.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, scores, c, mask, n]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      const Tensor& y = val(c.idx);
      std::vector<double>& ga = gbuf(scores.idx);
      double dot = 0.0;
      for (size_t j = 0; j < n; ++j)
        if (mask[j]) dot += y[j] * g[j];
      // masked-out positions get exact zero gradient
      for (size_t j = 0; j < n; ++j)
        if (mask[j]) ga[j] += y[j] * (g[j] - dot);
    };
  return c;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& tx = val(x.idx);
  size_t r = tx.rows(), n = tx.cols();
  if (n == 0) fail(ErrorKind::dimension, "layer_norm: zero feature dim");
  const Tensor& tg = val(gamma.idx);
  const Tensor& tb = val(beta.idx);
  if (tg.size() != n || tb.size() != n)
    fail(ErrorKind::dimension, "layer_norm: gamma/beta must have length equal to the last dim");
  Tensor out({r, n});
  std::vector<double> means(r), rstds(r);
  for (size_t i = 0; i < r; ++i) {
    const double* row = tx.data.data() + i * n;
    double mean = 0.0;
    for (size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double rstd = 1.0 / std::sqrt(var + eps);
    means[i] = mean;
    rstds[i] = rstd;
    for (size_t j = 0; j < n; ++j)
      out.data[i * n + j] = tg[j] * ((row[j] - mean) * rstd) + tb[j];
  }
  bool ng = wants(x.idx) || wants(gamma.idx) || wants(beta.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, x, gamma, beta, c, r, n, means = std::move(means),
                          rstds = std::move(rstds)]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      const Tensor& tx2 = val(x.idx);
      const Tensor& tg2 = val(gamma.idx);
      for (size_t i = 0; i < r; ++i) {
        const double* row = tx2.data.data() + i * n;
        const double* grow = g.data() + i * n;
        double mean = means[i], rstd = rstds[i];
        if (wants(beta.idx)) {
          std::vector<double>& gb = gbuf(beta.idx);
          for (size_t j = 0; j < n; ++j) gb[j] += grow[j];
        }
        if (wants(gamma.idx)) {
          std::vector<double>& gg = gbuf(gamma.idx);
          for (size_t j = 0; j < n; ++j) gg[j] += grow[j] * (row[j] - mean) * rstd;
        }
        if (wants(x.idx)) {
          std::vector<double>& gx = gbuf(x.idx);
          double sum_g = 0.0, sum_gx = 0.0;
          for (size_t j = 0; j < n; ++j) {
            double xhat = (row[j] - mean) * rstd;
            double gj = grow[j] * tg2[j];
            sum_g += gj;
            sum_gx += gj * xhat;
          }
          double invn = 1.0 / static_cast<double>(n);
          for (size_t j = 0; j < n; ++j) {
            double xhat = (row[j] - mean) * rstd;
            double gj = grow[j] * tg2[j];
            gx[i * n + j] += rstd * (gj - invn * sum_g - xhat * invn * sum_gx);
          }
        }
      }
    };
  return c;
}

Var Tape::gelu(Var x) {
  const Tensor& tx = val(x.idx);
  Tensor out = tx;
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  bool ng = wants(x.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, x, c]() {
      const std::vector<double>& g = nodes_[c.idx].grad;
      const Tensor& tx2 = val(x.idx);
      std::vector<double>& gx = gbuf(x.idx);
      for (size_t i = 0; i < g.size(); ++i) {
        double v = tx2[i];
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    };
  return c;
}

Var Tape::linear(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

Var Tape::cross_entropy(Var logits, size_t label) {
  const Tensor& tl = val(logits.idx);
  if (tl.rows() != 1) fail(ErrorKind::dimension, "cross_entropy: expects a logit vector");
  size_t n = tl.cols();
  if (label >= n) fail(ErrorKind::index, "cross_entropy: label out of range");
  double mx = tl[0];
  for (size_t j = 1; j < n; ++j) mx = std::max(mx, tl[j]);
  double sum = 0.0;
  std::vector<double> probs(n);
  for (size_t j = 0; j < n; ++j) {
    probs[j] = std::exp(tl[j] - mx);
    sum += probs[j];
  }
  for (size_t j = 0; j < n; ++j) probs[j] /= sum;
  Tensor out({1});
  out[0] = std::log(sum) + mx - tl[label];
  bool ng = wants(logits.idx);
  Var c = push(std::move(out), false, {});
  nodes_[c.idx].needs_grad = ng;
  if (ng)
    nodes_[c.idx].back = [this, logits, c, label, probs = std::move(probs), n]() {
      double g = nodes_[c.idx].grad[0];
      std::vector<double>& gl = gbuf(logits.idx);
      for (size_t j = 0; j < n; ++j)
        gl[j] += g * (probs[j] - (j == label ? 1.0 : 0.0));
    };
  return c;
}

void Tape::backward(Var scalar_loss) {
  Node& loss = nodes_[scalar_loss.idx];
  if (loss.value.size() != 1) fail(ErrorKind::argument, "backward: loss must be scalar");
  gbuf(scalar_loss.idx)[0] = 1.0;
  for (size_t i = scalar_loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back && !n.grad.empty()) n.back();
  }
}

}  // namespace phaseformer
