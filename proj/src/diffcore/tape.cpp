#include "ipd/diffcore/tape.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace ipd::diffcore {

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("vars belong to different tapes");
}

void check_same_shape(Var a, Var b) {
  if (a.val().rows() != b.val().rows() || a.val().cols() != b.val().cols())
    throw std::invalid_argument("shape mismatch between operands");
}

}  // namespace

const Mat& Var::val() const { return tape->val(idx); }

Var Tape::input(Mat value) { return make(std::move(value), false, nullptr); }

Var Tape::param(Mat value) { return make(std::move(value), true, nullptr); }

Var Tape::make(Mat value, bool requires_grad, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.idx)];
  if (!n.grad_set) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int idx, const Mat& delta) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  if (!n.requires_grad) return;
  if (!n.grad_set) {
    n.grad = delta;
    n.grad_set = true;
  } else {
    n.grad += delta;
  }
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("root var not on this tape");
  const Node& r = nodes_[static_cast<size_t>(root.idx)];
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw std::invalid_argument("backward root must be scalar (1x1)");
  for (Node& n : nodes_) n.grad_set = false;
  accumulate(root.idx, Mat::Ones(1, 1));
  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.requires_grad && n.grad_set && n.back) n.back(*this, n.grad);
  }
}

void Tape::reset() { nodes_.clear(); }

// ---------------------------------------------------------------------------

namespace {

// Creates a node whose gradient routes to one or two parents through plain
// matrix expressions captured in the closure.
Var unary(Var a, Mat value, std::function<Mat(Tape&, const Mat&)> dval) {
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a.idx);
  const int pa = a.idx;
  return t.make(std::move(value), rg,
                rg ? Tape::BackFn([pa, f = std::move(dval)](Tape& tp, const Mat& g) {
                  tp.accumulate(pa, f(tp, g));
                })
                   : Tape::BackFn(nullptr));
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b);
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a.idx) || t.requires_grad(b.idx);
  const int pa = a.idx, pb = b.idx;
  return t.make(a.val() + b.val(), rg, rg ? Tape::BackFn([pa, pb](Tape& tp, const Mat& g) {
    tp.accumulate(pa, g);
    tp.accumulate(pb, g);
  }) : Tape::BackFn(nullptr));
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b);
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a.idx) || t.requires_grad(b.idx);
  const int pa = a.idx, pb = b.idx;
  return t.make(a.val() - b.val(), rg, rg ? Tape::BackFn([pa, pb](Tape& tp, const Mat& g) {
    tp.accumulate(pa, g);
    tp.accumulate(pb, -g);
  }) : Tape::BackFn(nullptr));
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b);
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a.idx) || t.requires_grad(b.idx);
  const int pa = a.idx, pb = b.idx;
  return t.make(a.val().cwiseProduct(b.val()), rg,
                rg ? Tape::BackFn([pa, pb](Tape& tp, const Mat& g) {
                  tp.accumulate(pa, g.cwiseProduct(tp.val(pb)));
                  tp.accumulate(pb, g.cwiseProduct(tp.val(pa)));
                }) : Tape::BackFn(nullptr));
}

Var min_elem(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b);
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a.idx) || t.requires_grad(b.idx);
  const int pa = a.idx, pb = b.idx;
  return t.make(a.val().cwiseMin(b.val()), rg,
                rg ? Tape::BackFn([pa, pb](Tape& tp, const Mat& g) {
                  const Mat mask = (tp.val(pa).array() <= tp.val(pb).array()).cast<double>();
                  tp.accumulate(pa, g.cwiseProduct(mask));
                  tp.accumulate(pb, g.cwiseProduct(Mat(1.0 - mask.array())));
                }) : Tape::BackFn(nullptr));
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.val().cols() != b.val().rows())
    throw std::invalid_argument("matmul inner dimension mismatch");
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a.idx) || t.requires_grad(b.idx);
  const int pa = a.idx, pb = b.idx;
  return t.make(a.val() * b.val(), rg, rg ? Tape::BackFn([pa, pb](Tape& tp, const Mat& g) {
    tp.accumulate(pa, g * tp.val(pb).transpose());
    tp.accumulate(pb, tp.val(pa).transpose() * g);
  }) : Tape::BackFn(nullptr));
}

Var transpose(Var a) {
  return unary(a, a.val().transpose(),
               [](Tape&, const Mat& g) { return Mat(g.transpose()); });
}

Var scale(Var a, double c) {
  return unary(a, a.val() * c, [c](Tape&, const Mat& g) { return Mat(g * c); });
}

Var add_const(Var a, double c) {
  return unary(a, Mat(a.val().array() + c), [](Tape&, const Mat& g) { return g; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var add_colvec(Var a, Var v) {
  check_same_tape(a, v);
  if (v.val().cols() != 1 || v.val().rows() != a.val().rows())
    throw std::invalid_argument("add_colvec expects (m x 1) vector matching rows");
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a.idx) || t.requires_grad(v.idx);
  const int pa = a.idx, pv = v.idx;
  return t.make(a.val().colwise() + Eigen::VectorXd(v.val().col(0)), rg,
                rg ? Tape::BackFn([pa, pv](Tape& tp, const Mat& g) {
                  tp.accumulate(pa, g);
                  tp.accumulate(pv, Mat(g.rowwise().sum()));
                }) : Tape::BackFn(nullptr));
}

Var mul_colvec(Var a, Var v) {
  check_same_tape(a, v);
  if (v.val().cols() != 1 || v.val().rows() != a.val().rows())
    throw std::invalid_argument("mul_colvec expects (m x 1) vector matching rows");
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a.idx) || t.requires_grad(v.idx);
  const int pa = a.idx, pv = v.idx;
  return t.make(a.val().array().colwise() * v.val().col(0).array(), rg,
                rg ? Tape::BackFn([pa, pv](Tape& tp, const Mat& g) {
                  tp.accumulate(pa, Mat(g.array().colwise() * tp.val(pv).col(0).array()));
                  tp.accumulate(pv, Mat(g.cwiseProduct(tp.val(pa)).rowwise().sum()));
                }) : Tape::BackFn(nullptr));
}

Var relu(Var a) {
  const int pa = a.idx;
  return unary(a, a.val().cwiseMax(0.0), [pa](Tape& tp, const Mat& g) {
    return Mat(g.cwiseProduct((tp.val(pa).array() > 0.0).cast<double>().matrix()));
  });
}

Var exp_(Var a) {
  Mat v = a.val().array().exp();
  return unary(a, v, [v](Tape&, const Mat& g) { return Mat(g.cwiseProduct(v)); });
}

Var log_(Var a) {
  const int pa = a.idx;
  return unary(a, a.val().array().log(), [pa](Tape& tp, const Mat& g) {
    return Mat(g.cwiseQuotient(tp.val(pa)));
  });
}

Var sqrt_(Var a) {
  const int pa = a.idx;
  return unary(a, a.val().array().sqrt(), [pa](Tape& tp, const Mat& g) {
    return Mat((g.array() * 0.5 / tp.val(pa).array().sqrt()).matrix());
  });
}

Var square(Var a) {
  const int pa = a.idx;
  return unary(a, a.val().array().square(), [pa](Tape& tp, const Mat& g) {
    return Mat(2.0 * g.cwiseProduct(tp.val(pa)));
  });
}

Var clamp(Var a, double lo, double hi) {
  const int pa = a.idx;
  return unary(a, a.val().cwiseMax(lo).cwiseMin(hi), [pa, lo, hi](Tape& tp, const Mat& g) {
    const auto& x = tp.val(pa).array();
    const Mat pass = ((x > lo) && (x < hi)).cast<double>();
    return Mat(g.cwiseProduct(pass));
  });
}

Var huber(Var e, double delta) {
  if (delta <= 0.0) throw std::invalid_argument("huber delta must be positive");
  const int pa = e.idx;
  const auto& x = e.val().array();
  Mat v = (x.abs() <= delta)
              .select(0.5 * x.square(), delta * (x.abs() - 0.5 * delta));
  return unary(e, std::move(v), [pa, delta](Tape& tp, const Mat& g) {
    const auto& x = tp.val(pa).array();
    const Mat d = (x.abs() <= delta).select(x, delta * x.sign());
    return Mat(g.cwiseProduct(d));
  });
}

Var expectile_huber(Var e, double tau, double delta) {
  if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("tau must lie in (0,1)");
  if (delta <= 0.0) throw std::invalid_argument("delta must be positive");
  const int pa = e.idx;
  const auto& x = e.val().array();
  const auto w = (x < 0.0).select(Eigen::ArrayXXd::Constant(x.rows(), x.cols(), 1.0 - tau),
                                  Eigen::ArrayXXd::Constant(x.rows(), x.cols(), tau));
  Mat v = w * (x.abs() <= delta).select(0.5 * x.square(), delta * (x.abs() - 0.5 * delta));
  return unary(e, std::move(v), [pa, tau, delta](Tape& tp, const Mat& g) {
    const auto& x = tp.val(pa).array();
    const auto w = (x < 0.0).select(Eigen::ArrayXXd::Constant(x.rows(), x.cols(), 1.0 - tau),
                                    Eigen::ArrayXXd::Constant(x.rows(), x.cols(), tau));
    const Mat d = w * (x.abs() <= delta).select(x, delta * x.sign());
    return Mat(g.cwiseProduct(d));
  });
}

Var sum_all(Var a) {
  const int pa = a.idx;
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  return unary(a, std::move(v), [pa](Tape& tp, const Mat& g) {
    return Mat(Mat::Constant(tp.val(pa).rows(), tp.val(pa).cols(), g(0, 0)));
  });
}

Var mean_all(Var a) {
  const int pa = a.idx;
  const double n = static_cast<double>(a.val().size());
  Mat v(1, 1);
  v(0, 0) = a.val().sum() / n;
  return unary(a, std::move(v), [pa, n](Tape& tp, const Mat& g) {
    return Mat(Mat::Constant(tp.val(pa).rows(), tp.val(pa).cols(), g(0, 0) / n));
  });
}

Var colwise_sum(Var a) {
  const int pa = a.idx;
  return unary(a, Mat(a.val().colwise().sum()), [pa](Tape& tp, const Mat& g) {
    return Mat(Mat::Ones(tp.val(pa).rows(), 1) * g);
  });
}

Var slice_rows(Var a, int r0, int nr) {
  if (r0 < 0 || nr <= 0 || r0 + nr > a.val().rows())
    throw std::invalid_argument("slice_rows out of range");
  const int pa = a.idx;
  return unary(a, Mat(a.val().middleRows(r0, nr)), [pa, r0, nr](Tape& tp, const Mat& g) {
    Mat d = Mat::Zero(tp.val(pa).rows(), tp.val(pa).cols());
    d.middleRows(r0, nr) = g;
    return d;
  });
}

Var slice_cols(Var a, int c0, int nc) {
  if (c0 < 0 || nc <= 0 || c0 + nc > a.val().cols())
    throw std::invalid_argument("slice_cols out of range");
  const int pa = a.idx;
  return unary(a, Mat(a.val().middleCols(c0, nc)), [pa, c0, nc](Tape& tp, const Mat& g) {
    Mat d = Mat::Zero(tp.val(pa).rows(), tp.val(pa).cols());
    d.middleCols(c0, nc) = g;
    return d;
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Tape& t = *parts[0].tape;
  int rows = 0;
  const int cols = parts[0].cols();
  bool rg = false;
  std::vector<int> pidx;
  std::vector<int> heights;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    if (p.cols() != cols) throw std::invalid_argument("concat_rows column mismatch");
    rows += p.rows();
    rg = rg || t.requires_grad(p.idx);
    pidx.push_back(p.idx);
    heights.push_back(p.rows());
  }
  Mat v(rows, cols);
  int r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p.rows()) = p.val();
    r += p.rows();
  }
  return t.make(std::move(v), rg,
                rg ? Tape::BackFn([pidx, heights](Tape& tp, const Mat& g) {
                  int r = 0;
                  for (size_t i = 0; i < pidx.size(); ++i) {
                    tp.accumulate(pidx[i], Mat(g.middleRows(r, heights[i])));
                    r += heights[i];
                  }
                }) : Tape::BackFn(nullptr));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  Tape& t = *parts[0].tape;
  int cols = 0;
  const int rows = parts[0].rows();
  bool rg = false;
  std::vector<int> pidx;
  std::vector<int> widths;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    if (p.rows() != rows) throw std::invalid_argument("concat_cols row mismatch");
    cols += p.cols();
    rg = rg || t.requires_grad(p.idx);
    pidx.push_back(p.idx);
    widths.push_back(p.cols());
  }
  Mat v(rows, cols);
  int c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.val();
    c += p.cols();
  }
  return t.make(std::move(v), rg,
                rg ? Tape::BackFn([pidx, widths](Tape& tp, const Mat& g) {
                  int c = 0;
                  for (size_t i = 0; i < pidx.size(); ++i) {
                    tp.accumulate(pidx[i], Mat(g.middleCols(c, widths[i])));
                    c += widths[i];
                  }
                }) : Tape::BackFn(nullptr));
}

Var gather_cols(Var a, std::vector<int> indices) {
  const int pa = a.idx;
  Mat v(a.val().rows(), static_cast<Eigen::Index>(indices.size()));
  for (size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] < 0 || indices[j] >= a.val().cols())
      throw std::invalid_argument("gather_cols index out of range");
    v.col(static_cast<Eigen::Index>(j)) = a.val().col(indices[j]);
  }
  return unary(a, std::move(v), [pa, idx = std::move(indices)](Tape& tp, const Mat& g) {
    Mat d = Mat::Zero(tp.val(pa).rows(), tp.val(pa).cols());
    for (size_t j = 0; j < idx.size(); ++j)
      d.col(idx[j]) += g.col(static_cast<Eigen::Index>(j));
    return d;
  });
}

Var layernorm(Var a, double eps) {
  const int pa = a.idx;
  const Mat& x = a.val();
  const Eigen::Index m = x.rows();
  Eigen::RowVectorXd mu = x.colwise().mean();
  Mat xc = x.rowwise() - mu;
  Eigen::RowVectorXd var = xc.array().square().colwise().mean();
  Eigen::RowVectorXd s = (var.array() + eps).sqrt();
  Mat y = xc.array().rowwise() / s.array();
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(pa);
  return t.make(y, rg,
                rg ? Tape::BackFn([pa, s, y, m](Tape& tp, const Mat& g) {
                  // dx = (1/s) * (g - mean(g) - y * mean(g .* y))  per column
                  Eigen::RowVectorXd gm = g.colwise().mean();
                  Eigen::RowVectorXd gym = g.cwiseProduct(y).colwise().mean();
                  Mat d = g.rowwise() - gm;
                  d.noalias() -= y * gym.asDiagonal();
                  d.array().rowwise() /= s.array();
                  (void)m;
                  tp.accumulate(pa, d);
                }) : Tape::BackFn(nullptr));
}

Var softmax_rows(Var a, bool causal) {
  const int pa = a.idx;
  const Mat& x = a.val();
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::Index lim = causal ? std::min<Eigen::Index>(i + 1, x.cols()) : x.cols();
    const auto row = x.row(i).head(lim);
    const double mx = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - mx).exp();
    const double z = e.sum();
    y.row(i).setZero();
    y.row(i).head(lim) = e / z;
  }
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(pa);
  return t.make(y, rg,
                rg ? Tape::BackFn([pa, y](Tape& tp, const Mat& g) {
                  Mat d(y.rows(), y.cols());
                  for (Eigen::Index i = 0; i < y.rows(); ++i) {
                    const double dot = g.row(i).cwiseProduct(y.row(i)).sum();
                    d.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix();
                  }
                  tp.accumulate(pa, d);
                }) : Tape::BackFn(nullptr));
}

Var dropout(Var a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate outside [0,1)");
  if (rate == 0.0) return a;
  const Mat& x = a.val();
  Mat mask(x.rows(), x.cols());
  const double keep = 1.0 - rate;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      mask(i, j) = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  return unary(a, x.cwiseProduct(mask), [mask](Tape&, const Mat& g) {
    return Mat(g.cwiseProduct(mask));
  });
}

Var gaussian_logpdf_cols(Var mu, Var log_std, const Mat& x) {
  Tape& t = *mu.tape;
  if (mu.val().rows() != x.rows() || mu.val().cols() != x.cols())
    throw std::invalid_argument("gaussian_logpdf dimension mismatch");
  constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5*log(2*pi)
  Var xs = t.input(x);
  Var diff = sub(xs, mu);
  Var inv_std = exp_(neg(log_std));                 // (d x 1)
  Var z = mul_colvec(diff, inv_std);                // (x - mu) / sigma
  Var quad = scale(square(z), -0.5);                // -(z^2)/2
  Var per_dim = add_const(sub(quad, /*broadcast*/ add_colvec(t.input(Mat::Zero(x.rows(), x.cols())), log_std)), -kHalfLog2Pi);
  return colwise_sum(per_dim);                      // (1 x n)
}

}  // namespace ipd::diffcore
