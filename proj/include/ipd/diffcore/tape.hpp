#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

#include "ipd/common/rng.hpp"

namespace ipd::diffcore {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

// Handle to a node on a Tape. Cheap to copy; invalidated by Tape::reset().
struct Var {
  int idx{-1};
  Tape* tape{nullptr};

  bool valid() const { return idx >= 0 && tape != nullptr; }
  const Mat& val() const;
  int rows() const { return static_cast<int>(val().rows()); }
  int cols() const { return static_cast<int>(val().cols()); }
  double scalar() const { return val()(0, 0); }
};

// Append-only computation tape. Reverse iteration over nodes is a valid
// topological order, so backward() is a single reverse sweep.
class Tape {
 public:
  // Constant leaf: participates in forward only.
  Var input(Mat value);
  // Differentiable leaf.
  Var param(Mat value);

  const Mat& val(int idx) const { return nodes_[static_cast<size_t>(idx)].value; }
  bool requires_grad(int idx) const { return nodes_[static_cast<size_t>(idx)].requires_grad; }

  // Gradient of the last backward() root w.r.t. node idx. Zero matrix if the
  // node was not reached.
  Mat grad(Var v) const;

  // root must be a 1x1 node.
  void backward(Var root);

  // Drops all nodes, keeping buffer capacity.
  void reset();

  size_t size() const { return nodes_.size(); }

  // --- used by op implementations ---
  using BackFn = std::function<void(Tape&, const Mat& gout)>;
  Var make(Mat value, bool requires_grad, BackFn back);
  void accumulate(int idx, const Mat& delta);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad{false};
    bool grad_set{false};
    BackFn back;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. All are free functions returning a new Var on the same tape.
// Matrices follow the (features x batch) convention used throughout.
// ---------------------------------------------------------------------------

// basics
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);       // elementwise
Var min_elem(Var a, Var b);  // elementwise min; ties route grad to a
Var matmul(Var a, Var b);
Var transpose(Var a);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var neg(Var a);

// broadcasting over columns: v is (m x 1)
Var add_colvec(Var a, Var v);
Var mul_colvec(Var a, Var v);

// elementwise nonlinearities
Var relu(Var a);
Var exp_(Var a);
Var log_(Var a);
Var sqrt_(Var a);
Var square(Var a);
// hard clamp; gradient passes only strictly inside (lo, hi)
Var clamp(Var a, double lo, double hi);

// robust losses (elementwise)
Var huber(Var e, double delta);
Var expectile_huber(Var e, double tau, double delta);

// reductions
Var sum_all(Var a);   // 1x1
Var mean_all(Var a);  // 1x1
Var colwise_sum(Var a);  // (m x n) -> (1 x n)

// shape surgery
Var slice_rows(Var a, int r0, int nr);
Var slice_cols(Var a, int c0, int nc);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_cols(Var a, std::vector<int> indices);

// normalization / attention / regularization
Var layernorm(Var a, double eps = 1e-5);  // per column over features
// Row-wise softmax; with causal=true entry (i,j) is masked out for j > i.
Var softmax_rows(Var a, bool causal);
// Inverted dropout: scales kept entries by 1/(1-rate). rate==0 is a no-op.
Var dropout(Var a, double rate, Rng& rng);

// composite helpers
inline Var affine(Var W, Var x, Var b) { return add_colvec(matmul(W, x), b); }

// Sum of per-dimension log N(x_d; mu_d, exp(log_std_d)^2) per column.
// mu: (d x n) Var, log_std: (d x 1) Var, x: (d x n) constant.
Var gaussian_logpdf_cols(Var mu, Var log_std, const Mat& x);

}  // namespace ipd::diffcore
