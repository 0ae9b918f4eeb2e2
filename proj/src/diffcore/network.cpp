#include "ipd/diffcore/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ipd::diffcore {

namespace {

void fill_uniform(Eigen::Map<Mat> m, double range, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-range, range);
}

}  // namespace

ParameterSet DenseNetwork::init_params(uint64_t seed, bool zero_final) const {
  if (input_dim <= 0 || output_dim <= 0)
    throw std::invalid_argument("network dims must be positive");
  ParameterSet ps;
  ps.set_rng_seed(seed);
  Rng rng(seed);
  int in = input_dim;
  for (size_t l = 0; l < hidden_widths.size(); ++l) {
    const int out = hidden_widths[l];
    if (out <= 0) throw std::invalid_argument("hidden width must be positive");
    const std::string tag = "l" + std::to_string(l);
    ps.add(tag + "/W", out, in);
    ps.add(tag + "/b", out, 1);
    const double range = 1.0 / std::sqrt(static_cast<double>(in));
    fill_uniform(ps.view(tag + "/W"), range, rng);
    fill_uniform(ps.view(tag + "/b"), range, rng);
    if (uses_layernorm) {
      ps.add(tag + "/ln_g", out, 1);
      ps.add(tag + "/ln_b", out, 1);
      ps.view(tag + "/ln_g").setOnes();
    }
    in = out;
  }
  ps.add("out/W", output_dim, in);
  ps.add("out/b", output_dim, 1);
  if (!zero_final) {
    const double range = 1.0 / std::sqrt(static_cast<double>(in));
    fill_uniform(ps.view("out/W"), range, rng);
    fill_uniform(ps.view("out/b"), range, rng);
  }
  return ps;
}

Var DenseNetwork::forward(Tape&, const ParamBinding& p, Var x, Rng* dropout_rng) const {
  if (x.rows() != input_dim) throw std::invalid_argument("forward: input dim mismatch");
  if (!p.params().all_finite()) throw std::runtime_error("forward: non-finite parameters");
  Var h = x;
  for (size_t l = 0; l < hidden_widths.size(); ++l) {
    const std::string tag = "l" + std::to_string(l);
    h = affine(p.at(tag + "/W"), h, p.at(tag + "/b"));
    if (uses_layernorm) {
      h = layernorm(h);
      h = add_colvec(mul_colvec(h, p.at(tag + "/ln_g")), p.at(tag + "/ln_b"));
    }
    h = relu(h);
    if (dropout_rng && dropout_rate > 0.0) h = dropout(h, dropout_rate, *dropout_rng);
  }
  return affine(p.at("out/W"), h, p.at("out/b"));
}

Mat DenseNetwork::forward_plain(const ParameterSet& p, const Mat& x) const {
  if (x.rows() != input_dim) throw std::invalid_argument("forward: input dim mismatch");
  Mat h = x;
  for (size_t l = 0; l < hidden_widths.size(); ++l) {
    const std::string tag = "l" + std::to_string(l);
    h = (p.view(tag + "/W") * h).colwise() + Vec(p.view(tag + "/b").col(0));
    if (uses_layernorm) {
      Eigen::RowVectorXd mu = h.colwise().mean();
      Mat xc = h.rowwise() - mu;
      Eigen::RowVectorXd s = (xc.array().square().colwise().mean() + 1e-5).sqrt();
      h = xc.array().rowwise() / s.array();
      h = (h.array().colwise() * p.view(tag + "/ln_g").col(0).array()).colwise() +
          p.view(tag + "/ln_b").col(0).array();
    }
    h = h.cwiseMax(0.0);
  }
  return (p.view("out/W") * h).colwise() + Vec(p.view("out/b").col(0));
}

}  // namespace ipd::diffcore
