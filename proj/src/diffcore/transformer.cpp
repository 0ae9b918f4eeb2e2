#include "ipd/diffcore/transformer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ipd::diffcore {

namespace {

void fill_uniform(Eigen::Map<Mat> m, double range, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-range, range);
}

void add_linear(ParameterSet& ps, const std::string& name, int out, int in, Rng& rng) {
  ps.add(name + "/W", out, in);
  ps.add(name + "/b", out, 1);
  const double range = 1.0 / std::sqrt(static_cast<double>(in));
  fill_uniform(ps.view(name + "/W"), range, rng);
  fill_uniform(ps.view(name + "/b"), range, rng);
}

void add_ln(ParameterSet& ps, const std::string& name, int dim) {
  ps.add(name + "_g", dim, 1);
  ps.add(name + "_b", dim, 1);
  ps.view(name + "_g").setOnes();
}

Mat plain_ln(const Mat& x, const Mat& g, const Mat& b) {
  Eigen::RowVectorXd mu = x.colwise().mean();
  Mat xc = x.rowwise() - mu;
  Eigen::RowVectorXd s = (xc.array().square().colwise().mean() + 1e-5).sqrt();
  Mat y = xc.array().rowwise() / s.array();
  return (y.array().colwise() * g.col(0).array()).colwise() + b.col(0).array();
}

}  // namespace

ParameterSet CausalTransformer::init_params(uint64_t seed) const {
  if (embed_dim <= 0 || n_heads <= 0 || n_layers <= 0 || max_context <= 0)
    throw std::invalid_argument("transformer dims must be positive");
  if (embed_dim % n_heads != 0)
    throw std::invalid_argument("embed_dim must be divisible by n_heads");
  ParameterSet ps;
  ps.set_rng_seed(seed);
  Rng rng(seed);
  for (int l = 0; l < n_layers; ++l) {
    const std::string h = "h" + std::to_string(l);
    add_ln(ps, h + "/ln1", embed_dim);
    add_linear(ps, h + "/q", embed_dim, embed_dim, rng);
    add_linear(ps, h + "/k", embed_dim, embed_dim, rng);
    add_linear(ps, h + "/v", embed_dim, embed_dim, rng);
    add_linear(ps, h + "/o", embed_dim, embed_dim, rng);
    add_ln(ps, h + "/ln2", embed_dim);
    add_linear(ps, h + "/m1", 4 * embed_dim, embed_dim, rng);
    add_linear(ps, h + "/m2", embed_dim, 4 * embed_dim, rng);
  }
  add_ln(ps, "lnf", embed_dim);
  return ps;
}

Var CausalTransformer::forward(Tape&, const ParamBinding& p, Var x,
                               Rng* dropout_rng) const {
  if (x.rows() != embed_dim) throw std::invalid_argument("transformer: embed dim mismatch");
  if (x.cols() > max_context) throw std::invalid_argument("transformer: sequence too long");
  const int dh = embed_dim / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto ln = [&](Var v, const std::string& name) {
    return add_colvec(mul_colvec(layernorm(v), p.at(name + "_g")), p.at(name + "_b"));
  };
  auto drop = [&](Var v) {
    return (dropout_rng && dropout_rate > 0.0) ? dropout(v, dropout_rate, *dropout_rng) : v;
  };
  for (int l = 0; l < n_layers; ++l) {
    const std::string h = "h" + std::to_string(l);
    Var n1 = ln(x, h + "/ln1");
    Var q = affine(p.at(h + "/q/W"), n1, p.at(h + "/q/b"));
    Var k = affine(p.at(h + "/k/W"), n1, p.at(h + "/k/b"));
    Var v = affine(p.at(h + "/v/W"), n1, p.at(h + "/v/b"));
    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (int hh = 0; hh < n_heads; ++hh) {
      Var qh = slice_rows(q, hh * dh, dh);
      Var kh = slice_rows(k, hh * dh, dh);
      Var vh = slice_rows(v, hh * dh, dh);
      Var scores = scale(matmul(transpose(qh), kh), sc);   // (T x T)
      Var att = softmax_rows(scores, /*causal=*/true);
      heads.push_back(matmul(vh, transpose(att)));         // (dh x T)
    }
    Var o = affine(p.at(h + "/o/W"), concat_rows(heads), p.at(h + "/o/b"));
    x = add(x, drop(o));
    Var n2 = ln(x, h + "/ln2");
    Var m = affine(p.at(h + "/m2/W"),
                   relu(affine(p.at(h + "/m1/W"), n2, p.at(h + "/m1/b"))),
                   p.at(h + "/m2/b"));
    x = add(x, drop(m));
  }
  return ln(x, "lnf");
}

Mat CausalTransformer::forward_plain(const ParameterSet& p, const Mat& xin) const {
  if (xin.rows() != embed_dim) throw std::invalid_argument("transformer: embed dim mismatch");
  if (xin.cols() > max_context) throw std::invalid_argument("transformer: sequence too long");
  const int dh = embed_dim / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index T = xin.cols();
  Mat x = xin;
  auto linear = [&](const std::string& name, const Mat& v) {
    return Mat((p.view(name + "/W") * v).colwise() + Vec(p.view(name + "/b").col(0)));
  };
  for (int l = 0; l < n_layers; ++l) {
    const std::string h = "h" + std::to_string(l);
    Mat n1 = plain_ln(x, p.view(h + "/ln1_g"), p.view(h + "/ln1_b"));
    Mat q = linear(h + "/q", n1), k = linear(h + "/k", n1), v = linear(h + "/v", n1);
    Mat cat(embed_dim, T);
    for (int hh = 0; hh < n_heads; ++hh) {
      const Mat qh = q.middleRows(hh * dh, dh);
      const Mat kh = k.middleRows(hh * dh, dh);
      const Mat vh = v.middleRows(hh * dh, dh);
      Mat scores = (qh.transpose() * kh) * sc;
      Mat att = Mat::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const auto row = scores.row(i).head(i + 1);
        const double mx = row.maxCoeff();
        Eigen::RowVectorXd e = (row.array() - mx).exp();
        att.row(i).head(i + 1) = e / e.sum();
      }
      cat.middleRows(hh * dh, dh) = vh * att.transpose();
    }
    x += linear(h + "/o", cat);
    Mat n2 = plain_ln(x, p.view(h + "/ln2_g"), p.view(h + "/ln2_b"));
    x += linear(h + "/m2", Mat(linear(h + "/m1", n2).cwiseMax(0.0)));
  }
  return plain_ln(x, p.view("lnf_g"), p.view("lnf_b"));
}

}  // namespace ipd::diffcore
