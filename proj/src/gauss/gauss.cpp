#include "ipd/gauss/gauss.hpp"

#include <cmath>
#include <stdexcept>

namespace ipd::gauss {

namespace {

void check_valid(const DiagGaussian& g) {
  if (g.mean.size() != g.var.size())
    throw std::invalid_argument("gaussian mean/var length mismatch");
  if ((g.var.array() <= 0.0).any())
    throw std::invalid_argument("gaussian variance must be strictly positive");
}

void check_pair(const DiagGaussian& p, const DiagGaussian& q) {
  check_valid(p);
  check_valid(q);
  if (p.dim() != q.dim()) throw std::invalid_argument("gaussian dimension mismatch");
}

}  // namespace

double kl(const DiagGaussian& p, const DiagGaussian& q) {
  check_pair(p, q);
  const auto pv = p.var.array().max(kVarFloor);
  const auto qv = q.var.array().max(kVarFloor);
  const auto dm = (p.mean - q.mean).array();
  return 0.5 * ((qv / pv).log() + (pv + dm.square()) / qv - 1.0).sum();
}

DiagGaussian geometric_mean(const DiagGaussian& p, const DiagGaussian& q) {
  check_pair(p, q);
  const auto pv = p.var.array().max(kVarFloor);
  const auto qv = q.var.array().max(kVarFloor);
  DiagGaussian m;
  m.var = (0.5 / pv + 0.5 / qv).inverse().matrix();
  m.mean = (m.var.array() *
            (0.5 * p.mean.array() / pv + 0.5 * q.mean.array() / qv))
               .matrix();
  return m;
}

double gjs(const DiagGaussian& p, const DiagGaussian& q) {
  const DiagGaussian m = geometric_mean(p, q);
  return 0.5 * (kl(p, m) + kl(q, m));
}

double ensemble_uncertainty(const GaussianEnsemblePrediction& pred, PairNorm norm) {
  const int e = pred.size();
  if (e < 2) throw std::invalid_argument("ensemble needs at least two members");
  for (const auto& g : pred.members)
    if (g.dim() != pred.members.front().dim())
      throw std::invalid_argument("ensemble members must share a dimension");
  double acc = 0.0;
  for (int i = 0; i < e; ++i)
    for (int j = i + 1; j < e; ++j) acc += gjs(pred.members[static_cast<size_t>(i)],
                                               pred.members[static_cast<size_t>(j)]);
  const double ed = static_cast<double>(e);
  const double denom =
      norm == PairNorm::as_written ? ed * (ed - 1.0) : ed * (ed - 1.0) / 2.0;
  return acc / denom;
}

Vec sample(const DiagGaussian& g, const Vec& noise) {
  check_valid(g);
  if (noise.size() != g.mean.size())
    throw std::invalid_argument("sample noise dimension mismatch");
  return g.mean.array() + g.var.array().max(kVarFloor).sqrt() * noise.array();
}

}  // namespace ipd::gauss
