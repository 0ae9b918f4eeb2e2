#pragma once

#include <Eigen/Core>

#include <vector>

namespace ipd::gauss {

using Vec = Eigen::VectorXd;

// Diagonal Gaussian over state vectors. Variances must be strictly positive;
// a floor of 1e-8 is applied before any inversion.
struct DiagGaussian {
  Vec mean;
  Vec var;

  int dim() const { return static_cast<int>(mean.size()); }
};

constexpr double kVarFloor = 1e-8;

// How the Eq.-(8)-style pairwise sum is normalized. `as_written` uses the
// 1/(E(E-1)) prefactor exactly as printed; `mean_over_pairs` divides by the
// number of unordered pairs E(E-1)/2 instead.
enum class PairNorm { as_written, mean_over_pairs };

struct GaussianEnsemblePrediction {
  std::vector<DiagGaussian> members;

  int size() const { return static_cast<int>(members.size()); }
  int dim() const { return members.empty() ? 0 : members.front().dim(); }
};

// Closed-form KL between diagonal Gaussians; 0 iff p == q.
double kl(const DiagGaussian& p, const DiagGaussian& q);

// Precision-weighted (geometric-mean) Gaussian: harmonic-mean covariance,
// precision-weighted mean.
DiagGaussian geometric_mean(const DiagGaussian& p, const DiagGaussian& q);

// Geometric Jensen-Shannon divergence: 0.5*[KL(p||m) + KL(q||m)] with m the
// geometric mean. Symmetric; 0 iff p == q.
double gjs(const DiagGaussian& p, const DiagGaussian& q);

// Normalized sum of pairwise GJS over unordered member pairs.
double ensemble_uncertainty(const GaussianEnsemblePrediction& pred,
                            PairNorm norm = PairNorm::as_written);

// mean + sqrt(var) .* noise
Vec sample(const DiagGaussian& g, const Vec& noise);

}  // namespace ipd::gauss
