#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ipd/diffcore/network.hpp"
#include "ipd/envlab/dataset.hpp"
#include "ipd/gauss/gauss.hpp"
#include "ipd/qov/qov.hpp"  // Batch / FlatIndex

namespace ipd::wm {

using diffcore::Mat;
using diffcore::Vec;
using qov::Batch;

struct WmConfig {
  int ensemble_size{3};
  double sigma_reg{std::exp(-4.5)};  // per-dimension target variance
  double gamma0{1.0};
  double t_decay{1e5};
  double alpha_c{0.5};
  double alpha_r{0.5};
  double logvar_low{-10.0};
  double logvar_high{0.2};
  double lr{3e-4};
  double kappa_percentile{0.95};

  std::vector<int> hidden{64, 64};
  bool layernorm{true};
  int batch_size{256};
  double divergence_guard{1e6};
  int log_every{100};
  gauss::PairNorm pair_norm{gauss::PairNorm::as_written};

  void check() const;
};

struct WorldModel {
  diffcore::DenseNetwork member_arch;  // (s,a) -> (mu, raw logvar)
  diffcore::DenseNetwork reward_arch;  // (s,a) -> r
  std::vector<diffcore::ParameterSet> members;
  diffcore::ParameterSet reward;
  int state_dim{0};
  int action_dim{0};
  double logvar_low{-10.0};
  double logvar_high{0.2};

  static WorldModel init(const envlab::EnvSpec& env, const WmConfig& cfg, uint64_t seed);

  // Per-member (mu, var) over a batch of columns; logvar clamped.
  void predict_batch(const Mat& states, const Mat& actions, std::vector<Mat>& mu,
                     std::vector<Mat>& var) const;
  gauss::GaussianEnsemblePrediction predict(const Vec& s, const Vec& a) const;

  // Noise-free ensemble mean of member means.
  Mat mean_next_batch(const Mat& states, const Mat& actions) const;
  Vec mean_next(const Vec& s, const Vec& a) const;

  Eigen::RowVectorXd reward_batch(const Mat& states, const Mat& actions) const;
  double reward_hat(const Vec& s, const Vec& a) const;
};

struct ReliableSetParams {
  double kappa{0.0};
};

// gamma0 * exp(-k / T)
double decay_weight(int64_t k, double gamma0, double t_decay);

// Ensemble-mean prediction under reparameterization: sigma_pe is the
// arithmetic mean of member variances, mu_pe the mean of member means plus
// sqrt(sigma_pe) .* noise.
void reparam_mean(const gauss::GaussianEnsemblePrediction& pred, const Vec& noise,
                  Vec& mu_pe, Vec& sigma_pe);

// Aggregate consistency loss: mean over the batch of
// ||mu_PE - s'||^2 + ||gamma_exp(k) * (Sigma_PE - Sigma_reg)||^2,
// with mu_PE reparameterized by the supplied standard-normal noise
// (state_dim x batch).
double consistency_loss(const WorldModel& wm, const Batch& b, int64_t k, const WmConfig& cfg,
                        const Mat& noise);
// Analytic gradient of the aggregate consistency loss w.r.t. all member
// parameters (flattened member-by-member); for gradient-fidelity checks.
Vec consistency_loss_grad(const WorldModel& wm, const Batch& b, int64_t k,
                          const WmConfig& cfg, const Mat& noise,
                          double* value_out = nullptr);
double reward_loss(const WorldModel& wm, const Batch& b);
double total_loss(const WorldModel& wm, const Batch& b, int64_t k, const WmConfig& cfg,
                  const Mat& noise);

// Ensemble disagreement for one pair (delegates to gauss).
double uncertainty(const WorldModel& wm, const Vec& s, const Vec& a,
                   gauss::PairNorm norm = gauss::PairNorm::as_written);
// Vectorized over batch columns; equals the per-column delegation.
Eigen::RowVectorXd uncertainty_batch(const WorldModel& wm, const Mat& states,
                                     const Mat& actions,
                                     gauss::PairNorm norm = gauss::PairNorm::as_written);

// kappa = percentile of U(s,a) over all dataset transitions. Emits a warning
// on a degenerate (zero) threshold.
ReliableSetParams calibrate_kappa(const WorldModel& wm, const envlab::Dataset& ds,
                                  double kappa_percentile,
                                  gauss::PairNorm norm = gauss::PairNorm::as_written);

// Strict inequality, Eq.-(12) style.
bool is_reliable(const WorldModel& wm, const ReliableSetParams& params, const Vec& s,
                 const Vec& a, gauss::PairNorm norm = gauss::PairNorm::as_written);

struct WmLogRecord {
  int step;
  double loss_c, loss_r, gamma_exp, mean_logvar;
};

struct WmTrainResult {
  WorldModel model;
  std::vector<WmLogRecord> log;
};

// Members train independently on bootstrap resamples (single-member
// specialization of the consistency loss); the reward head trains on the
// full dataset. Deterministic in (dataset, cfg, steps, seed).
WmTrainResult train_world_model(const envlab::Dataset& ds, const WmConfig& cfg, int steps,
                                uint64_t seed);

void save_world_model(const WorldModel& wm, double kappa, const std::string& path);
WorldModel load_world_model(const envlab::EnvSpec& env, const WmConfig& cfg,
                            const std::string& path, double* kappa_out = nullptr);

}  // namespace ipd::wm
