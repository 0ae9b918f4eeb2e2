#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ipd/diffcore/network.hpp"
#include "ipd/diffcore/optim.hpp"
#include "ipd/envlab/dataset.hpp"

namespace ipd::qov {

using diffcore::Mat;
using diffcore::Vec;

struct QovConfig {
  double tau{0.7};
  double beta{3.0};
  double delta_percentile{0.96};
  double gamma{0.99};
  double soft_update_a{0.005};
  double lr{3e-4};
  int error_buffer_capacity{100000};

  std::vector<int> hidden{64, 64};
  double dropout{0.01};
  int batch_size{256};
  double awr_weight_clip{100.0};
  int delta_refresh_every{100};
  int delta_warmup_entries{1000};
  double delta_warmup_value{1.0};
  double divergence_guard{1e6};
  int log_every{100};

  void check() const;
};

// Ring buffer of recent |e_V| residuals feeding the adaptive Huber threshold.
class ErrorBuffer {
 public:
  explicit ErrorBuffer(int capacity);
  void push(double abs_residual);
  size_t size() const { return full_ ? buf_.size() : next_; }
  bool empty() const { return size() == 0; }
  int capacity() const { return static_cast<int>(buf_.size()); }
  std::vector<double> snapshot() const;

 private:
  std::vector<double> buf_;
  size_t next_{0};
  bool full_{false};
};

// delta_percentile quantile (linear interpolation) of the buffered |e_V|;
// warm-up default 1.0 on an empty buffer.
double update_delta_threshold(const ErrorBuffer& buffer, double delta_percentile);

// Elementwise scalar losses (Huber and its expectile weighting).
double huber(double e, double delta_threshold);
double expectile_huber(double e, double tau, double delta_threshold);

struct QovModels {
  diffcore::DenseNetwork v_arch;
  diffcore::DenseNetwork q_arch;       // input (s,a)
  diffcore::DenseNetwork policy_arch;  // action mean head
  diffcore::ParameterSet v;
  diffcore::ParameterSet q1, q2;
  diffcore::ParameterSet q1_target, q2_target;
  diffcore::ParameterSet policy;  // includes the state-independent "log_std" block
  Vec action_low, action_high;

  static QovModels init(const envlab::EnvSpec& env, const QovConfig& cfg, uint64_t seed);

  Mat value(const Mat& states) const;                       // V_psi, (1 x n)
  Mat q_min_target(const Mat& states, const Mat& actions) const;
  Mat q_min_online(const Mat& states, const Mat& actions) const;
  Mat policy_mean(const Mat& states) const;                 // (adim x n)
  Vec log_std() const;
};

struct Batch {
  Mat states;        // (sdim x n)
  Mat actions;       // (adim x n)
  Eigen::RowVectorXd rewards;
  Mat next_states;
  Eigen::RowVectorXd terminals;  // 1.0 / 0.0
  int size() const { return static_cast<int>(states.cols()); }
};

// Flat (trajectory, step) index over every transition, built once per
// training run.
struct FlatIndex {
  std::vector<std::pair<int, int>> entries;
  static FlatIndex build(const envlab::Dataset& ds);
};

Batch sample_batch(const envlab::Dataset& ds, const FlatIndex& index, int batch_size,
                   Rng& rng);
Batch sample_batch(const envlab::Dataset& ds, int batch_size, Rng& rng);

// Spec-facing loss evaluations (no parameter updates). v_loss appends |e_V|
// to the buffer when given.
double v_loss(const QovModels& m, const Batch& b, const QovConfig& cfg,
              double delta_threshold, ErrorBuffer* buffer = nullptr);
double q_loss(const QovModels& m, const Batch& b, const QovConfig& cfg);
double awr_policy_loss(const QovModels& m, const Batch& b, const QovConfig& cfg);

enum class ActionMode { mean, sample };

// Policy head with clipping; sample mode adds exp(log_std) noise.
Vec qop_action(const QovModels& m, const Vec& state, ActionMode mode, Rng* rng = nullptr);

struct QovLogRecord {
  int step;
  double loss_v, loss_q, loss_pi, delta_threshold;
};

struct QovTrainResult {
  QovModels models;
  std::vector<QovLogRecord> log;
};

// Full training loop: per step a V update, a twin-Q update, an AWR policy
// update with cosine-annealed lr, target soft updates, and the periodic
// delta-threshold refresh. Deterministic in (dataset, cfg, steps, seed).
QovTrainResult train_qov(const envlab::Dataset& ds, const QovConfig& cfg, int steps,
                         uint64_t seed);

void save_qov(const QovModels& m, const std::string& path);
QovModels load_qov(const envlab::EnvSpec& env, const QovConfig& cfg, const std::string& path);

}  // namespace ipd::qov
