#include "ipd/qov/qov.hpp"

#include <cmath>
#include <stdexcept>

#include "ipd/common/stats.hpp"
#include "ipd/diffcore/checkpoint.hpp"
#include "ipd/diffcore/tape.hpp"

namespace ipd::qov {

using namespace diffcore;

void QovConfig::check() const {
  if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("tau outside (0,1)");
  if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
  if (delta_percentile <= 0.0 || delta_percentile >= 1.0)
    throw std::invalid_argument("delta_percentile outside (0,1)");
  if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("gamma outside (0,1]");
  if (soft_update_a <= 0.0 || soft_update_a > 1.0)
    throw std::invalid_argument("soft_update_a outside (0,1]");
  if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (error_buffer_capacity <= 0) throw std::invalid_argument("buffer capacity must be positive");
}

ErrorBuffer::ErrorBuffer(int capacity) {
  if (capacity <= 0) throw std::invalid_argument("buffer capacity must be positive");
  buf_.resize(static_cast<size_t>(capacity));
}

void ErrorBuffer::push(double abs_residual) {
  buf_[next_] = abs_residual;
  next_ += 1;
  if (next_ == buf_.size()) {
    next_ = 0;
    full_ = true;
  }
}

std::vector<double> ErrorBuffer::snapshot() const {
  if (full_) return buf_;
  return std::vector<double>(buf_.begin(), buf_.begin() + static_cast<long>(next_));
}

double update_delta_threshold(const ErrorBuffer& buffer, double delta_percentile) {
  if (buffer.empty()) return 1.0;
  return stats::quantile(buffer.snapshot(), delta_percentile);
}

double huber(double e, double delta_threshold) {
  if (delta_threshold <= 0.0) throw std::invalid_argument("huber threshold must be positive");
  const double a = std::abs(e);
  return a <= delta_threshold ? 0.5 * e * e
                              : delta_threshold * (a - 0.5 * delta_threshold);
}

double expectile_huber(double e, double tau, double delta_threshold) {
  const double w = e < 0.0 ? 1.0 - tau : tau;
  return w * huber(e, delta_threshold);
}

QovModels QovModels::init(const envlab::EnvSpec& env, const QovConfig& cfg, uint64_t seed) {
  cfg.check();
  QovModels m;
  m.v_arch = DenseNetwork{env.state_dim, 1, cfg.hidden, false, cfg.dropout};
  m.q_arch = DenseNetwork{env.state_dim + env.action_dim, 1, cfg.hidden, false, cfg.dropout};
  m.policy_arch = DenseNetwork{env.state_dim, env.action_dim, cfg.hidden, false, cfg.dropout};
  m.v = m.v_arch.init_params(Rng::derive(seed, 1), /*zero_final=*/true);
  m.q1 = m.q_arch.init_params(Rng::derive(seed, 2), /*zero_final=*/true);
  m.q2 = m.q_arch.init_params(Rng::derive(seed, 3), /*zero_final=*/true);
  m.q1_target = m.q1;
  m.q2_target = m.q2;
  m.policy = m.policy_arch.init_params(Rng::derive(seed, 4), /*zero_final=*/true);
  m.policy.add("log_std", env.action_dim, 1);  // starts at 0 -> sigma = 1
  m.action_low = env.action_low;
  m.action_high = env.action_high;
  return m;
}

namespace {

Mat sa_stack(const Mat& states, const Mat& actions) {
  Mat sa(states.rows() + actions.rows(), states.cols());
  sa.topRows(states.rows()) = states;
  sa.bottomRows(actions.rows()) = actions;
  return sa;
}

void clamp_log_std(ParameterSet& policy) {
  auto ls = policy.view("log_std");
  ls = ls.cwiseMax(-5.0).cwiseMin(2.0);
}

}  // namespace

Mat QovModels::value(const Mat& states) const { return v_arch.forward_plain(v, states); }

Mat QovModels::q_min_target(const Mat& states, const Mat& actions) const {
  const Mat sa = sa_stack(states, actions);
  return q_arch.forward_plain(q1_target, sa).cwiseMin(q_arch.forward_plain(q2_target, sa));
}

Mat QovModels::q_min_online(const Mat& states, const Mat& actions) const {
  const Mat sa = sa_stack(states, actions);
  return q_arch.forward_plain(q1, sa).cwiseMin(q_arch.forward_plain(q2, sa));
}

Mat QovModels::policy_mean(const Mat& states) const {
  return policy_arch.forward_plain(policy, states);
}

Vec QovModels::log_std() const { return policy.view("log_std").col(0); }

FlatIndex FlatIndex::build(const envlab::Dataset& ds) {
  FlatIndex idx;
  idx.entries.reserve(ds.total_transitions());
  for (size_t t = 0; t < ds.trajectories.size(); ++t)
    for (size_t k = 0; k < ds.trajectories[t].transitions.size(); ++k)
      idx.entries.emplace_back(static_cast<int>(t), static_cast<int>(k));
  return idx;
}

Batch sample_batch(const envlab::Dataset& ds, const FlatIndex& index, int batch_size,
                   Rng& rng) {
  const size_t total = index.entries.size();
  if (total == 0) throw std::invalid_argument("cannot sample from an empty dataset");
  Batch b;
  const int sdim = ds.env.state_dim, adim = ds.env.action_dim;
  b.states.resize(sdim, batch_size);
  b.actions.resize(adim, batch_size);
  b.rewards.resize(batch_size);
  b.next_states.resize(sdim, batch_size);
  b.terminals.resize(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    const auto [t, k] = index.entries[rng.below(total)];
    const auto& tr = ds.trajectories[static_cast<size_t>(t)].transitions[static_cast<size_t>(k)];
    b.states.col(i) = tr.state;
    b.actions.col(i) = tr.action;
    b.rewards(i) = tr.reward;
    b.next_states.col(i) = tr.next_state;
    b.terminals(i) = tr.terminal ? 1.0 : 0.0;
  }
  return b;
}

Batch sample_batch(const envlab::Dataset& ds, int batch_size, Rng& rng) {
  return sample_batch(ds, FlatIndex::build(ds), batch_size, rng);
}

namespace {

// Shared graph builders; trainable side bound on tape, frozen side plain.

Var v_loss_graph(Tape& tape, const QovModels& m, const ParamBinding& vbind, const Batch& b,
                 const QovConfig& cfg, double delta, Rng* dropout_rng,
                 Eigen::RowVectorXd* residuals_out) {
  const Mat tq = m.q_min_target(b.states, b.actions);  // frozen
  Var vout = m.v_arch.forward(tape, vbind, tape.input(b.states), dropout_rng);
  Var e = sub(tape.input(tq), vout);
  if (residuals_out) *residuals_out = (tq - vout.val()).row(0);
  return mean_all(expectile_huber(e, cfg.tau, delta));
}

Var q_loss_graph(Tape& tape, const QovModels& m, const ParamBinding& q1b,
                 const ParamBinding& q2b, const Batch& b, const QovConfig& cfg,
                 Rng* dropout_rng) {
  const Mat vs = m.value(b.next_states);
  const Mat y = b.rewards +
                cfg.gamma * (1.0 - b.terminals.array()).matrix().cwiseProduct(vs.row(0));
  const Mat sa = sa_stack(b.states, b.actions);
  Var yin = tape.input(y);
  Var q1out = m.q_arch.forward(tape, q1b, tape.input(sa), dropout_rng);
  Var q2out = m.q_arch.forward(tape, q2b, tape.input(sa), dropout_rng);
  Var l1 = mean_all(square(sub(yin, q1out)));
  Var l2 = mean_all(square(sub(yin, q2out)));
  return add(l1, l2);
}

Var awr_loss_graph(Tape& tape, const QovModels& m, const ParamBinding& pib, const Batch& b,
                   const QovConfig& cfg, Rng* dropout_rng) {
  const Mat adv = m.q_min_target(b.states, b.actions) - m.value(b.states);
  if (!adv.allFinite()) throw std::runtime_error("non-finite advantage");
  Mat w =
      (cfg.beta * adv.array()).exp().min(cfg.awr_weight_clip).matrix();  // constants
  Var mu = m.policy_arch.forward(tape, pib, tape.input(b.states), dropout_rng);
  Var logp = gaussian_logpdf_cols(mu, pib.at("log_std"), b.actions);
  return neg(mean_all(mul(logp, tape.input(w))));
}

}  // namespace

double v_loss(const QovModels& m, const Batch& b, const QovConfig& cfg,
              double delta_threshold, ErrorBuffer* buffer) {
  Tape tape;
  ParamBinding vbind(tape, m.v, false);
  Eigen::RowVectorXd residuals;
  Var loss = v_loss_graph(tape, m, vbind, b, cfg, delta_threshold, nullptr, &residuals);
  if (!std::isfinite(loss.scalar())) throw std::runtime_error("non-finite v_loss");
  if (buffer)
    for (int i = 0; i < residuals.size(); ++i) buffer->push(std::abs(residuals(i)));
  return loss.scalar();
}

double q_loss(const QovModels& m, const Batch& b, const QovConfig& cfg) {
  Tape tape;
  ParamBinding q1b(tape, m.q1, false), q2b(tape, m.q2, false);
  Var loss = q_loss_graph(tape, m, q1b, q2b, b, cfg, nullptr);
  if (!std::isfinite(loss.scalar())) throw std::runtime_error("non-finite q_loss");
  return loss.scalar();
}

double awr_policy_loss(const QovModels& m, const Batch& b, const QovConfig& cfg) {
  Tape tape;
  ParamBinding pib(tape, m.policy, false);
  Var loss = awr_loss_graph(tape, m, pib, b, cfg, nullptr);
  if (!std::isfinite(loss.scalar())) throw std::runtime_error("non-finite policy loss");
  return loss.scalar();
}

Vec qop_action(const QovModels& m, const Vec& state, ActionMode mode, Rng* rng) {
  Mat mu = m.policy_mean(state);
  Vec a = mu.col(0);
  if (mode == ActionMode::sample) {
    if (!rng) throw std::invalid_argument("sample mode needs an rng");
    const Vec sigma = m.log_std().array().exp();
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) += sigma(i) * rng->normal();
  }
  return a.cwiseMax(m.action_low).cwiseMin(m.action_high);
}

QovTrainResult train_qov(const envlab::Dataset& ds, const QovConfig& cfg, int steps,
                         uint64_t seed) {
  cfg.check();
  if (ds.trajectories.empty()) throw std::invalid_argument("train_qov: empty dataset");
  QovTrainResult out{QovModels::init(ds.env, cfg, seed), {}};
  if (steps <= 0) return out;
  QovModels& m = out.models;

  OptimizerState opt_v = OptimizerState::create(m.v, cfg.lr);
  OptimizerState opt_q1 = OptimizerState::create(m.q1, cfg.lr);
  OptimizerState opt_q2 = OptimizerState::create(m.q2, cfg.lr);
  OptimizerState opt_pi = OptimizerState::create(m.policy, cfg.lr);
  ErrorBuffer buffer(cfg.error_buffer_capacity);
  double delta = cfg.delta_warmup_value;

  Rng rng(Rng::derive(seed, 1000));
  const FlatIndex index = FlatIndex::build(ds);
  for (int k = 0; k < steps; ++k) {
    Batch b = sample_batch(ds, index, cfg.batch_size, rng);
    Rng drop_v(Rng::derive(seed, 2000 + static_cast<uint64_t>(k)));
    Rng drop_q(Rng::derive(seed, 3000000 + static_cast<uint64_t>(k)));
    Rng drop_pi(Rng::derive(seed, 6000000 + static_cast<uint64_t>(k)));

    double lv, lq, lpi;
    {
      Tape tape;
      ParamBinding vbind(tape, m.v);
      Eigen::RowVectorXd residuals;
      Var loss = v_loss_graph(tape, m, vbind, b, cfg, delta, &drop_v, &residuals);
      lv = loss.scalar();
      tape.backward(loss);
      adam_step(opt_v, m.v, vbind.collect_grad());
      for (int i = 0; i < residuals.size(); ++i) buffer.push(std::abs(residuals(i)));
    }
    {
      Tape tape;
      ParamBinding q1b(tape, m.q1), q2b(tape, m.q2);
      Var loss = q_loss_graph(tape, m, q1b, q2b, b, cfg, &drop_q);
      lq = loss.scalar();
      tape.backward(loss);
      adam_step(opt_q1, m.q1, q1b.collect_grad());
      adam_step(opt_q2, m.q2, q2b.collect_grad());
    }
    {
      Tape tape;
      ParamBinding pib(tape, m.policy);
      Var loss = awr_loss_graph(tape, m, pib, b, cfg, &drop_pi);
      lpi = loss.scalar();
      tape.backward(loss);
      adam_step(opt_pi, m.policy, pib.collect_grad(), cosine_lr(cfg.lr, k, steps));
      clamp_log_std(m.policy);
    }
    soft_update(m.q1_target, m.q1, cfg.soft_update_a);
    soft_update(m.q2_target, m.q2, cfg.soft_update_a);

    if ((k + 1) % cfg.delta_refresh_every == 0 &&
        buffer.size() >= static_cast<size_t>(cfg.delta_warmup_entries))
      delta = update_delta_threshold(buffer, cfg.delta_percentile);

    if (!std::isfinite(lv) || !std::isfinite(lq) || !std::isfinite(lpi) ||
        std::abs(lv) > cfg.divergence_guard || std::abs(lq) > cfg.divergence_guard ||
        std::abs(lpi) > cfg.divergence_guard)
      throw std::runtime_error("qov training diverged at step " + std::to_string(k));

    if (k % cfg.log_every == 0 || k + 1 == steps)
      out.log.push_back({k, lv, lq, lpi, delta});
  }
  return out;
}

void save_qov(const QovModels& m, const std::string& path) {
  save_params(path, {{"v", &m.v},
                     {"q1", &m.q1},
                     {"q2", &m.q2},
                     {"q1_target", &m.q1_target},
                     {"q2_target", &m.q2_target},
                     {"policy", &m.policy}});
}

QovModels load_qov(const envlab::EnvSpec& env, const QovConfig& cfg, const std::string& path) {
  QovModels m = QovModels::init(env, cfg, 0);
  load_params(path, {{"v", &m.v},
                     {"q1", &m.q1},
                     {"q2", &m.q2},
                     {"q1_target", &m.q1_target},
                     {"q2_target", &m.q2_target},
                     {"policy", &m.policy}});
  return m;
}

}  // namespace ipd::qov
