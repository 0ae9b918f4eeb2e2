#include "ipd/worldmodel/worldmodel.hpp"

#include <cstdio>
#include <memory>
#include <stdexcept>

#include "ipd/common/stats.hpp"
#include "ipd/diffcore/checkpoint.hpp"
#include "ipd/diffcore/optim.hpp"
#include "ipd/diffcore/tape.hpp"

namespace ipd::wm {

using namespace diffcore;

void WmConfig::check() const {
  if (ensemble_size < 2) throw std::invalid_argument("ensemble size must be >= 2");
  if (alpha_c < 0.0 || alpha_r < 0.0) throw std::invalid_argument("alpha weights must be >= 0");
  if (logvar_low >= logvar_high) throw std::invalid_argument("logvar bounds inverted");
  if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (kappa_percentile <= 0.0 || kappa_percentile > 1.0)
    throw std::invalid_argument("kappa percentile outside (0,1]");
  if (sigma_reg <= 0.0) throw std::invalid_argument("sigma_reg must be positive");
}

WorldModel WorldModel::init(const envlab::EnvSpec& env, const WmConfig& cfg, uint64_t seed) {
  cfg.check();
  WorldModel wm;
  wm.state_dim = env.state_dim;
  wm.action_dim = env.action_dim;
  wm.logvar_low = cfg.logvar_low;
  wm.logvar_high = cfg.logvar_high;
  wm.member_arch =
      DenseNetwork{env.state_dim + env.action_dim, 2 * env.state_dim, cfg.hidden,
                   cfg.layernorm, 0.0};
  wm.reward_arch = DenseNetwork{env.state_dim + env.action_dim, 1, cfg.hidden,
                                cfg.layernorm, 0.0};
  for (int e = 0; e < cfg.ensemble_size; ++e)
    wm.members.push_back(wm.member_arch.init_params(Rng::derive(seed, 10 + static_cast<uint64_t>(e))));
  wm.reward = wm.reward_arch.init_params(Rng::derive(seed, 99));
  return wm;
}

namespace {

Mat sa_stack(const Mat& states, const Mat& actions) {
  Mat sa(states.rows() + actions.rows(), states.cols());
  sa.topRows(states.rows()) = states;
  sa.bottomRows(actions.rows()) = actions;
  return sa;
}

}  // namespace

void WorldModel::predict_batch(const Mat& states, const Mat& actions, std::vector<Mat>& mu,
                               std::vector<Mat>& var) const {
  if (!states.allFinite() || !actions.allFinite())
    throw std::invalid_argument("predict: non-finite input");
  const Mat sa = sa_stack(states, actions);
  mu.clear();
  var.clear();
  for (const auto& ps : members) {
    Mat out = member_arch.forward_plain(ps, sa);
    mu.push_back(out.topRows(state_dim));
    var.push_back(
        out.bottomRows(state_dim).cwiseMax(logvar_low).cwiseMin(logvar_high).array().exp());
  }
}

gauss::GaussianEnsemblePrediction WorldModel::predict(const Vec& s, const Vec& a) const {
  std::vector<Mat> mu, var;
  predict_batch(s, a, mu, var);
  gauss::GaussianEnsemblePrediction pred;
  for (size_t e = 0; e < mu.size(); ++e)
    pred.members.push_back({mu[e].col(0), var[e].col(0)});
  return pred;
}

Mat WorldModel::mean_next_batch(const Mat& states, const Mat& actions) const {
  std::vector<Mat> mu, var;
  predict_batch(states, actions, mu, var);
  Mat acc = Mat::Zero(state_dim, states.cols());
  for (const auto& m : mu) acc += m;
  return acc / static_cast<double>(mu.size());
}

Vec WorldModel::mean_next(const Vec& s, const Vec& a) const {
  return mean_next_batch(s, a).col(0);
}

Eigen::RowVectorXd WorldModel::reward_batch(const Mat& states, const Mat& actions) const {
  return reward_arch.forward_plain(reward, sa_stack(states, actions)).row(0);
}

double WorldModel::reward_hat(const Vec& s, const Vec& a) const {
  return reward_batch(s, a)(0);
}

double decay_weight(int64_t k, double gamma0, double t_decay) {
  if (k < 0) throw std::invalid_argument("decay step must be >= 0");
  return gamma0 * std::exp(-static_cast<double>(k) / t_decay);
}

void reparam_mean(const gauss::GaussianEnsemblePrediction& pred, const Vec& noise,
                  Vec& mu_pe, Vec& sigma_pe) {
  if (pred.size() < 1) throw std::invalid_argument("empty ensemble");
  if (noise.size() != pred.dim()) throw std::invalid_argument("reparam noise dim mismatch");
  sigma_pe = Vec::Zero(pred.dim());
  mu_pe = Vec::Zero(pred.dim());
  for (const auto& g : pred.members) {
    sigma_pe += g.var;
    mu_pe += g.mean;
  }
  sigma_pe /= static_cast<double>(pred.size());
  mu_pe /= static_cast<double>(pred.size());
  mu_pe += sigma_pe.cwiseSqrt().cwiseProduct(noise);
}

namespace {

// Differentiable member head: returns (mu, var) Vars for one member over sa.
std::pair<Var, Var> member_heads(Tape& tape, const WorldModel& wm, const ParamBinding& bind,
                                 Var sa_in, int sdim, const WmConfig& cfg) {
  Var out = wm.member_arch.forward(tape, bind, sa_in);
  Var mu = slice_rows(out, 0, sdim);
  Var lv = clamp(slice_rows(out, sdim, sdim), cfg.logvar_low, cfg.logvar_high);
  return {mu, exp_(lv)};
}

// Eq.-(14)-style loss over an arbitrary member subset (the full ensemble for
// the aggregate op, a single member during training). Bindings are owned by
// the caller so gradients stay collectable.
Var consistency_graph(Tape& tape, const WorldModel& wm,
                      const std::vector<ParamBinding*>& binds, const Batch& b, int64_t k,
                      const WmConfig& cfg, const Mat& noise) {
  const int sdim = wm.state_dim;
  const int n = b.size();
  const Mat sa = sa_stack(b.states, b.actions);
  Var sa_in = tape.input(sa);
  std::vector<Var> mus, vars;
  for (ParamBinding* bind : binds) {
    auto [mu, var] = member_heads(tape, wm, *bind, sa_in, sdim, cfg);
    mus.push_back(mu);
    vars.push_back(var);
  }
  const double inv_e = 1.0 / static_cast<double>(binds.size());
  Var mu_sum = mus[0];
  Var var_sum = vars[0];
  for (size_t e = 1; e < binds.size(); ++e) {
    mu_sum = add(mu_sum, mus[e]);
    var_sum = add(var_sum, vars[e]);
  }
  Var sigma_pe = scale(var_sum, inv_e);
  Var mu_pe = add(scale(mu_sum, inv_e), mul(sqrt_(sigma_pe), tape.input(noise)));
  const double g = decay_weight(k, cfg.gamma0, cfg.t_decay);
  Var fit = sum_all(square(sub(mu_pe, tape.input(b.next_states))));
  Var reg = sum_all(square(scale(add_const(sigma_pe, -cfg.sigma_reg), g)));
  return scale(add(fit, reg), 1.0 / static_cast<double>(n));
}

Var reward_graph(Tape& tape, const WorldModel& wm, const ParamBinding& bind, const Batch& b) {
  Var pred = wm.reward_arch.forward(tape, bind, tape.input(sa_stack(b.states, b.actions)));
  Var target = tape.input(Mat(b.rewards));
  return mean_all(square(sub(pred, target)));
}

}  // namespace

double consistency_loss(const WorldModel& wm, const Batch& b, int64_t k, const WmConfig& cfg,
                        const Mat& noise) {
  if (noise.rows() != wm.state_dim || noise.cols() != b.size())
    throw std::invalid_argument("consistency noise must be (state_dim x batch)");
  Tape tape;
  std::vector<std::unique_ptr<ParamBinding>> owned;
  std::vector<ParamBinding*> binds;
  for (const auto& m : wm.members) {
    owned.push_back(std::make_unique<ParamBinding>(tape, m, false));
    binds.push_back(owned.back().get());
  }
  Var loss = consistency_graph(tape, wm, binds, b, k, cfg, noise);
  if (!std::isfinite(loss.scalar())) throw std::runtime_error("non-finite consistency loss");
  return loss.scalar();
}

// Aggregate gradient of the Eq.-(14) loss w.r.t. every member, flattened in
// member order; used by the gradient-fidelity checks.
Vec consistency_loss_grad(const WorldModel& wm, const Batch& b, int64_t k,
                          const WmConfig& cfg, const Mat& noise, double* value_out) {
  Tape tape;
  std::vector<std::unique_ptr<ParamBinding>> owned;
  std::vector<ParamBinding*> binds;
  for (const auto& m : wm.members) {
    owned.push_back(std::make_unique<ParamBinding>(tape, m, true));
    binds.push_back(owned.back().get());
  }
  Var loss = consistency_graph(tape, wm, binds, b, k, cfg, noise);
  if (value_out) *value_out = loss.scalar();
  tape.backward(loss);
  const int per = wm.members.front().total_size();
  Vec g(per * static_cast<int>(wm.members.size()));
  for (size_t e = 0; e < wm.members.size(); ++e)
    g.segment(static_cast<int>(e) * per, per) = owned[e]->collect_grad();
  return g;
}

double reward_loss(const WorldModel& wm, const Batch& b) {
  Tape tape;
  ParamBinding bind(tape, wm.reward, false);
  Var loss = reward_graph(tape, wm, bind, b);
  if (!std::isfinite(loss.scalar())) throw std::runtime_error("non-finite reward loss");
  return loss.scalar();
}

double total_loss(const WorldModel& wm, const Batch& b, int64_t k, const WmConfig& cfg,
                  const Mat& noise) {
  return cfg.alpha_c * consistency_loss(wm, b, k, cfg, noise) +
         cfg.alpha_r * reward_loss(wm, b);
}

double uncertainty(const WorldModel& wm, const Vec& s, const Vec& a, gauss::PairNorm norm) {
  return gauss::ensemble_uncertainty(wm.predict(s, a), norm);
}

Eigen::RowVectorXd uncertainty_batch(const WorldModel& wm, const Mat& states,
                                     const Mat& actions, gauss::PairNorm norm) {
  std::vector<Mat> mu, var;
  wm.predict_batch(states, actions, mu, var);
  const int e = static_cast<int>(mu.size());
  const int n = static_cast<int>(states.cols());
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(n);
  for (int i = 0; i < e; ++i) {
    for (int j = i + 1; j < e; ++j) {
      // per-column GJS between members i and j, vectorized over the batch
      const auto vi = var[static_cast<size_t>(i)].array().max(gauss::kVarFloor);
      const auto vj = var[static_cast<size_t>(j)].array().max(gauss::kVarFloor);
      const auto mi = mu[static_cast<size_t>(i)].array();
      const auto mj = mu[static_cast<size_t>(j)].array();
      const auto vm = (0.5 / vi + 0.5 / vj).inverse();
      const auto mm = vm * (0.5 * mi / vi + 0.5 * mj / vj);
      const auto kl_i = 0.5 * ((vm / vi).log() + (vi + (mi - mm).square()) / vm - 1.0);
      const auto kl_j = 0.5 * ((vm / vj).log() + (vj + (mj - mm).square()) / vm - 1.0);
      acc += (0.5 * (kl_i + kl_j)).colwise().sum().matrix();
    }
  }
  const double ed = static_cast<double>(e);
  const double denom =
      norm == gauss::PairNorm::as_written ? ed * (ed - 1.0) : ed * (ed - 1.0) / 2.0;
  return acc / denom;
}

ReliableSetParams calibrate_kappa(const WorldModel& wm, const envlab::Dataset& ds,
                                  double kappa_percentile, gauss::PairNorm norm) {
  if (ds.total_transitions() == 0)
    throw std::invalid_argument("calibrate_kappa: empty dataset");
  std::vector<double> us;
  us.reserve(ds.total_transitions());
  for (const auto& traj : ds.trajectories) {
    if (traj.transitions.empty()) continue;
    const int n = traj.length();
    Mat states(wm.state_dim, n), actions(wm.action_dim, n);
    for (int k = 0; k < n; ++k) {
      states.col(k) = traj.transitions[static_cast<size_t>(k)].state;
      actions.col(k) = traj.transitions[static_cast<size_t>(k)].action;
    }
    const Eigen::RowVectorXd u = uncertainty_batch(wm, states, actions, norm);
    for (int k = 0; k < n; ++k) us.push_back(u(k));
  }
  ReliableSetParams params;
  params.kappa = stats::quantile(us, kappa_percentile);
  if (params.kappa <= 0.0)
    std::fprintf(stderr,
                 "[worldmodel] warning: calibrated kappa is %.3g (degenerate ensemble?)\n",
                 params.kappa);
  return params;
}

bool is_reliable(const WorldModel& wm, const ReliableSetParams& params, const Vec& s,
                 const Vec& a, gauss::PairNorm norm) {
  return uncertainty(wm, s, a, norm) < params.kappa;
}

WmTrainResult train_world_model(const envlab::Dataset& ds, const WmConfig& cfg, int steps,
                                uint64_t seed) {
  cfg.check();
  if (ds.trajectories.empty()) throw std::invalid_argument("train_world_model: empty dataset");
  WmTrainResult out{WorldModel::init(ds.env, cfg, seed), {}};
  if (steps <= 0) return out;
  WorldModel& wm = out.model;

  const qov::FlatIndex full = qov::FlatIndex::build(ds);
  const size_t total = full.entries.size();

  // independent bootstrap resample per member
  std::vector<qov::FlatIndex> boot(static_cast<size_t>(cfg.ensemble_size));
  for (int e = 0; e < cfg.ensemble_size; ++e) {
    Rng rng(Rng::derive(seed, 500 + static_cast<uint64_t>(e)));
    auto& idx = boot[static_cast<size_t>(e)].entries;
    idx.reserve(total);
    for (size_t i = 0; i < total; ++i) idx.push_back(full.entries[rng.below(total)]);
  }

  std::vector<OptimizerState> opt;
  for (auto& m : wm.members) opt.push_back(OptimizerState::create(m, cfg.lr));
  OptimizerState opt_r = OptimizerState::create(wm.reward, cfg.lr);

  Rng rng(Rng::derive(seed, 1234));
  for (int k = 0; k < steps; ++k) {
    double lc_acc = 0.0, lv_acc = 0.0;
    for (int e = 0; e < cfg.ensemble_size; ++e) {
      Batch b = qov::sample_batch(ds, boot[static_cast<size_t>(e)], cfg.batch_size, rng);
      Mat noise(wm.state_dim, b.size());
      for (int j = 0; j < b.size(); ++j)
        for (int i = 0; i < wm.state_dim; ++i) noise(i, j) = rng.normal();
      Tape tape;
      ParamBinding bind(tape, wm.members[static_cast<size_t>(e)], true);
      Var loss = consistency_graph(tape, wm, {&bind}, b, k, cfg, noise);
      lc_acc += loss.scalar();
      tape.backward(loss);
      adam_step(opt[static_cast<size_t>(e)], wm.members[static_cast<size_t>(e)],
                bind.collect_grad());
      // average clamped log-variance over this member's batch, for the log
      const Mat raw = wm.member_arch
                          .forward_plain(wm.members[static_cast<size_t>(e)],
                                         sa_stack(b.states, b.actions))
                          .bottomRows(wm.state_dim);
      lv_acc += raw.cwiseMax(cfg.logvar_low).cwiseMin(cfg.logvar_high).mean();
    }
    lc_acc /= cfg.ensemble_size;
    lv_acc /= cfg.ensemble_size;

    Batch rb = qov::sample_batch(ds, full, cfg.batch_size, rng);
    double lr_val;
    {
      Tape tape;
      ParamBinding bind(tape, wm.reward, true);
      Var loss = reward_graph(tape, wm, bind, rb);
      lr_val = loss.scalar();
      tape.backward(loss);
      adam_step(opt_r, wm.reward, bind.collect_grad());
    }

    if (!std::isfinite(lc_acc) || !std::isfinite(lr_val) ||
        std::abs(lc_acc) > cfg.divergence_guard || std::abs(lr_val) > cfg.divergence_guard)
      throw std::runtime_error("world model training diverged at step " + std::to_string(k));

    if (k % cfg.log_every == 0 || k + 1 == steps)
      out.log.push_back({k, lc_acc, lr_val, decay_weight(k, cfg.gamma0, cfg.t_decay), lv_acc});
  }
  return out;
}

void save_world_model(const WorldModel& wm, double kappa, const std::string& path) {
  std::vector<std::pair<std::string, Vec>> blobs;
  for (size_t e = 0; e < wm.members.size(); ++e)
    blobs.emplace_back("member" + std::to_string(e), wm.members[e].values());
  blobs.emplace_back("reward", wm.reward.values());
  blobs.emplace_back("kappa", Vec::Constant(1, kappa));
  save_checkpoint(path, blobs);
}

WorldModel load_world_model(const envlab::EnvSpec& env, const WmConfig& cfg,
                            const std::string& path, double* kappa_out) {
  WorldModel wm = WorldModel::init(env, cfg, 0);
  auto blobs = load_checkpoint(path);
  for (size_t e = 0; e < wm.members.size(); ++e) {
    auto it = blobs.find("member" + std::to_string(e));
    if (it == blobs.end() || it->second.size() != wm.members[e].total_size())
      throw CheckpointIoError(CheckpointError::io_failure, "world model member blob missing");
    wm.members[e].values() = it->second;
  }
  auto rit = blobs.find("reward");
  if (rit == blobs.end() || rit->second.size() != wm.reward.total_size())
    throw CheckpointIoError(CheckpointError::io_failure, "world model reward blob missing");
  wm.reward.values() = rit->second;
  if (kappa_out) {
    auto kit = blobs.find("kappa");
    *kappa_out = kit == blobs.end() ? 0.0 : kit->second(0);
  }
  return wm;
}

}  // namespace ipd::wm
