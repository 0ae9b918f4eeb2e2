#include "doctest.h"

#include <cmath>

#include "ipd/diffcore/optim.hpp"
#include "ipd/diffcore/tape.hpp"
#include "ipd/envlab/generate.hpp"
#include "ipd/qov/qov.hpp"

using namespace ipd;
using namespace ipd::qov;

namespace {

// tau-expectile of a sample by coarse-to-fine grid search on the asymmetric
// squared loss; independent of the production loss path.
double expectile_grid_oracle(const std::vector<double>& ys, double tau) {
  auto objective = [&](double v) {
    double acc = 0.0;
    for (double y : ys) {
      const double e = y - v;
      acc += std::abs(tau - (e < 0.0 ? 1.0 : 0.0)) * e * e;
    }
    return acc;
  };
  double lo = *std::min_element(ys.begin(), ys.end());
  double hi = *std::max_element(ys.begin(), ys.end());
  double best = lo;
  for (int refine = 0; refine < 4; ++refine) {
    const double step = (hi - lo) / 400.0;
    double best_val = 1e300;
    for (int i = 0; i <= 400; ++i) {
      const double v = lo + i * step;
      const double f = objective(v);
      if (f < best_val) {
        best_val = f;
        best = v;
      }
    }
    lo = best - 2.0 * step;
    hi = best + 2.0 * step;
  }
  return best;
}

// Minimize mean expectile_huber((y - v), tau, delta) over scalar v with the
// production tape + Adam.
double fit_scalar_expectile(const std::vector<double>& ys, double tau, double delta) {
  diffcore::ParameterSet ps;
  ps.add("v", 1, 1);
  diffcore::OptimizerState opt = diffcore::OptimizerState::create(ps, 0.05);
  diffcore::Mat ym(1, static_cast<int>(ys.size()));
  for (size_t i = 0; i < ys.size(); ++i) ym(0, static_cast<int>(i)) = ys[i];
  const int steps = 6000;
  for (int k = 0; k < steps; ++k) {
    diffcore::Tape tape;
    diffcore::ParamBinding bind(tape, ps);
    diffcore::Var pred = bind.at("v");
    diffcore::Var ones = tape.input(diffcore::Mat::Ones(1, ym.cols()));
    diffcore::Var e =
        diffcore::sub(tape.input(ym), diffcore::mul_colvec(ones, pred));
    diffcore::Var loss = diffcore::mean_all(diffcore::expectile_huber(e, tau, delta));
    tape.backward(loss);
    diffcore::adam_step(opt, ps, bind.collect_grad(), diffcore::cosine_lr(0.05, k, steps));
  }
  return ps.view("v")(0, 0);
}

envlab::Dataset small_lqr_dataset(uint64_t seed = 21) {
  return envlab::generate_dataset(
      envlab::EnvSpec::lqr_default(),
      {{envlab::PolicyKind::expert, 0.4},
       {envlab::PolicyKind::noisy, 0.4},
       {envlab::PolicyKind::random, 0.2}},
      8, seed);
}

}  // namespace

TEST_CASE("huber: values and joint continuity") {
  CHECK(huber(0.0, 1.0) == doctest::Approx(0.0));
  CHECK(huber(0.5, 1.0) == doctest::Approx(0.125));
  CHECK(huber(-3.0, 1.0) == doctest::Approx(2.5));
  // both branches meet at |e| = delta with value delta^2/2
  const double d = 0.73;
  CHECK(huber(d, d) == doctest::Approx(0.5 * d * d).epsilon(1e-12));
  CHECK(huber(std::nextafter(d, 1e9), d) == doctest::Approx(0.5 * d * d).epsilon(1e-9));
  CHECK_THROWS_AS(huber(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("huber: monotone in |e|") {
  double prev = -1.0;
  for (double e = 0.0; e < 4.0; e += 0.01) {
    const double h = huber(e, 0.8);
    CHECK(h >= prev);
    CHECK(huber(-e, 0.8) == doctest::Approx(h));
    prev = h;
  }
}

TEST_CASE("expectile_huber: asymmetric weights and tau=0.5 reduction") {
  CHECK(expectile_huber(1.0, 0.7, 1.0) == doctest::Approx(0.35));
  CHECK(expectile_huber(-1.0, 0.7, 1.0) == doctest::Approx(0.15));
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double e = 3.0 * rng.normal();
    CHECK(expectile_huber(e, 0.5, 1.0) == doctest::Approx(0.5 * huber(e, 1.0)));
    // reflection symmetry
    CHECK(expectile_huber(e, 0.7, 1.0) ==
          doctest::Approx(expectile_huber(-e, 0.3, 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("expectile recovery: scalar minimizer matches grid oracle") {
  Rng rng(17);
  std::vector<double> ys;
  for (int i = 0; i < 60; ++i) ys.push_back(2.0 * rng.normal() + 0.5);
  for (double tau : {0.3, 0.5, 0.7, 0.9}) {
    const double fitted = fit_scalar_expectile(ys, tau, /*delta=*/100.0);
    const double oracle = expectile_grid_oracle(ys, tau);
    CHECK(std::abs(fitted - oracle) < 1e-3);
  }
}

TEST_CASE("expectile monotonicity in tau") {
  Rng rng(19);
  std::vector<double> ys;
  for (int i = 0; i < 40; ++i) ys.push_back(rng.normal());
  double prev = -1e18;
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double v = expectile_grid_oracle(ys, tau);
    CHECK(v >= prev - 1e-9);
    prev = v;
  }
}

TEST_CASE("update_delta_threshold: interpolated percentile") {
  ErrorBuffer buf(1000);
  for (int i = 1; i <= 100; ++i) buf.push(static_cast<double>(i));
  CHECK(update_delta_threshold(buf, 0.96) == doctest::Approx(96.04).epsilon(1e-12));
  CHECK(update_delta_threshold(buf, 1.0) == doctest::Approx(100.0));

  ErrorBuffer same(10);
  for (int i = 0; i < 7; ++i) same.push(3.25);
  CHECK(update_delta_threshold(same, 0.5) == doctest::Approx(3.25));

  ErrorBuffer empty(5);
  CHECK(update_delta_threshold(empty, 0.96) == doctest::Approx(1.0));
}

TEST_CASE("error buffer: ring semantics") {
  ErrorBuffer buf(4);
  for (int i = 1; i <= 6; ++i) buf.push(i);
  CHECK(buf.size() == 4);
  auto snap = buf.snapshot();
  std::sort(snap.begin(), snap.end());
  CHECK(snap == std::vector<double>{3.0, 4.0, 5.0, 6.0});
}

TEST_CASE("v_loss: zero when V matches targets; single-sample oracle") {
  auto ds = small_lqr_dataset();
  QovConfig cfg;
  cfg.dropout = 0.0;
  QovModels m = QovModels::init(ds.env, cfg, 5);
  Rng rng(7);
  Batch b = sample_batch(ds, 4, rng);
  // zero-initialized heads: V == 0 == min target Q -> loss 0
  CHECK(v_loss(m, b, cfg, 1.0) == doctest::Approx(0.0));

  // single sample: hand-compose the expectile huber of the residual
  Batch one = sample_batch(ds, 1, rng);
  // make V nonzero deterministically
  m.v.view("out/b")(0, 0) = 0.37;
  const double tq = m.q_min_target(one.states, one.actions)(0, 0);
  const double vv = m.value(one.states)(0, 0);
  const double expect = expectile_huber(tq - vv, cfg.tau, 1.0);
  CHECK(v_loss(m, one, cfg, 1.0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("v_loss: tau=0.5 with huge delta reduces to quarter mean-square") {
  auto ds = small_lqr_dataset();
  QovConfig cfg;
  cfg.dropout = 0.0;
  cfg.tau = 0.5;
  QovModels m = QovModels::init(ds.env, cfg, 5);
  m.v.view("out/b")(0, 0) = -0.83;
  Rng rng(9);
  Batch b = sample_batch(ds, 32, rng);
  const Mat res = m.q_min_target(b.states, b.actions) - m.value(b.states);
  const double msr = res.array().square().mean();
  CHECK(v_loss(m, b, cfg, 1e9) == doctest::Approx(0.25 * msr).epsilon(1e-12));
}

TEST_CASE("q_loss: zero at perfect fit; terminal unit contribution; straight-line oracle") {
  auto ds = small_lqr_dataset();
  QovConfig cfg;
  cfg.dropout = 0.0;
  QovModels m = QovModels::init(ds.env, cfg, 6);

  // Q == 0 network; craft a batch with terminal, r = 1 -> per-head 1, total 2
  Batch b;
  b.states = Mat::Zero(2, 1);
  b.actions = Mat::Zero(1, 1);
  b.rewards = Eigen::RowVectorXd::Constant(1, 1.0);
  b.next_states = Mat::Zero(2, 1);
  b.terminals = Eigen::RowVectorXd::Constant(1, 1.0);
  CHECK(q_loss(m, b, cfg) == doctest::Approx(2.0));

  // zero reward, V == 0, Q == 0 -> perfect fit
  b.rewards(0) = 0.0;
  CHECK(q_loss(m, b, cfg) == doctest::Approx(0.0));

  // random batch vs scalar recomputation
  Rng rng(11);
  Batch rb = sample_batch(ds, 16, rng);
  m.q1.view("out/b")(0, 0) = 0.21;
  m.q2.view("out/b")(0, 0) = -0.4;
  m.v.view("out/b")(0, 0) = 0.11;
  double acc = 0.0;
  for (int i = 0; i < rb.size(); ++i) {
    const double vs = m.value(rb.next_states.col(i))(0, 0);
    const double y = rb.rewards(i) + cfg.gamma * (1.0 - rb.terminals(i)) * vs;
    Mat sa(3, 1);
    sa << rb.states(0, i), rb.states(1, i), rb.actions(0, i);
    const double q1v = m.q_arch.forward_plain(m.q1, sa)(0, 0);
    const double q2v = m.q_arch.forward_plain(m.q2, sa)(0, 0);
    acc += (y - q1v) * (y - q1v) + (y - q2v) * (y - q2v);
  }
  CHECK(q_loss(m, rb, cfg) == doctest::Approx(acc / rb.size()).epsilon(1e-12));
}

TEST_CASE("awr: beta=0 reduces to behavior cloning NLL") {
  auto ds = small_lqr_dataset();
  QovConfig cfg;
  cfg.dropout = 0.0;
  cfg.beta = 0.0;
  QovModels m = QovModels::init(ds.env, cfg, 8);
  Rng rng(13);
  Batch b = sample_batch(ds, 8, rng);
  // plain average negative log likelihood with sigma = exp(0) = 1
  const Mat mu = m.policy_mean(b.states);
  double nll = 0.0;
  for (int i = 0; i < b.size(); ++i) {
    const double z = b.actions(0, i) - mu(0, i);
    nll += 0.5 * z * z + 0.5 * std::log(2.0 * 3.14159265358979323846);
  }
  nll /= b.size();
  CHECK(awr_policy_loss(m, b, cfg) == doctest::Approx(nll).epsilon(1e-12));
}

TEST_CASE("awr: weights invariant to constant shift of Q and V") {
  auto ds = small_lqr_dataset();
  QovConfig cfg;
  cfg.dropout = 0.0;
  QovModels m = QovModels::init(ds.env, cfg, 8);
  Rng rng(15);
  Batch b = sample_batch(ds, 16, rng);
  const double base = awr_policy_loss(m, b, cfg);
  // shift both output heads by the same constant: advantage unchanged
  const double c = 1.37;
  m.q1_target.view("out/b")(0, 0) += c;
  m.q2_target.view("out/b")(0, 0) += c;
  m.v.view("out/b")(0, 0) += c;
  CHECK(awr_policy_loss(m, b, cfg) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("awr: very negative advantage zeroes the sample weight") {
  // two-sample batch with known advantages: gradient direction follows the
  // positively weighted sample
  QovConfig cfg;
  cfg.dropout = 0.0;
  cfg.hidden = {};
  cfg.beta = 3.0;
  envlab::EnvSpec env = envlab::EnvSpec::lqr_default();
  QovModels m = QovModels::init(env, cfg, 2);
  // craft targets: sample 0 has advantage 0 (weight 1), sample 1 has
  // advantage -10 (weight ~ 9e-14)
  m.v.view("out/W").setZero();
  m.v.view("out/b")(0, 0) = 0.0;
  m.q1_target.view("out/W").setZero();
  m.q2_target.view("out/W").setZero();
  // q(s,a) = w_a * a with w_a chosen to split the two samples
  m.q1_target.view("out/W")(0, 2) = -10.0;  // input layout (s0,s1,a)
  m.q2_target.view("out/W")(0, 2) = -10.0;

  Batch b;
  b.states = Mat::Zero(2, 2);
  b.actions = Mat::Zero(1, 2);
  b.actions(0, 0) = 0.0;  // advantage 0
  b.actions(0, 1) = 1.0;  // advantage -10
  b.rewards = Eigen::RowVectorXd::Zero(2);
  b.next_states = Mat::Zero(2, 2);
  b.terminals = Eigen::RowVectorXd::Zero(2);

  // analytic: loss = (1/2)*[w0*nll(a0) + w1*nll(a1)], w1 ~ 0
  diffcore::Tape tape;
  diffcore::ParamBinding pib(tape, m.policy);
  (void)pib;
  const Mat mu = m.policy_mean(b.states);
  const double w0 = 1.0;
  const double nll0 = 0.5 * std::pow(b.actions(0, 0) - mu(0, 0), 2) +
                      0.5 * std::log(2.0 * 3.14159265358979323846);
  const double expected = 0.5 * w0 * nll0 +
                          0.5 * std::exp(-30.0) *
                              (0.5 * std::pow(b.actions(0, 1) - mu(0, 1), 2) +
                               0.5 * std::log(2.0 * 3.14159265358979323846));
  CHECK(awr_policy_loss(m, b, cfg) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("qop_action: zero std makes sample equal mean; clipping applies") {
  QovConfig cfg;
  cfg.dropout = 0.0;
  envlab::EnvSpec env = envlab::EnvSpec::lqr_default();
  QovModels m = QovModels::init(env, cfg, 3);
  m.policy.view("log_std").setConstant(-5.0);  // sigma ~ 6.7e-3, clamp floor
  Vec s(2);
  s << 0.4, -0.2;
  Rng rng(5);
  const Vec mean = qop_action(m, s, ActionMode::mean);
  const Vec samp = qop_action(m, s, ActionMode::sample, &rng);
  CHECK((mean - samp).cwiseAbs().maxCoeff() < 0.05);

  m.policy.view("out/b")(0, 0) = 1e9;  // absurd mean
  CHECK(qop_action(m, s, ActionMode::mean)(0) == doctest::Approx(env.action_high(0)));
}

TEST_CASE("train_qov: steps=0 returns initialized models; empty dataset rejected") {
  auto ds = small_lqr_dataset();
  QovConfig cfg;
  QovTrainResult r = train_qov(ds, cfg, 0, 42);
  QovModels fresh = QovModels::init(ds.env, cfg, 42);
  CHECK((r.models.v.values() - fresh.v.values()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.log.empty());

  envlab::Dataset empty;
  empty.env = ds.env;
  CHECK_THROWS_AS(train_qov(empty, cfg, 10, 1), std::invalid_argument);
}

TEST_CASE("train_qov: losses drop and training is deterministic") {
  auto ds = small_lqr_dataset();
  QovConfig cfg;
  cfg.batch_size = 64;
  QovTrainResult a = train_qov(ds, cfg, 300, 42);
  QovTrainResult b = train_qov(ds, cfg, 300, 42);
  CHECK((a.models.v.values() - b.models.v.values()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.models.policy.values() - b.models.policy.values()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.log.size() >= 2);
  // q loss should fall markedly from its early value
  CHECK(a.log.back().loss_q < a.log.front().loss_q);
}

TEST_CASE("target params follow the closed-form geometric blend") {
  auto ds = small_lqr_dataset();
  QovConfig cfg;
  QovModels m = QovModels::init(ds.env, cfg, 31);
  diffcore::ParameterSet online = m.q1;
  online.values().setOnes();
  diffcore::ParameterSet target = m.q1;
  target.values().setZero();
  const double a = 0.005;
  const int n = 137;
  for (int i = 0; i < n; ++i) diffcore::soft_update(target, online, a);
  const double expected = 1.0 - std::pow(1.0 - a, n);
  CHECK((target.values().array() - expected).abs().maxCoeff() < 1e-12);
}
