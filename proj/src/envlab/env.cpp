#include "ipd/envlab/env.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>

namespace ipd::envlab {

std::string to_string(EnvName n) {
  return n == EnvName::lqr ? "lqr" : "pointring";
}

EnvName env_name_from_string(const std::string& s) {
  if (s == "lqr") return EnvName::lqr;
  if (s == "pointring") return EnvName::pointring;
  throw std::invalid_argument("unknown environment: " + s);
}

EnvSpec EnvSpec::lqr_default() {
  EnvSpec e;
  e.name = EnvName::lqr;
  e.state_dim = 2;
  e.action_dim = 1;
  e.action_low = Vec::Constant(1, -5.0);
  e.action_high = Vec::Constant(1, 5.0);
  e.max_episode_steps = 50;
  // double integrator, dt = 0.1: A = [1 dt; 0 1], B = [dt^2/2; dt]
  e.dynamics_params = {1.0, 0.1, 0.0, 1.0,   // A
                       0.005, 0.1,           // B
                       1.0, 0.0, 0.0, 1.0,   // Q
                       0.1};                 // R
  e.process_noise_std = 0.0;
  return e;
}

EnvSpec EnvSpec::pointring_default() {
  EnvSpec e;
  e.name = EnvName::pointring;
  e.state_dim = 4;  // px py vx vy
  e.action_dim = 2;
  e.action_low = Vec::Constant(2, -1.0);
  e.action_high = Vec::Constant(2, 1.0);
  e.max_episode_steps = 80;
  // dt, inner, outer, ring radius, goal radius, damping, reserved
  e.dynamics_params = {0.1, 0.5, 1.5, 1.0, 0.15, 0.1, 0.0};
  e.process_noise_std = 0.005;
  return e;
}

EnvSpec EnvSpec::by_name(EnvName n) {
  return n == EnvName::lqr ? lqr_default() : pointring_default();
}

namespace {

Mat unpack(const std::vector<double>& p, size_t off, int r, int c) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = p[off + static_cast<size_t>(i * c + j)];
  return m;
}

}  // namespace

Mat EnvSpec::lqr_A() const {
  return unpack(dynamics_params, 0, state_dim, state_dim);
}
Mat EnvSpec::lqr_B() const {
  return unpack(dynamics_params, static_cast<size_t>(state_dim * state_dim), state_dim,
                action_dim);
}
Mat EnvSpec::lqr_Q() const {
  return unpack(dynamics_params,
                static_cast<size_t>(state_dim * state_dim + state_dim * action_dim),
                state_dim, state_dim);
}
Mat EnvSpec::lqr_R() const {
  return unpack(dynamics_params,
                static_cast<size_t>(2 * state_dim * state_dim + state_dim * action_dim),
                action_dim, action_dim);
}

Vec EnvSpec::pr_goal() const {
  Vec g(2);
  g << pr_ring(), 0.0;
  return g;
}

Vec EnvSpec::pr_start() const {
  Vec s(2);
  s << -pr_ring(), 0.0;
  return s;
}

StepResult step(const EnvSpec& env, const Vec& state, const Vec& action, const Vec& noise) {
  if (state.size() != env.state_dim) throw std::invalid_argument("step: state dim mismatch");
  if (action.size() != env.action_dim)
    throw std::invalid_argument("step: action dim mismatch");
  if (!state.allFinite()) throw std::invalid_argument("step: non-finite state");
  const Vec a = action.cwiseMax(env.action_low).cwiseMin(env.action_high);

  StepResult out;
  if (env.name == EnvName::lqr) {
    const Mat A = env.lqr_A(), B = env.lqr_B(), Q = env.lqr_Q(), R = env.lqr_R();
    out.next_state = A * state + B * a;
    if (noise.size() == env.state_dim && env.process_noise_std > 0.0)
      out.next_state += env.process_noise_std * noise;
    out.reward = -(state.dot(Q * state) + a.dot(R * a));
    out.terminal = false;
    return out;
  }

  // pointring
  const double dt = env.pr_dt();
  Eigen::Vector2d p = state.head<2>();
  Eigen::Vector2d v = state.tail<2>();
  v = (1.0 - env.pr_damping()) * v + dt * a;
  p += dt * v;
  if (noise.size() == env.state_dim && env.process_noise_std > 0.0) {
    p += env.process_noise_std * noise.head<2>();
    v += env.process_noise_std * noise.tail<2>();
  }
  // annulus walls: project back and kill the radial velocity component
  const double r = p.norm();
  if (r > 1e-12) {
    const Eigen::Vector2d dir = p / r;
    if (r < env.pr_inner()) {
      p = dir * env.pr_inner();
      const double vr = v.dot(dir);
      if (vr < 0.0) v -= vr * dir;
    } else if (r > env.pr_outer()) {
      p = dir * env.pr_outer();
      const double vr = v.dot(dir);
      if (vr > 0.0) v -= vr * dir;
    }
  }
  out.next_state = Vec(4);
  out.next_state << p(0), p(1), v(0), v(1);
  const double dist = (p - Eigen::Vector2d(env.pr_goal())).norm();
  out.reward = -dist;
  out.terminal = dist < env.pr_goal_radius();
  return out;
}

Vec reset(const EnvSpec& env, Rng& rng) {
  if (env.name == EnvName::lqr) {
    Vec s(env.state_dim);
    for (int i = 0; i < env.state_dim; ++i) s(i) = 1.5 * rng.normal();
    return s;
  }
  Vec s = Vec::Zero(4);
  s.head<2>() = env.pr_start();
  s(0) += 0.03 * rng.normal();
  s(1) += 0.03 * rng.normal();
  return s;
}

RiccatiSolution riccati_solve(const EnvSpec& env, double gamma) {
  if (env.name != EnvName::lqr)
    throw std::invalid_argument("riccati_solve requires the lqr environment");
  if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("gamma outside (0,1]");
  const Mat A = env.lqr_A(), B = env.lqr_B(), Q = env.lqr_Q(), R = env.lqr_R();
  Mat P = Q;
  const int max_iters = 100000;
  const double tol = 1e-10;
  for (int it = 0; it < max_iters; ++it) {
    const Mat BtPB = R + gamma * B.transpose() * P * B;
    const Mat BtPA = B.transpose() * P * A;
    const Mat K = gamma * BtPB.llt().solve(BtPA);
    const Mat Pn = Q + gamma * A.transpose() * P * A -
                   gamma * A.transpose() * P * B * K;
    const double diff = (Pn - P).cwiseAbs().maxCoeff();
    P = Pn;
    if (diff < tol) {
      RiccatiSolution sol;
      sol.P = 0.5 * (P + P.transpose());
      const Mat BtPB2 = R + gamma * B.transpose() * sol.P * B;
      sol.K = gamma * BtPB2.llt().solve(B.transpose() * sol.P * A);
      return sol;
    }
  }
  throw std::runtime_error("riccati iteration failed to converge");
}

double riccati_value(const EnvSpec& env, const Vec& state, double gamma) {
  const RiccatiSolution sol = riccati_solve(env, gamma);
  return -state.dot(sol.P * state);
}

}  // namespace ipd::envlab
