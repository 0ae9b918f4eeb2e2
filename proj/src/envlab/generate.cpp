#include "ipd/envlab/generate.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace ipd::envlab {

namespace {

constexpr double kBehaviorGamma = 0.99;
constexpr double kPi = 3.14159265358979323846;

// Angle along the ring normalized into (-pi/2, 3pi/2] so the route
// start (pi) -> top (pi/2) -> goal (0) is monotone decreasing and continuous
// around the start.
double route_angle(const Eigen::Vector2d& p) {
  double phi = std::atan2(p.y(), p.x());
  if (phi < -kPi / 2.0) phi += 2.0 * kPi;
  return phi;
}

// Arc-following controller: chase a carrot on the ring ahead of the current
// angle, switch to point tracking near the segment target.
Vec ring_follow(const EnvSpec& env, const Vec& state, double target_angle,
                const Eigen::Vector2d& target_point) {
  const Eigen::Vector2d p = state.head<2>();
  const Eigen::Vector2d v = state.tail<2>();
  const double r0 = env.pr_ring();
  Eigen::Vector2d vd;
  if ((p - target_point).norm() < 0.12) {
    vd = 1.0 * (target_point - p);
  } else {
    const double phi = route_angle(p);
    const double carrot_angle = std::max(target_angle, phi - 0.55);
    Eigen::Vector2d carrot(r0 * std::cos(carrot_angle), r0 * std::sin(carrot_angle));
    if (carrot_angle <= target_angle + 1e-9) carrot = target_point;
    vd = 1.4 * (carrot - p);
    const double n = vd.norm();
    if (n > 0.9) vd *= 0.9 / n;
  }
  Eigen::Vector2d a = 3.0 * (vd - v);
  Vec out(2);
  out << a.x(), a.y();
  return out;
}

// Station keeping around a fixed point.
Vec ring_hold(const Vec& state, const Eigen::Vector2d& anchor) {
  const Eigen::Vector2d p = state.head<2>();
  const Eigen::Vector2d v = state.tail<2>();
  Eigen::Vector2d a = 1.2 * (anchor - p) - 1.5 * v;
  Vec out(2);
  out << a.x(), a.y();
  return out;
}

Vec random_action(const EnvSpec& env, Rng& rng) {
  Vec a(env.action_dim);
  for (int i = 0; i < env.action_dim; ++i)
    a(i) = rng.uniform(env.action_low(i), env.action_high(i));
  return a;
}

Vec noisy(Vec a, double scale, Rng& rng) {
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) += scale * rng.normal();
  return a;
}

}  // namespace

PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "expert") return PolicyKind::expert;
  if (s == "noisy") return PolicyKind::noisy;
  if (s == "random") return PolicyKind::random;
  if (s == "zero") return PolicyKind::zero;
  if (s == "half_a") return PolicyKind::half_a;
  if (s == "half_b") return PolicyKind::half_b;
  throw std::invalid_argument("unknown policy kind: " + s);
}

std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::expert: return "expert";
    case PolicyKind::noisy: return "noisy";
    case PolicyKind::random: return "random";
    case PolicyKind::zero: return "zero";
    case PolicyKind::half_a: return "half_a";
    case PolicyKind::half_b: return "half_b";
  }
  return "?";
}

Dataset generate_dataset(const EnvSpec& env, const BehaviorMix& mix, int n_trajectories,
                         uint64_t seed) {
  if (n_trajectories < 1) throw std::invalid_argument("n_trajectories must be >= 1");
  if (mix.empty()) throw std::invalid_argument("behavior mix must be non-empty");
  double total = 0.0;
  for (const auto& [k, f] : mix) {
    (void)k;
    if (f < 0.0) throw std::invalid_argument("behavior fraction must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("behavior fractions must sum to 1");

  // kind per trajectory index, by cumulative fraction
  std::vector<PolicyKind> kind_of(static_cast<size_t>(n_trajectories));
  {
    double cum = 0.0;
    int start = 0;
    for (size_t m = 0; m < mix.size(); ++m) {
      cum += mix[m].second;
      int end = (m + 1 == mix.size())
                    ? n_trajectories
                    : static_cast<int>(std::floor(cum * n_trajectories + 1e-9));
      for (int i = start; i < end && i < n_trajectories; ++i)
        kind_of[static_cast<size_t>(i)] = mix[m].first;
      start = std::max(start, end);
    }
  }

  Mat gain;  // lqr expert gain, computed on demand
  if (env.name == EnvName::lqr) gain = riccati_solve(env, kBehaviorGamma).K;

  Dataset ds;
  ds.env = env;
  ds.seed = seed;
  ds.trajectories.reserve(static_cast<size_t>(n_trajectories));

  const Eigen::Vector2d mid =
      env.name == EnvName::pointring
          ? Eigen::Vector2d(0.0, env.pr_ring())
          : Eigen::Vector2d::Zero();

  for (int ti = 0; ti < n_trajectories; ++ti) {
    Rng rng(Rng::derive(seed, static_cast<uint64_t>(ti)));
    const PolicyKind kind = kind_of[static_cast<size_t>(ti)];

    Vec s;
    int wait_steps = 0;
    if (env.name == EnvName::pointring && kind == PolicyKind::half_b) {
      s = Vec::Zero(4);
      s(0) = mid.x() + 0.03 * rng.normal();
      s(1) = mid.y() + 0.03 * rng.normal();
      wait_steps = 38 + static_cast<int>(rng.below(9));  // 38..46 of 80
    } else {
      s = reset(env, rng);
    }
    s = snap32(s);

    std::function<Vec(const Vec&, int)> act;
    switch (kind) {
      case PolicyKind::expert:
        if (env.name == EnvName::lqr) {
          act = [&](const Vec& st, int) { return noisy(Vec(-gain * st), 0.05, rng); };
        } else {
          act = [&](const Vec& st, int) {
            return noisy(ring_follow(env, st, 0.0, env.pr_goal()), 0.05, rng);
          };
        }
        break;
      case PolicyKind::noisy:
        if (env.name != EnvName::lqr)
          throw std::invalid_argument("policy kind 'noisy' is lqr-only");
        act = [&](const Vec& st, int) { return noisy(Vec(-gain * st), 0.7, rng); };
        break;
      case PolicyKind::random:
        act = [&](const Vec&, int) { return random_action(env, rng); };
        break;
      case PolicyKind::zero:
        act = [&](const Vec&, int) { return Vec::Zero(env.action_dim); };
        break;
      case PolicyKind::half_a:
        if (env.name != EnvName::pointring)
          throw std::invalid_argument("policy kind 'half_a' is pointring-only");
        act = [&, mid](const Vec& st, int) {
          return noisy(ring_follow(env, st, kPi / 2.0, mid), 0.08, rng);
        };
        break;
      case PolicyKind::half_b:
        if (env.name != EnvName::pointring)
          throw std::invalid_argument("policy kind 'half_b' is pointring-only");
        act = [&, wait_steps](const Vec& st, int t) {
          if (t < wait_steps) {
            Eigen::Vector2d anchor = st.head<2>();
            return noisy(ring_hold(st, anchor), 0.08, rng);
          }
          return noisy(ring_follow(env, st, 0.0, env.pr_goal()), 0.08, rng);
        };
        break;
    }

    Trajectory traj;
    traj.provenance = Provenance::real;
    traj.source_index = -1;
    for (int t = 0; t < env.max_episode_steps; ++t) {
      Vec a = act(s, t).cwiseMax(env.action_low).cwiseMin(env.action_high);
      a = snap32(a);
      Vec noise(env.state_dim);
      for (int i = 0; i < env.state_dim; ++i) noise(i) = rng.normal();
      StepResult r = step(env, s, a, noise);
      Transition tr;
      tr.state = s;
      tr.action = a;
      tr.reward = snap32(r.reward);
      tr.next_state = snap32(r.next_state);
      tr.terminal = r.terminal;
      s = tr.next_state;
      traj.transitions.push_back(std::move(tr));
      if (r.terminal) break;
    }
    ds.trajectories.push_back(std::move(traj));
  }
  return ds;
}

}  // namespace ipd::envlab
