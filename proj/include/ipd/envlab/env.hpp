#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "ipd/common/rng.hpp"

namespace ipd::envlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class EnvName { lqr, pointring };

std::string to_string(EnvName n);
EnvName env_name_from_string(const std::string& s);

// Analytic toy environment description. dynamics_params layout:
//   lqr:       A (row-major s*s), B (row-major s*a), Q (row-major s*s),
//              R (row-major a*a)
//   pointring: dt, inner_radius, outer_radius, ring_radius, goal_radius,
//              damping, goal_bonus (unused, kept 0)
struct EnvSpec {
  EnvName name{EnvName::lqr};
  int state_dim{0};
  int action_dim{0};
  Vec action_low;
  Vec action_high;
  int max_episode_steps{1};
  std::vector<double> dynamics_params;
  double process_noise_std{0.0};

  static EnvSpec lqr_default();
  static EnvSpec pointring_default();
  static EnvSpec by_name(EnvName n);

  // lqr accessors
  Mat lqr_A() const;
  Mat lqr_B() const;
  Mat lqr_Q() const;
  Mat lqr_R() const;

  // pointring accessors
  double pr_dt() const { return dynamics_params[0]; }
  double pr_inner() const { return dynamics_params[1]; }
  double pr_outer() const { return dynamics_params[2]; }
  double pr_ring() const { return dynamics_params[3]; }
  double pr_goal_radius() const { return dynamics_params[4]; }
  double pr_damping() const { return dynamics_params[5]; }
  Vec pr_goal() const;
  Vec pr_start() const;
};

struct StepResult {
  Vec next_state;
  double reward{0.0};
  bool terminal{false};
};

// One dynamics step. Actions outside bounds are clipped; noise is a
// standard-normal vector scaled internally by process_noise_std.
StepResult step(const EnvSpec& env, const Vec& state, const Vec& action, const Vec& noise);

// Canonical initial-state draw used by evaluation and most behaviors.
Vec reset(const EnvSpec& env, Rng& rng);

// Discounted algebraic Riccati solution for the lqr environment.
struct RiccatiSolution {
  Mat P;  // value matrix, V*(s) = -s'Ps
  Mat K;  // optimal gain, a* = -K s
};

RiccatiSolution riccati_solve(const EnvSpec& env, double gamma);

// V*(s) = -s'Ps under discount gamma.
double riccati_value(const EnvSpec& env, const Vec& state, double gamma);

}  // namespace ipd::envlab
