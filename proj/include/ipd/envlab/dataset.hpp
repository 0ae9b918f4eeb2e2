#pragma once

#include <cstdint>
#include <vector>

#include "ipd/envlab/env.hpp"

namespace ipd::envlab {

enum class Provenance : uint8_t { real = 0, imagined = 1 };

struct Transition {
  Vec state;
  Vec action;
  double reward{0.0};
  Vec next_state;
  bool terminal{false};
};

struct Trajectory {
  std::vector<Transition> transitions;
  Provenance provenance{Provenance::real};
  int64_t source_index{-1};  // imagined segments: index of the seed trajectory

  int length() const { return static_cast<int>(transitions.size()); }
  // state_at(k) for k in [0, length]; state_at(length) is the final
  // next_state.
  const Vec& state_at(int k) const;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  EnvSpec env;
  uint64_t seed{0};

  size_t total_transitions() const;
};

// Sum of gamma^k * r_k over the trajectory. Throws on empty input or gamma
// outside (0, 1].
double discounted_return(const Trajectory& traj, double gamma);

// Verifies dimensional consistency and the chaining invariant
// (next_state[k] == state[k+1] bitwise) for every trajectory.
void validate(const Dataset& ds);

// Rounds every stored value through f32, the dataset file precision.
double snap32(double x);
Vec snap32(const Vec& v);

}  // namespace ipd::envlab
