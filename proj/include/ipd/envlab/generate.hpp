#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ipd/envlab/dataset.hpp"

namespace ipd::envlab {

// Behavior families for dataset generation.
//   lqr:       expert (Riccati gain + small noise), noisy (large noise),
//              random, zero
//   pointring: half_a (start -> midpoint, then hovers), half_b (starts near
//              the midpoint, waits, then drives to the goal), expert (full
//              route), random
enum class PolicyKind { expert, noisy, random, zero, half_a, half_b };

PolicyKind policy_kind_from_string(const std::string& s);
std::string to_string(PolicyKind k);

using BehaviorMix = std::vector<std::pair<PolicyKind, double>>;

// Deterministic in (env, mix, n_trajectories, seed). Fractions must sum to 1.
// All stored values are rounded through f32 so the in-memory dataset equals
// its file image.
Dataset generate_dataset(const EnvSpec& env, const BehaviorMix& mix, int n_trajectories,
                         uint64_t seed);

}  // namespace ipd::envlab
