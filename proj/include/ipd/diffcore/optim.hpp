#pragma once

#include "ipd/diffcore/params.hpp"

namespace ipd::diffcore {

struct OptimizerState {
  Vec first_moment;
  Vec second_moment;
  int64_t step_count{0};
  double learning_rate{3e-4};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};

  static OptimizerState create(const ParameterSet& ps, double lr);
};

// Standard Adam with bias correction, in place. lr_override < 0 means use
// state.learning_rate (scheduled callers pass the current rate).
void adam_step(OptimizerState& state, ParameterSet& params, const Vec& grad,
               double lr_override = -1.0);

// target' = (1-a)*target + a*online, elementwise over the flat values.
void soft_update(ParameterSet& target, const ParameterSet& online, double a);

// Cosine annealing from lr0 to 0 over total steps.
double cosine_lr(double lr0, int64_t step, int64_t total);

}  // namespace ipd::diffcore
