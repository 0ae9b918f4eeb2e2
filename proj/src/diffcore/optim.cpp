#include "ipd/diffcore/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ipd::diffcore {

OptimizerState OptimizerState::create(const ParameterSet& ps, double lr) {
  if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
  OptimizerState s;
  s.first_moment = Vec::Zero(ps.total_size());
  s.second_moment = Vec::Zero(ps.total_size());
  s.learning_rate = lr;
  return s;
}

void adam_step(OptimizerState& state, ParameterSet& params, const Vec& grad,
               double lr_override) {
  if (grad.size() != params.total_size() || state.first_moment.size() != grad.size())
    throw std::invalid_argument("adam_step shape mismatch");
  const double lr = lr_override >= 0.0 ? lr_override : state.learning_rate;
  state.step_count += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  state.first_moment = b1 * state.first_moment + (1.0 - b1) * grad;
  state.second_moment =
      (b2 * state.second_moment.array() + (1.0 - b2) * grad.array().square()).matrix();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  params.values().array() -=
      lr * (state.first_moment.array() / c1) /
      ((state.second_moment.array() / c2).sqrt() + state.eps);
}

void soft_update(ParameterSet& target, const ParameterSet& online, double a) {
  if (a <= 0.0 || a > 1.0) throw std::invalid_argument("soft_update coefficient outside (0,1]");
  if (target.total_size() != online.total_size())
    throw std::invalid_argument("soft_update shape mismatch");
  target.values() = (1.0 - a) * target.values() + a * online.values();
}

double cosine_lr(double lr0, int64_t step, int64_t total) {
  if (total <= 0) return lr0;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

}  // namespace ipd::diffcore
