#include "ipd/envlab/dataset.hpp"

#include <stdexcept>
#include <string>

namespace ipd::envlab {

const Vec& Trajectory::state_at(int k) const {
  if (k < 0 || k > length()) throw std::out_of_range("state_at index outside trajectory");
  if (k == length()) return transitions.back().next_state;
  return transitions[static_cast<size_t>(k)].state;
}

size_t Dataset::total_transitions() const {
  size_t n = 0;
  for (const auto& t : trajectories) n += t.transitions.size();
  return n;
}

double discounted_return(const Trajectory& traj, double gamma) {
  if (traj.transitions.empty()) throw std::invalid_argument("return of empty trajectory");
  if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("gamma outside (0,1]");
  double acc = 0.0, g = 1.0;
  for (const auto& tr : traj.transitions) {
    acc += g * tr.reward;
    g *= gamma;
  }
  return acc;
}

void validate(const Dataset& ds) {
  for (size_t ti = 0; ti < ds.trajectories.size(); ++ti) {
    const auto& traj = ds.trajectories[ti];
    for (size_t k = 0; k < traj.transitions.size(); ++k) {
      const auto& tr = traj.transitions[k];
      if (tr.state.size() != ds.env.state_dim || tr.next_state.size() != ds.env.state_dim ||
          tr.action.size() != ds.env.action_dim)
        throw std::runtime_error("dataset transition dimensions inconsistent with env (trajectory " +
                                 std::to_string(ti) + ")");
      if (!std::isfinite(tr.reward))
        throw std::runtime_error("non-finite reward in trajectory " + std::to_string(ti));
      if (k + 1 < traj.transitions.size()) {
        if (tr.terminal)
          throw std::runtime_error("terminal before the last transition in trajectory " +
                                   std::to_string(ti));
        const auto& next = traj.transitions[k + 1];
        if ((tr.next_state - next.state).cwiseAbs().maxCoeff() != 0.0)
          throw std::runtime_error("chaining violated in trajectory " + std::to_string(ti));
      }
    }
  }
}

double snap32(double x) { return static_cast<double>(static_cast<float>(x)); }

Vec snap32(const Vec& v) {
  Vec out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = snap32(v(i));
  return out;
}

}  // namespace ipd::envlab
