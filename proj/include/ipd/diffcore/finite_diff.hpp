#pragma once

#include <functional>

#include "ipd/diffcore/params.hpp"

namespace ipd::diffcore {

struct GradientReport {
  double max_rel_error{0.0};
  int argmax_index{-1};
  int checked_coords{0};
};

// Compares an analytic gradient against central finite differences of
// loss_value on a sampled subset of coordinates (all of them when the set is
// small, at least 64 otherwise). Relative error is measured against the
// larger of the two entries with a floor tied to the gradient's overall
// scale, so coordinates with near-zero gradient do not drown the report in
// roundoff noise.
GradientReport finite_diff_check(const ParameterSet& params,
                                 const std::function<double(const ParameterSet&)>& loss_value,
                                 const Vec& analytic_grad, double step,
                                 int max_coords = 256, uint64_t seed = 7);

}  // namespace ipd::diffcore
