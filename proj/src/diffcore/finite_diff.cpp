#include "ipd/diffcore/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ipd/common/rng.hpp"

namespace ipd::diffcore {

GradientReport finite_diff_check(const ParameterSet& params,
                                 const std::function<double(const ParameterSet&)>& loss_value,
                                 const Vec& analytic_grad, double step, int max_coords,
                                 uint64_t seed) {
  if (step <= 0.0) throw std::invalid_argument("finite difference step must be positive");
  const int n = params.total_size();
  if (analytic_grad.size() != n) throw std::invalid_argument("gradient size mismatch");

  std::vector<int> coords(static_cast<size_t>(n));
  std::iota(coords.begin(), coords.end(), 0);
  const int want = std::max(std::min(n, 64), std::min(n, max_coords));
  if (want < n) {
    Rng rng(seed);
    for (int i = 0; i < want; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n - i)));
      std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
    }
    coords.resize(static_cast<size_t>(want));
  }

  const double floor = 1e-6 * std::max(1.0, analytic_grad.cwiseAbs().maxCoeff());
  ParameterSet work = params;
  GradientReport rep;
  rep.checked_coords = static_cast<int>(coords.size());
  for (int c : coords) {
    const double x0 = work.values()(c);
    const double h = step * std::max(1.0, std::abs(x0));
    work.values()(c) = x0 + h;
    const double fp = loss_value(work);
    work.values()(c) = x0 - h;
    const double fm = loss_value(work);
    work.values()(c) = x0;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic_grad(c);
    const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.argmax_index = c;
    }
  }
  return rep;
}

}  // namespace ipd::diffcore
