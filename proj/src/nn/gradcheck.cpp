#include "avsep/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "avsep/common.hpp"

namespace avsep::nn {

GradCheckResult gradient_check(const ScalarFn& fn, const std::vector<double>& point, double epsilon,
                               std::span<const std::size_t> coords, const std::string& label) {
  require(epsilon > 0.0, "gradient_check: epsilon must be positive");
  for (double v : point)
    if (!std::isfinite(v)) throw NonFinite("gradient_check(" + label + "): non-finite point");

  std::vector<double> analytic(point.size(), 0.0);
  const double f0 = fn(point, &analytic);
  if (!std::isfinite(f0)) throw NonFinite("gradient_check(" + label + "): non-finite objective");
  require(analytic.size() == point.size(), "gradient_check(" + label + "): gradient length mismatch");

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(point.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  GradCheckResult result;
  std::vector<double> x = point;
  for (std::size_t i : coords) {
    require(i < point.size(), "gradient_check(" + label + "): coordinate out of range");
    x[i] = point[i] + epsilon;
    const double fp = fn(x, nullptr);
    x[i] = point[i] - epsilon;
    const double fm = fn(x, nullptr);
    x[i] = point[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFinite("gradient_check(" + label + "): non-finite objective at coordinate " + std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (result.checked++ == 0 || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace avsep::nn
