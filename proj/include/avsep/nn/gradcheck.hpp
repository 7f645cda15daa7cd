#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace avsep::nn {

// Scalar objective; when `grad` is non-null it receives the analytic
// gradient (same length as x).
using ScalarFn = std::function<double(const std::vector<double>& x, std::vector<double>* grad)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Central differences against the analytic gradient. The per-coordinate
// error is |a - n| / max(|a|, |n|, 1e-8). An empty `coords` checks every
// coordinate. Throws NonFinite (mentioning `label`) if any evaluation is
// not finite.
GradCheckResult gradient_check(const ScalarFn& fn, const std::vector<double>& point, double epsilon,
                               std::span<const std::size_t> coords = {}, const std::string& label = "fn");

}  // namespace avsep::nn
