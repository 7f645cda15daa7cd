#pragma once

#include <Eigen/Dense>

#include "avsep/common.hpp"

namespace avsep {

// Time-major activations: rows are time steps, columns are channels.
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace avsep
