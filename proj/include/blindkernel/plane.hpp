#pragma once

#include <Eigen/Core>

namespace blindkernel {

/// Dense row-major 2-D array of doubles; the storage type for images,
/// kernels and gradient maps.
using Plane = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace blindkernel
