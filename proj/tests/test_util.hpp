#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <functional>
#include <random>
#include <string>

#include "blindkernel/image.hpp"
#include "blindkernel/kernel.hpp"

namespace testutil {

using blindkernel::Plane;

inline Plane random_plane(int rows, int cols, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Plane p(rows, cols);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

inline blindkernel::ImagePlane random_image(int rows, int cols, std::mt19937_64& rng) {
  return blindkernel::ImagePlane(random_plane(rows, cols, rng));
}

inline blindkernel::Kernel random_unit_kernel(int side, std::mt19937_64& rng) {
  Plane p = random_plane(side, side, rng, 0.01, 1.0);
  return blindkernel::Kernel(Plane(p / p.sum()));
}

inline double max_abs_diff(const Plane& a, const Plane& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Central difference of f at x[i].
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("blindkernel_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace testutil
