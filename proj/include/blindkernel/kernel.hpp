#pragma once

#include "blindkernel/plane.hpp"

namespace blindkernel {

/// Side length of the kernel realized by the deep linear generator.
inline constexpr int kEstimatedKernelSize = 13;

/// A 2-D downscaling kernel with odd side lengths, so that a unique center
/// cell exists at (rows / 2, cols / 2).
class Kernel {
 public:
  Kernel() = default;
  /// Zero kernel. Throws ValidationError unless both sides are odd and positive.
  Kernel(int rows, int cols);
  /// Takes ownership of `weights`; same shape rules, values must be finite.
  explicit Kernel(Plane weights);

  /// Kernel with a single 1.0 at the center cell.
  static Kernel delta(int size);

  int rows() const { return static_cast<int>(weights_.rows()); }
  int cols() const { return static_cast<int>(weights_.cols()); }
  int center_row() const { return rows() / 2; }
  int center_col() const { return cols() / 2; }
  double sum() const { return weights_.sum(); }

  double operator()(int r, int c) const { return weights_(r, c); }
  double& operator()(int r, int c) { return weights_(r, c); }

  const Plane& weights() const { return weights_; }
  Plane& weights() { return weights_; }

  friend bool operator==(const Kernel& a, const Kernel& b) {
    return a.weights_.rows() == b.weights_.rows() &&
           a.weights_.cols() == b.weights_.cols() && a.weights_ == b.weights_;
  }

 private:
  Plane weights_;
};

}  // namespace blindkernel
