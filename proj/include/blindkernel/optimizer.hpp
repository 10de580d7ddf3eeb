#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace blindkernel {

/// ADAM with bias correction. State is allocated on the first step and
/// keyed by position, so every call must pass the same tensors in the same
/// order.
class Adam {
 public:
  Adam(double beta1, double beta2, double epsilon = 1e-8) : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(std::span<Eigen::VectorXd* const> params, std::span<const Eigen::VectorXd> grads, double lr);

  long steps() const { return steps_; }

 private:
  double beta1_;
  double beta2_;
  double epsilon_;
  long steps_ = 0;
  std::vector<Eigen::VectorXd> m_;
  std::vector<Eigen::VectorXd> v_;
};

}  // namespace blindkernel
