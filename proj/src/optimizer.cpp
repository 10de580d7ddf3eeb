#include "blindkernel/optimizer.hpp"

#include <cmath>

#include "blindkernel/errors.hpp"

namespace blindkernel {

void Adam::step(std::span<Eigen::VectorXd* const> params, std::span<const Eigen::VectorXd> grads, double lr) {
  if (params.size() != grads.size()) throw ValidationError("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Eigen::VectorXd::Zero(p->size()));
      v_.push_back(Eigen::VectorXd::Zero(p->size()));
    }
  }
  if (m_.size() != params.size()) throw ValidationError("adam: parameter set changed between steps");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
    params[i]->array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + epsilon_);
  }
}

}  // namespace blindkernel
