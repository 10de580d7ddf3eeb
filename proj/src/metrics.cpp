#include "blindkernel/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "blindkernel/errors.hpp"
#include "blindkernel/kernel_algebra.hpp"

namespace blindkernel {

double psnr(const Plane& a, const Plane& b, int border) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("psnr: image sizes differ");
  const Eigen::Index h = a.rows() - 2 * border;
  const Eigen::Index w = a.cols() - 2 * border;
  if (border < 0 || h <= 0 || w <= 0) throw ValidationError("psnr: border crop leaves no pixels");
  const double mse =
      (a.block(border, border, h, w) - b.block(border, border, h, w)).squaredNorm() / static_cast<double>(h * w);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

Plane ssim_window() {
  constexpr int kSide = 11;
  constexpr double kSigma = 1.5;
  Plane w(kSide, kSide);
  for (int r = 0; r < kSide; ++r)
    for (int c = 0; c < kSide; ++c) {
      const double dr = r - kSide / 2;
      const double dc = c - kSide / 2;
      w(r, c) = std::exp(-(dr * dr + dc * dc) / (2 * kSigma * kSigma));
    }
  return w / w.sum();
}

double ssim(const Plane& a, const Plane& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("ssim: image sizes differ");
  if (a.rows() < 11 || a.cols() < 11) throw ValidationError("ssim: images must be at least 11x11");
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const Plane w = ssim_window();
  const Eigen::ArrayXXd mu_a = correlate_valid(a, w).array();
  const Eigen::ArrayXXd mu_b = correlate_valid(b, w).array();
  const Eigen::ArrayXXd aa = correlate_valid(a.cwiseProduct(a), w).array() - mu_a * mu_a;
  const Eigen::ArrayXXd bb = correlate_valid(b.cwiseProduct(b), w).array() - mu_b * mu_b;
  const Eigen::ArrayXXd ab = correlate_valid(a.cwiseProduct(b), w).array() - mu_a * mu_b;
  const Eigen::ArrayXXd map = ((2 * mu_a * mu_b + kC1) * (2 * ab + kC2)) /
                              ((mu_a * mu_a + mu_b * mu_b + kC1) * (aa + bb + kC2));
  return map.mean();
}

}  // namespace blindkernel
