#pragma once

#include "blindkernel/image.hpp"

namespace blindkernel {

/// 10 log10(1 / MSE) for images in [0, 1], capped at kPsnrCap (100 dB).
/// `border` pixels are shaved from every side first. Throws ValidationError
/// on a size mismatch.
double psnr(const Plane& a, const Plane& b, int border = 0);
inline double psnr(const ImagePlane& a, const ImagePlane& b, int border = 0) {
  return psnr(a.pixels(), b.pixels(), border);
}

/// Mean SSIM over all valid positions of an 11x11 Gaussian window
/// (sigma 1.5) with C1 = 0.01^2 and C2 = 0.03^2. Needs sides >= 11.
double ssim(const Plane& a, const Plane& b);
inline double ssim(const ImagePlane& a, const ImagePlane& b) { return ssim(a.pixels(), b.pixels()); }

/// Normalized 11x11 Gaussian window used by ssim.
Plane ssim_window();

}  // namespace blindkernel
