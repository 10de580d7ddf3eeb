#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include "blindkernel/image.hpp"
#include "blindkernel/kernel.hpp"

namespace blindkernel {

/// Divides every weight by the total. Throws DegenerateKernelError when the
/// total is zero.
Kernel normalize(const Kernel& k);

// --- Regularization functionals ---------------------------------------------
//
// Every functional comes with its gradient with respect to the kernel cells.
// Where the functional has a kink the gradient returns the zero subgradient.

/// Mask that is 0 at the center, 1 at the corners and grows as
/// (e^d - 1) / (e^d_max - 1) with the Chebyshev distance d from the center.
Plane boundary_mask(int rows, int cols);

/// |1 - sum(k)|
double loss_sum_to_1(const Kernel& k);
Plane grad_sum_to_1(const Kernel& k);

/// sum |k_ij * m_ij|. Throws ValidationError when shapes differ.
double loss_boundaries(const Kernel& k, const Plane& mask);
Plane grad_boundaries(const Kernel& k, const Plane& mask);

/// Exact sum |k_ij|^(1/2), used for reporting.
double loss_sparse(const Kernel& k);
/// Smooth stand-in sum (k_ij^2 + eps)^(1/4) whose gradient is finite at 0.
inline constexpr double kSparseEpsilon = 1e-8;
double loss_sparse_smooth(const Kernel& k);
Plane grad_sparse_smooth(const Kernel& k);

/// Euclidean distance between the center cell (zero-based) and the
/// kernel's center of mass. Throws DegenerateKernelError if |sum| < 1e-8.
double loss_center(const Kernel& k);
Plane grad_center(const Kernel& k);

struct RegularizationWeights {
  double sum_to_1 = 0.5;
  double boundaries = 0.5;
  double sparse = 5.0;
  double center = 1.0;
};

struct RegularizationTerms {
  double sum_to_1 = 0.0;
  double boundaries = 0.0;
  double sparse = 0.0;         // exact
  double sparse_smooth = 0.0;  // differentiable stand-in
  double center = 0.0;
  double total = 0.0;         // weighted sum with the exact sparse term
  double total_smooth = 0.0;  // weighted sum with the smooth sparse term
  Plane grad;                 // gradient of total_smooth
};

/// Weighted sum of the four functionals. The gradient is only assembled when
/// `with_grad` is set; the center term is skipped entirely when its weight
/// is zero, so all-zero kernels are accepted in that case.
RegularizationTerms regularization_terms(const Kernel& k, const RegularizationWeights& w,
                                         bool with_grad = true);
inline double regularization(const Kernel& k, const RegularizationWeights& w = {}) {
  return regularization_terms(k, w, false).total;
}

// --- Scale composition --------------------------------------------------------

/// Spreads the cells of `k` onto a grid with stride `s`; output side is
/// s * (side - 1) + 1 and every cell off the stride lattice is zero.
Kernel dilate(const Kernel& k, int s = 2);

/// Kernel for x4 from a x2 kernel: the full (zero padded) convolution of k2
/// with its 2-dilated copy. Side grows from n to 3n - 2, and for every image
/// x, downscale(downscale(x, k2, 2), k2, 2) == downscale(x, k4, 4).
Kernel compose_scale(const Kernel& k2);

/// Full 2-D convolution (output side a + b - 1).
Plane convolve_full(const Plane& a, const Plane& b);

// --- Synthetic anisotropic Gaussians -----------------------------------------

struct GaussianSpec {
  double lambda1 = 1.0;  // std along the rotated x axis (pixels)
  double lambda2 = 1.0;  // std along the rotated y axis (pixels)
  double theta = 0.0;    // rotation, radians
  double noise_amplitude = 0.0;
  int size = 11;
};

/// Throws ValidationError if the spec violates its ranges.
void validate(const GaussianSpec& spec);

/// Noiseless, unnormalized cell values exp(-v^T S^-1 v / 2) on the integer
/// grid around the center, where v = (column offset, row offset) and
/// S = R(theta) diag(lambda1^2, lambda2^2) R(theta)^T.
Plane gaussian_cells(const GaussianSpec& spec);

/// Multiplies each cell by (1 + u), u ~ U(-a, a).
Plane apply_multiplicative_noise(const Plane& cells, double amplitude, std::mt19937_64& rng);

/// gaussian_cells -> multiplicative noise -> normalize.
Kernel synth_gaussian(const GaussianSpec& spec, std::uint64_t seed);

// --- Distances -----------------------------------------------------------------

/// Sentinel reported for identical inputs.
inline constexpr double kPsnrCap = 100.0;

struct KernelDistance {
  double l1 = 0.0;
  double image_psnr = kPsnrCap;
  int shift_row = 0;  // integer shift applied to b
  int shift_col = 0;
};

/// L1 distance after shifting b by the integer offset minimizing it, and
/// PSNR between x2 downscalings of the bundled reference image with a and
/// the aligned b. Both kernels are zero padded onto a common centered grid.
/// `border` pixels are shaved from the downscaled images before the PSNR.
KernelDistance kernel_distance(const Kernel& a, const Kernel& b, int border = 0);

/// `k` zero padded to `rows` x `cols` with centers aligned and then shifted
/// by (dr, dc); cells pushed off the canvas are dropped.
Plane place_centered(const Kernel& k, int rows, int cols, int dr = 0, int dc = 0);

// --- Serialization -------------------------------------------------------------

/// One row per line, whitespace separated, 17 significant digits.
void write_kernel_text(const Kernel& k, const std::filesystem::path& path);
Kernel read_kernel_text(const std::filesystem::path& path);

/// Reads either the text grid or the raw float format.
Kernel read_kernel(const std::filesystem::path& path);

}  // namespace blindkernel
