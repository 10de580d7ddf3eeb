#include "blindkernel/kernel_algebra.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "blindkernel/errors.hpp"
#include "blindkernel/metrics.hpp"
#include "blindkernel/procedural.hpp"

namespace blindkernel {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_same_shape(const Kernel& k, const Plane& mask) {
  if (k.rows() != mask.rows() || k.cols() != mask.cols()) {
    throw ValidationError("mask shape does not match kernel shape");
  }
}

}  // namespace

Kernel normalize(const Kernel& k) {
  const double total = k.sum();
  if (total == 0.0 || !std::isfinite(total)) throw DegenerateKernelError("cannot normalize a zero-sum kernel");
  return Kernel(Plane(k.weights() / total));
}

Plane boundary_mask(int rows, int cols) {
  const int cr = rows / 2;
  const int cc = cols / 2;
  const int dmax = std::max(cr, cc);
  Plane m = Plane::Zero(rows, cols);
  if (dmax == 0) return m;
  const double denom = std::expm1(static_cast<double>(dmax));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int d = std::max(std::abs(r - cr), std::abs(c - cc));
      m(r, c) = std::expm1(static_cast<double>(d)) / denom;
    }
  }
  return m;
}

double loss_sum_to_1(const Kernel& k) { return std::abs(1.0 - k.sum()); }

Plane grad_sum_to_1(const Kernel& k) {
  return Plane::Constant(k.rows(), k.cols(), -sign(1.0 - k.sum()));
}

double loss_boundaries(const Kernel& k, const Plane& mask) {
  require_same_shape(k, mask);
  return k.weights().cwiseProduct(mask).cwiseAbs().sum();
}

Plane grad_boundaries(const Kernel& k, const Plane& mask) {
  require_same_shape(k, mask);
  return k.weights().unaryExpr([](double v) { return sign(v); }).cwiseProduct(mask.cwiseAbs());
}

double loss_sparse(const Kernel& k) { return k.weights().cwiseAbs().cwiseSqrt().sum(); }

double loss_sparse_smooth(const Kernel& k) {
  return k.weights().unaryExpr([](double v) { return std::pow(v * v + kSparseEpsilon, 0.25); }).sum();
}

Plane grad_sparse_smooth(const Kernel& k) {
  // d/dv (v^2 + eps)^(1/4) = v / (2 (v^2 + eps)^(3/4))
  return k.weights().unaryExpr(
      [](double v) { return v / (2.0 * std::pow(v * v + kSparseEpsilon, 0.75)); });
}

namespace {

struct Centroid {
  double total = 0.0;
  double row = 0.0;
  double col = 0.0;
};

Centroid centroid(const Kernel& k) {
  Centroid c;
  c.total = k.sum();
  if (std::abs(c.total) < 1e-8) throw DegenerateKernelError("kernel mass too small for a centroid");
  for (int r = 0; r < k.rows(); ++r) {
    for (int col = 0; col < k.cols(); ++col) {
      c.row += k(r, col) * r;
      c.col += k(r, col) * col;
    }
  }
  c.row /= c.total;
  c.col /= c.total;
  return c;
}

}  // namespace

double loss_center(const Kernel& k) {
  const Centroid c = centroid(k);
  return std::hypot(k.center_row() - c.row, k.center_col() - c.col);
}

Plane grad_center(const Kernel& k) {
  const Centroid c = centroid(k);
  const double er = k.center_row() - c.row;
  const double ec = k.center_col() - c.col;
  const double dist = std::hypot(er, ec);
  Plane g = Plane::Zero(k.rows(), k.cols());
  if (dist == 0.0) return g;
  // centroid_row = sum(k r) / sum(k): d/dk_ij = (i - centroid_row) / sum(k)
  for (int r = 0; r < k.rows(); ++r) {
    for (int col = 0; col < k.cols(); ++col) {
      const double dr = (r - c.row) / c.total;
      const double dc = (col - c.col) / c.total;
      g(r, col) = -(er * dr + ec * dc) / dist;
    }
  }
  return g;
}

RegularizationTerms regularization_terms(const Kernel& k, const RegularizationWeights& w,
                                         bool with_grad) {
  RegularizationTerms t;
  const Plane mask = boundary_mask(k.rows(), k.cols());
  t.sum_to_1 = loss_sum_to_1(k);
  t.boundaries = loss_boundaries(k, mask);
  t.sparse = loss_sparse(k);
  t.sparse_smooth = loss_sparse_smooth(k);
  if (w.center != 0.0) t.center = loss_center(k);
  const double shared = w.sum_to_1 * t.sum_to_1 + w.boundaries * t.boundaries + w.center * t.center;
  t.total = shared + w.sparse * t.sparse;
  t.total_smooth = shared + w.sparse * t.sparse_smooth;
  if (with_grad) {
    t.grad = w.sum_to_1 * grad_sum_to_1(k) + w.boundaries * grad_boundaries(k, mask) +
             w.sparse * grad_sparse_smooth(k);
    if (w.center != 0.0) t.grad += w.center * grad_center(k);
  }
  return t;
}

// --- Scale composition --------------------------------------------------------

Kernel dilate(const Kernel& k, int s) {
  if (s < 1) throw ValidationError("dilation factor must be positive");
  Kernel out(s * (k.rows() - 1) + 1, s * (k.cols() - 1) + 1);
  for (int r = 0; r < k.rows(); ++r)
    for (int c = 0; c < k.cols(); ++c) out(s * r, s * c) = k(r, c);
  return out;
}

Plane convolve_full(const Plane& a, const Plane& b) {
  Plane out = Plane::Zero(a.rows() + b.rows() - 1, a.cols() + b.cols() - 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      if (a(r, c) != 0.0) out.block(r, c, b.rows(), b.cols()) += a(r, c) * b;
  return out;
}

Kernel compose_scale(const Kernel& k2) {
  if (k2.weights().size() == 0) throw ValidationError("empty kernel");
  return Kernel(convolve_full(dilate(k2, 2).weights(), k2.weights()));
}

// --- Synthetic anisotropic Gaussians -----------------------------------------

void validate(const GaussianSpec& spec) {
  if (!(spec.lambda1 >= 0.6 && spec.lambda1 <= 5.0 && spec.lambda2 >= 0.6 && spec.lambda2 <= 5.0)) {
    throw ValidationError("gaussian axis lengths must lie in [0.6, 5]");
  }
  if (!(std::abs(spec.theta) <= std::numbers::pi)) throw ValidationError("theta must lie in [-pi, pi]");
  if (!(spec.noise_amplitude >= 0.0 && spec.noise_amplitude <= 0.25)) {
    throw ValidationError("noise amplitude must lie in [0, 0.25]");
  }
  if (spec.size <= 0 || spec.size % 2 == 0) throw ValidationError("gaussian size must be odd");
}

Plane gaussian_cells(const GaussianSpec& spec) {
  validate(spec);
  const double ct = std::cos(spec.theta);
  const double st = std::sin(spec.theta);
  const double l1 = spec.lambda1 * spec.lambda1;
  const double l2 = spec.lambda2 * spec.lambda2;
  // Sigma = R diag(l1, l2) R^T; its inverse is R diag(1/l1, 1/l2) R^T.
  const double ixx = ct * ct / l1 + st * st / l2;
  const double iyy = st * st / l1 + ct * ct / l2;
  const double ixy = ct * st * (1.0 / l1 - 1.0 / l2);
  const int half = spec.size / 2;
  Plane cells(spec.size, spec.size);
  for (int r = 0; r < spec.size; ++r) {
    const double y = r - half;
    for (int c = 0; c < spec.size; ++c) {
      const double x = c - half;
      cells(r, c) = std::exp(-0.5 * (ixx * x * x + 2.0 * ixy * x * y + iyy * y * y));
    }
  }
  return cells;
}

Plane apply_multiplicative_noise(const Plane& cells, double amplitude, std::mt19937_64& rng) {
  if (amplitude == 0.0) return cells;
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  Plane out = cells;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] *= 1.0 + u(rng);
  return out;
}

Kernel synth_gaussian(const GaussianSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return normalize(Kernel(apply_multiplicative_noise(gaussian_cells(spec), spec.noise_amplitude, rng)));
}

// --- Distances -----------------------------------------------------------------

Plane place_centered(const Kernel& k, int rows, int cols, int dr, int dc) {
  Plane out = Plane::Zero(rows, cols);
  const int off_r = rows / 2 - k.center_row() + dr;
  const int off_c = cols / 2 - k.center_col() + dc;
  for (int r = 0; r < k.rows(); ++r) {
    const int rr = r + off_r;
    if (rr < 0 || rr >= rows) continue;
    for (int c = 0; c < k.cols(); ++c) {
      const int cc = c + off_c;
      if (cc >= 0 && cc < cols) out(rr, cc) = k(r, c);
    }
  }
  return out;
}

KernelDistance kernel_distance(const Kernel& a, const Kernel& b, int border) {
  const int side = std::max({a.rows(), a.cols(), b.rows(), b.cols()});
  const int reach = side / 2;
  const int canvas = side + 2 * reach;
  const Plane pa = place_centered(a, canvas, canvas);

  // Visit shifts by increasing |dr| + |dc| so that ties resolve to the
  // smallest move.
  std::vector<std::pair<int, int>> shifts;
  for (int dr = -reach; dr <= reach; ++dr)
    for (int dc = -reach; dc <= reach; ++dc) shifts.emplace_back(dr, dc);
  std::stable_sort(shifts.begin(), shifts.end(), [](const auto& x, const auto& y) {
    return std::abs(x.first) + std::abs(x.second) < std::abs(y.first) + std::abs(y.second);
  });

  KernelDistance best;
  best.l1 = std::numeric_limits<double>::infinity();
  Plane best_b;
  for (const auto& [dr, dc] : shifts) {
    Plane pb = place_centered(b, canvas, canvas, dr, dc);
    const double l1 = (pa - pb).cwiseAbs().sum();
    if (l1 < best.l1) {
      best.l1 = l1;
      best.shift_row = dr;
      best.shift_col = dc;
      best_b = std::move(pb);
    }
  }
  const ImagePlane& ref = reference_test_image();
  best.image_psnr = psnr(downscale_with_kernel(ref, pa, 2), downscale_with_kernel(ref, best_b, 2), border);
  return best;
}

// --- Serialization -------------------------------------------------------------

void write_kernel_text(const Kernel& k, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (int r = 0; r < k.rows(); ++r) {
    for (int c = 0; c < k.cols(); ++c) out << (c ? " " : "") << k(r, c);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Kernel read_kernel_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    std::string token;
    while (ss >> token) {
      // strtod rather than stod: subnormal weights must not be rejected.
      char* end = nullptr;
      const double v = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size()) throw IoError("bad number '" + token + "' in " + path.string());
      row.push_back(v);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("empty kernel file " + path.string());
  Plane w(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw IoError("ragged kernel file " + path.string());
    for (std::size_t c = 0; c < rows[r].size(); ++c) w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return Kernel(std::move(w));
}

Kernel read_kernel(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  if (is_raw_file(path)) return Kernel(read_raw(path));
  return read_kernel_text(path);
}

}  // namespace blindkernel
