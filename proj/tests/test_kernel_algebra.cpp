#include <doctest.h>

#include <cmath>
#include <numbers>

#include "blindkernel/errors.hpp"
#include "blindkernel/kernel_algebra.hpp"
#include "blindkernel/metrics.hpp"
#include "blindkernel/procedural.hpp"
#include "test_util.hpp"

using namespace blindkernel;

namespace {

Kernel delta_at(int side, int r, int c) {
  Kernel k(side, side);
  k(r, c) = 1.0;
  return k;
}

Kernel discrete_gaussian(int side, double sigma) {
  Plane p(side, side);
  const int h = side / 2;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) p(r, c) = std::exp(-((r - h) * (r - h) + (c - h) * (c - h)) / (2 * sigma * sigma));
  return Kernel(Plane(p / p.sum()));
}

struct Moments {
  double row_mean, col_mean, row_var, col_var;
};

Moments moments(const Kernel& k) {
  Moments m{0, 0, 0, 0};
  const double total = k.sum();
  for (int r = 0; r < k.rows(); ++r)
    for (int c = 0; c < k.cols(); ++c) {
      m.row_mean += k(r, c) * r / total;
      m.col_mean += k(r, c) * c / total;
    }
  for (int r = 0; r < k.rows(); ++r)
    for (int c = 0; c < k.cols(); ++c) {
      m.row_var += k(r, c) * (r - m.row_mean) * (r - m.row_mean) / total;
      m.col_var += k(r, c) * (c - m.col_mean) * (c - m.col_mean) / total;
    }
  return m;
}

// Checks every cell of an analytic gradient against central differences.
void check_gradient(Kernel k, const std::function<double(const Kernel&)>& f, const Plane& grad, double tol,
                    double h = 1e-6) {
  double worst = 0.0;
  for (int r = 0; r < k.rows(); ++r)
    for (int c = 0; c < k.cols(); ++c) {
      const double numeric = testutil::central_difference([&] { return f(k); }, k(r, c), h);
      worst = std::max(worst, testutil::relative_error(grad(r, c), numeric, 1e-6));
    }
  CHECK(worst <= tol);
}

}  // namespace

TEST_CASE("normalize") {
  const Kernel ones(Plane::Ones(3, 3));
  const Kernel n = normalize(ones);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(n(r, c) == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  std::mt19937_64 rng(1);
  const Kernel u = testutil::random_unit_kernel(7, rng);
  CHECK(testutil::max_abs_diff(normalize(u).weights(), u.weights()) < 1e-12);
  const Kernel twice(Plane(2.0 * u.weights()));
  CHECK(testutil::max_abs_diff(normalize(twice).weights(), u.weights()) < 1e-15);
  CHECK(std::abs(normalize(Kernel(testutil::random_plane(9, 9, rng, -0.2, 1.0))).sum() - 1.0) < 1e-9);
  CHECK_THROWS_AS(normalize(Kernel(5, 5)), DegenerateKernelError);
}

TEST_CASE("kernel shape rules") {
  CHECK_THROWS_AS(Kernel(4, 5), ValidationError);
  CHECK_THROWS_AS(Kernel(0, 1), ValidationError);
  Plane bad = Plane::Zero(3, 3);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(Kernel{bad}, ValidationError);
  const Kernel d = Kernel::delta(13);
  CHECK(d.center_row() == 6);
  CHECK(d(6, 6) == 1.0);
  CHECK(d.sum() == 1.0);
}

TEST_CASE("loss_sum_to_1") {
  std::mt19937_64 rng(2);
  CHECK(loss_sum_to_1(testutil::random_unit_kernel(5, rng)) == doctest::Approx(0.0).scale(1.0));
  CHECK(loss_sum_to_1(Kernel(13, 13)) == 1.0);
  Kernel k(3, 3);
  k(0, 0) = 1.3;
  CHECK(loss_sum_to_1(k) == doctest::Approx(0.3).epsilon(1e-14));
}

TEST_CASE("boundary mask") {
  const Plane m = boundary_mask(13, 13);
  CHECK(m(6, 6) == 0.0);
  for (auto [r, c] : {std::pair{0, 0}, {0, 12}, {12, 0}, {12, 12}}) CHECK(m(r, c) == doctest::Approx(1.0));
  for (int d = 1; d <= 6; ++d) {
    CHECK(m(6, 6 + d) > m(6, 6 + d - 1));
    CHECK(m(6 - d, 6 + d) == doctest::Approx(std::expm1(d) / std::expm1(6.0)));
  }
  CHECK(m.minCoeff() >= 0.0);
}

TEST_CASE("loss_boundaries") {
  const Plane m = boundary_mask(13, 13);
  CHECK(loss_boundaries(Kernel::delta(13), m) == 0.0);
  CHECK(loss_boundaries(delta_at(13, 0, 12), m) == doctest::Approx(1.0));
  Kernel corner(13, 13);
  corner(12, 0) = 0.37;
  CHECK(loss_boundaries(corner, m) == doctest::Approx(0.37));
  std::mt19937_64 rng(3);
  const Kernel k(testutil::random_plane(5, 5, rng, -1.0, 1.0));
  const Plane m5 = boundary_mask(5, 5);
  double oracle = 0.0;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) oracle += std::abs(k(r, c) * m5(r, c));
  CHECK(loss_boundaries(k, m5) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK_THROWS_AS(loss_boundaries(k, m), ValidationError);
}

TEST_CASE("loss_sparse and its smooth stand-in") {
  CHECK(loss_sparse(Kernel::delta(13)) == 1.0);
  CHECK(loss_sparse(Kernel(11, 11)) == 0.0);
  const Kernel uniform(Plane::Constant(11, 11, 1.0 / 121.0));
  double direct = 0.0;
  for (int r = 0; r < 11; ++r)
    for (int c = 0; c < 11; ++c) direct += std::sqrt(uniform(r, c));
  CHECK(loss_sparse(uniform) == doctest::Approx(11.0).epsilon(1e-13));
  CHECK(loss_sparse(uniform) == doctest::Approx(direct).epsilon(1e-12));
  // The stand-in differs from the exact term by at most eps^(1/4) per cell.
  std::mt19937_64 rng(4);
  const Kernel k(testutil::random_plane(9, 9, rng, -0.3, 0.3));
  CHECK(std::abs(loss_sparse_smooth(k) - loss_sparse(k)) <= 81 * std::pow(kSparseEpsilon, 0.25));
  CHECK(std::isfinite(grad_sparse_smooth(Kernel(3, 3))(1, 1)));
}

TEST_CASE("loss_center") {
  CHECK(loss_center(Kernel::delta(13)) == 0.0);
  CHECK(loss_center(delta_at(13, 6, 7)) == doctest::Approx(1.0));
  CHECK(loss_center(delta_at(13, 9, 2)) == doctest::Approx(5.0));
  std::mt19937_64 rng(5);
  const Kernel k(testutil::random_plane(7, 7, rng, 0.0, 1.0));
  double mass = 0.0, mr = 0.0, mc = 0.0;
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c) {
      mass += k(r, c);
      mr += k(r, c) * r;
      mc += k(r, c) * c;
    }
  CHECK(loss_center(k) == doctest::Approx(std::hypot(3.0 - mr / mass, 3.0 - mc / mass)).epsilon(1e-13));
  CHECK_THROWS_AS(loss_center(Kernel(13, 13)), DegenerateKernelError);
}

TEST_CASE("regularization composes the four terms") {
  CHECK(regularization(Kernel::delta(13)) == doctest::Approx(5.0));
  CHECK_THROWS_AS(regularization(Kernel(13, 13)), DegenerateKernelError);
  RegularizationWeights no_center;
  no_center.center = 0.0;
  CHECK(regularization(Kernel(13, 13), no_center) == doctest::Approx(0.5));

  const Kernel g = discrete_gaussian(13, 1.7);
  const double lb = loss_boundaries(g, boundary_mask(13, 13));
  const double ls = loss_sparse(g);
  CHECK(loss_center(g) < 1e-12);
  CHECK(regularization(g) == doctest::Approx(0.5 * lb + 5.0 * ls).epsilon(1e-12));

  std::mt19937_64 rng(6);
  const Kernel k(testutil::random_plane(13, 13, rng, -0.1, 0.3));
  const RegularizationWeights w{0.3, 0.7, 2.0, 1.5};
  const auto t = regularization_terms(k, w, false);
  CHECK(t.total == doctest::Approx(0.3 * loss_sum_to_1(k) + 0.7 * loss_boundaries(k, boundary_mask(13, 13)) +
                                   2.0 * loss_sparse(k) + 1.5 * loss_center(k)));
}

TEST_CASE("regularizer gradients match central differences") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    // Keep cells away from zero so |.| terms are differentiable.
    Plane p = testutil::random_plane(7, 7, rng, 0.05, 0.5);
    for (Eigen::Index i = 0; i < p.size(); i += 3) p.data()[i] = -p.data()[i];
    const Kernel k(p);
    const Plane m = boundary_mask(7, 7);
    check_gradient(k, [](const Kernel& x) { return loss_sum_to_1(x); }, grad_sum_to_1(k), 1e-4);
    check_gradient(k, [&m](const Kernel& x) { return loss_boundaries(x, m); }, grad_boundaries(k, m), 1e-4);
    check_gradient(k, [](const Kernel& x) { return loss_sparse_smooth(x); }, grad_sparse_smooth(k), 1e-4);
    check_gradient(k, [](const Kernel& x) { return loss_center(x); }, grad_center(k), 1e-4);
    const auto t = regularization_terms(k, {}, true);
    check_gradient(k, [](const Kernel& x) { return regularization_terms(x, {}, false).total_smooth; }, t.grad, 1e-4);
  }
}

TEST_CASE("dilate") {
  CHECK(dilate(Kernel::delta(1), 2) == Kernel::delta(1));
  CHECK(dilate(Kernel(13, 13), 2).rows() == 25);
  std::mt19937_64 rng(8);
  const Kernel k(testutil::random_plane(3, 3, rng));
  const Kernel d = dilate(k, 2);
  REQUIRE(d.rows() == 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) CHECK(d(r, c) == ((r % 2 == 0 && c % 2 == 0) ? k(r / 2, c / 2) : 0.0));
  CHECK(dilate(k, 3).rows() == 7);
}

TEST_CASE("compose_scale") {
  const Kernel d = compose_scale(Kernel::delta(13));
  CHECK(d.rows() == 37);
  CHECK(d == Kernel::delta(37));
  std::mt19937_64 rng(9);
  const Kernel k = testutil::random_unit_kernel(13, rng);
  const Kernel k4 = compose_scale(k);
  CHECK(k4.rows() == 37);
  CHECK(std::abs(k4.sum() - 1.0) < 1e-9);
  const Kernel h(Plane(0.5 * k.weights()));
  CHECK(compose_scale(h).sum() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("compose_scale: two x2 downscalings equal one x4 downscaling") {
  std::mt19937_64 rng(10);
  const Kernel g = discrete_gaussian(7, 1.0);
  const Kernel k4 = compose_scale(g);
  for (int trial = 0; trial < 3; ++trial) {
    const ImagePlane x = testutil::random_image(64, 64, rng);
    const ImagePlane twice = downscale_with_kernel(downscale_with_kernel(x, g, 2), g, 2);
    const ImagePlane once = downscale_with_kernel(x, k4, 4);
    REQUIRE(twice.height() == once.height());
    CHECK(testutil::max_abs_diff(twice.pixels(), once.pixels()) < 1e-6);
  }
  // An asymmetric kernel catches a flipped composition.
  const Kernel a = testutil::random_unit_kernel(5, rng);
  const ImagePlane x = testutil::random_image(64, 64, rng);
  CHECK(testutil::max_abs_diff(downscale_with_kernel(downscale_with_kernel(x, a, 2), a, 2).pixels(),
                               downscale_with_kernel(x, compose_scale(a), 4).pixels()) < 1e-6);
}

TEST_CASE("synth_gaussian") {
  std::mt19937_64 rng(11);
  GaussianSpec iso{2.0, 2.0, 0.0, 0.0, 11};
  const Kernel base = synth_gaussian(iso, 1);
  for (double theta : {0.3, -1.2, 2.9}) {
    iso.theta = theta;
    CHECK(testutil::max_abs_diff(synth_gaussian(iso, 1).weights(), base.weights()) < 1e-9);
  }
  std::uniform_real_distribution<double> len(0.6, 5.0);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  for (int i = 0; i < 20; ++i) {
    const GaussianSpec s{len(rng), len(rng), ang(rng), 0.25, 11};
    CHECK(std::abs(synth_gaussian(s, static_cast<std::uint64_t>(i)).sum() - 1.0) < 1e-9);
  }

  const Kernel wide = synth_gaussian({5.0, 0.6, 0.0, 0.0, 11}, 0);
  const Moments m = moments(wide);
  CHECK(m.row_mean == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(m.col_mean == doctest::Approx(5.0).epsilon(1e-12));
  // lambda1 runs along x (columns): spread along each row dwarfs spread down each column.
  CHECK(m.col_var > 20.0 * m.row_var);

  for (double theta : {0.4, -2.0}) {
    const Kernel a = synth_gaussian({3.1, 1.2, theta, 0.0, 11}, 0);
    const Kernel b = synth_gaussian({3.1, 1.2, theta + std::numbers::pi - 2 * std::numbers::pi * (theta > 0), 0.0, 11}, 0);
    CHECK(testutil::max_abs_diff(a.weights(), b.weights()) < 1e-9);
  }

  CHECK_THROWS_AS(synth_gaussian({0.5, 1.0, 0.0, 0.0, 11}, 0), ValidationError);
  CHECK_THROWS_AS(synth_gaussian({1.0, 1.0, 4.0, 0.0, 11}, 0), ValidationError);
  CHECK_THROWS_AS(synth_gaussian({1.0, 1.0, 0.0, 0.3, 11}, 0), ValidationError);
  CHECK_THROWS_AS(synth_gaussian({1.0, 1.0, 0.0, 0.0, 10}, 0), ValidationError);
}

TEST_CASE("gaussian cells follow the stated covariance") {
  const GaussianSpec s{2.3, 1.1, 0.7, 0.0, 11};
  const Plane cells = gaussian_cells(s);
  const double ct = std::cos(s.theta), st = std::sin(s.theta);
  // Sigma = R diag(l1^2, l2^2) R^T, inverted by the 2x2 formula.
  const double a = ct * ct * s.lambda1 * s.lambda1 + st * st * s.lambda2 * s.lambda2;
  const double d = st * st * s.lambda1 * s.lambda1 + ct * ct * s.lambda2 * s.lambda2;
  const double b = ct * st * (s.lambda1 * s.lambda1 - s.lambda2 * s.lambda2);
  const double det = a * d - b * b;
  for (int r = 0; r < 11; ++r)
    for (int c = 0; c < 11; ++c) {
      const double x = c - 5, y = r - 5;
      const double q = (d * x * x - 2 * b * x * y + a * y * y) / det;
      CHECK(cells(r, c) == doctest::Approx(std::exp(-0.5 * q)).epsilon(1e-12));
    }
}

TEST_CASE("multiplicative noise stays inside its envelope") {
  const GaussianSpec s{2.0, 3.5, 0.4, 0.25, 11};
  const Plane clean = gaussian_cells(s);
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    const Plane noisy = apply_multiplicative_noise(clean, 0.25, rng);
    CHECK(((noisy.array() >= 0.75 * clean.array()) && (noisy.array() <= 1.25 * clean.array())).all());
  }
}

TEST_CASE("kernel_distance") {
  std::mt19937_64 rng(13);
  const Kernel k = testutil::random_unit_kernel(13, rng);
  const KernelDistance same = kernel_distance(k, k);
  CHECK(same.l1 == 0.0);
  CHECK(same.image_psnr == kPsnrCap);

  const KernelDistance shifted = kernel_distance(Kernel::delta(13), delta_at(13, 6, 7));
  CHECK(shifted.l1 == 0.0);
  CHECK(shifted.shift_col == -1);
  CHECK(shifted.shift_row == 0);
  CHECK(shifted.image_psnr == kPsnrCap);

  // Different sizes are padded around a common center.
  const Kernel g1 = discrete_gaussian(11, 1.0);
  const Kernel g15 = discrete_gaussian(13, 1.5);
  const KernelDistance d = kernel_distance(g1, g15);
  double direct = 0.0;
  for (int r = 0; r < 13; ++r)
    for (int c = 0; c < 13; ++c) {
      const double a = (r >= 1 && r < 12 && c >= 1 && c < 12) ? g1(r - 1, c - 1) : 0.0;
      direct += std::abs(a - g15(r, c));
    }
  CHECK(d.shift_row == 0);
  CHECK(d.shift_col == 0);
  CHECK(d.l1 == doctest::Approx(direct).epsilon(1e-12));
  const ImagePlane& ref = reference_test_image();
  const Plane pa = place_centered(g1, 25, 25);
  const Plane pb = place_centered(g15, 25, 25);
  CHECK(d.image_psnr == doctest::Approx(psnr(downscale_with_kernel(ref, pa, 2), downscale_with_kernel(ref, pb, 2))));
  CHECK(d.image_psnr < 60.0);
  const KernelDistance cropped = kernel_distance(g1, g15, 4);
  CHECK(cropped.l1 == d.l1);
  CHECK(cropped.image_psnr ==
        doctest::Approx(psnr(downscale_with_kernel(ref, pa, 2), downscale_with_kernel(ref, pb, 2), 4)));
}

TEST_CASE("kernel_distance picks the L1-minimizing shift") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 5; ++trial) {
    const Kernel a = testutil::random_unit_kernel(7, rng);
    const Kernel b = testutil::random_unit_kernel(7, rng);
    double best = 1e300;
    for (int dr = -3; dr <= 3; ++dr)
      for (int dc = -3; dc <= 3; ++dc)
        best = std::min(best, (place_centered(a, 13, 13) - place_centered(b, 13, 13, dr, dc)).cwiseAbs().sum());
    CHECK(kernel_distance(a, b).l1 == doctest::Approx(best).epsilon(1e-14));
  }
}

TEST_CASE("kernel files round-trip exactly") {
  const auto dir = testutil::scratch_dir("kernel_io");
  std::mt19937_64 rng(15);
  Kernel k = testutil::random_unit_kernel(13, rng);
  k(0, 0) = 1e-310;
  k(1, 0) = -3.25e-7;
  write_kernel_text(k, dir / "k.txt");
  CHECK(read_kernel_text(dir / "k.txt") == k);
  CHECK(read_kernel(dir / "k.txt") == k);
  write_raw(k.weights(), dir / "k.rawf");
  const Kernel raw = read_kernel(dir / "k.rawf");
  CHECK(raw.rows() == 13);
  CHECK(std::abs(raw(5, 5) - k(5, 5)) < 1e-7);
  CHECK_THROWS_AS(read_kernel(dir / "none.txt"), IoError);
  {
    std::ofstream bad(dir / "ragged.txt");
    bad << "1 2 3\n4 5\n6 7 8\n";
  }
  CHECK_THROWS_AS(read_kernel_text(dir / "ragged.txt"), IoError);
  {
    std::ofstream bad(dir / "word.txt");
    bad << "1 x 3\n";
  }
  CHECK_THROWS_AS(read_kernel_text(dir / "word.txt"), IoError);
}
