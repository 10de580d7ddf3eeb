#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "blindkernel/errors.hpp"
#include "blindkernel/generator.hpp"
#include "blindkernel/kernel_algebra.hpp"
#include "test_util.hpp"

using namespace blindkernel;

namespace {

// Plain full convolution, written out independently of the library.
Plane full_conv(const Plane& a, const Plane& b) {
  Plane out = Plane::Zero(a.rows() + b.rows() - 1, a.cols() + b.cols() - 1);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      for (int k = 0; k < b.rows(); ++k)
        for (int l = 0; l < b.cols(); ++l) out(i + k, j + l) += a(i, j) * b(k, l);
  return out;
}

GeneratorParams zero_deep() {
  GeneratorParams p;
  for (const auto& s : deep_generator_shapes()) p.layers.emplace_back(s[0], s[1], s[2], s[3]);
  return p;
}

// Embeds any 13x13 target: layer 1 routes each 7x7 offset u to its own
// channel, layer 2 adds a 5x5 offset a, layer 3 a 3x3 offset b, and every
// target cell v is reached by exactly one path u + a + b = v.
GeneratorParams embed(const Plane& t) {
  GeneratorParams p = zero_deep();
  for (int ur = 0; ur < 7; ++ur)
    for (int uc = 0; uc < 7; ++uc) p.layers[0].at(7 * ur + uc, 0, ur, uc) = 1.0;
  for (int br = 0; br < 3; ++br)
    for (int bc = 0; bc < 3; ++bc) p.layers[2].at(0, 3 * br + bc, br, bc) = 1.0;
  for (int vr = 0; vr < 13; ++vr)
    for (int vc = 0; vc < 13; ++vc) {
      const int ur = std::min(vr, 6), uc = std::min(vc, 6);
      const int wr = vr - ur, wc = vc - uc;
      const int ar = std::min(wr, 4), ac = std::min(wc, 4);
      const int br = wr - ar, bc = wc - ac;
      p.layers[1].at(3 * br + bc, 7 * ur + uc, ar, ac) = t(vr, vc);
    }
  for (int l = 3; l < 5; ++l)
    for (int c = 0; c < kGeneratorChannels; ++c) p.layers[static_cast<std::size_t>(l)].at(c, c, 0, 0) = 1.0;
  p.layers[5].at(0, 0, 0, 0) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("deep generator structure") {
  const GeneratorParams p = init_generator(3);
  REQUIRE(p.layers.size() == 6);
  const std::vector<std::array<int, 4>> expected{
      {64, 1, 7, 7}, {64, 64, 5, 5}, {64, 64, 3, 3}, {64, 64, 1, 1}, {64, 64, 1, 1}, {1, 64, 1, 1}};
  for (std::size_t i = 0; i < 6; ++i) CHECK(p.layers[i].shape() == expected[i]);
  CHECK(p.receptive_field() == 13);
  CHECK(p.parameter_count() == 64u * 49 + 64u * 64 * 25 + 64u * 64 * 9 + 2u * 64 * 64 + 64u);
  CHECK(extract_kernel(p).rows() == 13);
  CHECK(extract_kernel(p).cols() == 13);
}

TEST_CASE("init_generator is deterministic, unit sum and scaled by fan-in") {
  const GeneratorParams a = init_generator(42);
  const GeneratorParams b = init_generator(42);
  for (std::size_t i = 0; i < a.layers.size(); ++i) CHECK(a.layers[i].weights == b.layers[i].weights);
  CHECK(init_generator(43).layers[0].weights != a.layers[0].weights);
  for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(std::abs(extract_kernel(init_generator(seed)).sum() - 1.0) < 0.1);
  // Hidden banks keep the N(0, fan_in^-1/2) draw.
  const auto& l2 = a.layers[1];
  const double fan_in = 64.0 * 25.0;
  const double var = l2.weights.squaredNorm() / static_cast<double>(l2.weights.size());
  CHECK(var == doctest::Approx(1.0 / fan_in).epsilon(0.05));
}

TEST_CASE("generator_forward shapes and errors") {
  std::mt19937_64 rng(1);
  const GeneratorParams p = init_generator(1);
  CHECK(generator_forward(p, testutil::random_image(64, 64, rng)).height() == 26);
  CHECK(generator_forward(p, testutil::random_image(64, 64, rng)).width() == 26);
  CHECK(generator_forward(p, testutil::random_image(14, 14, rng)).height() == 1);
  CHECK_THROWS_AS(generator_forward(p, testutil::random_image(13, 13, rng)), ValidationError);
  CHECK_THROWS_AS(generator_forward(p, testutil::random_image(20, 24, rng)), ValidationError);
}

TEST_CASE("generator_forward is linear") {
  std::mt19937_64 rng(2);
  const GeneratorParams p = init_generator(2);
  const ImagePlane x = testutil::random_image(32, 32, rng);
  const ImagePlane y = testutil::random_image(32, 32, rng);
  const double a = 0.6, b = -2.1;
  const Plane lhs = generator_forward(p, ImagePlane(Plane(a * x.pixels() + b * y.pixels()))).pixels();
  const Plane rhs = a * generator_forward(p, x).pixels() + b * generator_forward(p, y).pixels();
  CHECK(testutil::max_abs_diff(lhs, rhs) < 1e-6);
}

TEST_CASE("forward equals downscaling with the extracted kernel") {
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 10; seed < 13; ++seed) {
    const GeneratorParams p = init_generator(seed);
    const Kernel k = extract_kernel(p);
    for (int i = 0; i < 4; ++i) {
      const ImagePlane x = testutil::random_image(32, 32, rng);
      CHECK(testutil::max_abs_diff(generator_forward(p, x).pixels(), downscale_with_kernel(x, k, 2).pixels()) < 1e-6);
    }
  }
}

TEST_CASE("single-path parameters compose the three spatial filters") {
  std::mt19937_64 rng(4);
  GeneratorParams p = zero_deep();
  const Plane f1 = testutil::random_plane(7, 7, rng, -1, 1);
  const Plane f2 = testutil::random_plane(5, 5, rng, -1, 1);
  const Plane f3 = testutil::random_plane(3, 3, rng, -1, 1);
  for (int a = 0; a < 7; ++a)
    for (int b = 0; b < 7; ++b) p.layers[0].at(0, 0, a, b) = f1(a, b);
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) p.layers[1].at(0, 0, a, b) = f2(a, b);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) p.layers[2].at(0, 0, a, b) = f3(a, b);
  for (std::size_t l = 3; l < 6; ++l) p.layers[l].at(0, 0, 0, 0) = 1.0;
  const Plane oracle = full_conv(full_conv(f1, f2), f3);
  CHECK(testutil::max_abs_diff(extract_kernel(p).weights(), oracle) < 1e-12);
  // And the network agrees with that kernel.
  const ImagePlane x = testutil::random_image(30, 30, rng);
  CHECK(testutil::max_abs_diff(generator_forward(p, x).pixels(), downscale_with_kernel(x, oracle, 2).pixels()) < 1e-10);
}

TEST_CASE("any 13x13 kernel is reachable") {
  std::mt19937_64 rng(5);
  const Plane t = testutil::random_plane(13, 13, rng, -1, 1);
  const GeneratorParams p = embed(t);
  CHECK(testutil::max_abs_diff(extract_kernel(p).weights(), t) < 1e-9);
  const ImagePlane x = testutil::random_image(40, 40, rng);
  CHECK(testutil::max_abs_diff(generator_forward(p, x).pixels(), downscale_with_kernel(x, t, 2).pixels()) < 1e-9);
}

TEST_CASE("single-layer generator") {
  const GeneratorParams p = single_layer_generator(6);
  REQUIRE(p.layers.size() == 1);
  CHECK(p.layers[0].shape() == std::array<int, 4>{1, 1, 13, 13});
  const Kernel k = extract_kernel(p);
  for (int a = 0; a < 13; ++a)
    for (int b = 0; b < 13; ++b) CHECK(k(a, b) == p.layers[0].at(0, 0, a, b));
  CHECK(std::abs(k.sum() - 1.0) < 1e-12);
  std::mt19937_64 rng(6);
  const ImagePlane x = testutil::random_image(32, 32, rng);
  CHECK(testutil::max_abs_diff(generator_forward(p, x).pixels(), downscale_with_kernel(x, k, 2).pixels()) < 1e-12);
}

TEST_CASE("gradient of loss_sum_to_1 through extraction matches finite differences") {
  std::mt19937_64 rng(7);
  GeneratorParams p = init_generator(7);
  // Move away from the kink at sum == 1.
  p.layers[5].weights *= 1.3;
  const Kernel k = extract_kernel(p);
  const GeneratorParams g = extract_kernel_backward(p, grad_sum_to_1(k));
  std::uniform_int_distribution<int> layer(0, 5);
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto l = static_cast<std::size_t>(layer(rng));
    std::uniform_int_distribution<Eigen::Index> idx(0, p.layers[l].weights.size() - 1);
    const Eigen::Index i = idx(rng);
    const double numeric = testutil::central_difference(
        [&] { return loss_sum_to_1(extract_kernel(p)); }, p.layers[l].weights[i], 1e-6);
    worst = std::max(worst, testutil::relative_error(g.layers[l].weights[i], numeric, 1e-7));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("extract_kernel_backward is the adjoint of extraction") {
  std::mt19937_64 rng(8);
  GeneratorParams p = init_generator(8);
  const Plane w = testutil::random_plane(13, 13, rng, -1, 1);
  const GeneratorParams g = extract_kernel_backward(p, w);
  double worst = 0.0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (int trial = 0; trial < 6; ++trial) {
      std::uniform_int_distribution<Eigen::Index> idx(0, p.layers[l].weights.size() - 1);
      const Eigen::Index i = idx(rng);
      const double numeric = testutil::central_difference(
          [&] { return extract_kernel(p).weights().cwiseProduct(w).sum(); }, p.layers[l].weights[i], 1e-5);
      worst = std::max(worst, testutil::relative_error(g.layers[l].weights[i], numeric, 1e-7));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("downscale_kernel_grad matches finite differences") {
  std::mt19937_64 rng(9);
  const ImagePlane x = testutil::random_image(21, 21, rng);
  Kernel k(testutil::random_plane(5, 5, rng));
  const int out_side = downscaled_size(21, 5, 2);
  const Plane up = testutil::random_plane(out_side, out_side, rng, -1, 1);
  const Plane g = downscale_kernel_grad(x, up, 5, 2);
  REQUIRE(g.rows() == 5);
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) {
      const double numeric = testutil::central_difference(
          [&] { return downscale_with_kernel(x, k, 2).pixels().cwiseProduct(up).sum(); }, k(a, b), 1e-6);
      CHECK(g(a, b) == doctest::Approx(numeric).epsilon(1e-6));
    }
}

TEST_CASE("generator parameters round-trip through disk") {
  const auto dir = testutil::scratch_dir("generator_io");
  const GeneratorParams p = init_generator(11);
  save_generator(p, dir / "g.rawf", dir / "g.json");
  const GeneratorParams q = load_generator(dir / "g.rawf", dir / "g.json");
  REQUIRE(q.layers.size() == 6);
  for (std::size_t l = 0; l < 6; ++l) {
    CHECK(q.layers[l].shape() == p.layers[l].shape());
    CHECK((q.layers[l].weights - p.layers[l].weights).cwiseAbs().maxCoeff() < 1e-6);
  }
  const auto manifest = nlohmann::json::parse(testutil::slurp(dir / "g.json"));
  CHECK(manifest.at("layers").size() == 6);
  CHECK(manifest.at("layers")[1] == nlohmann::json::array({64, 64, 5, 5}));
}
