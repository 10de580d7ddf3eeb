#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "blindkernel/image.hpp"
#include "blindkernel/kernel.hpp"

namespace blindkernel {

/// Convolution filter bank of shape (out, in, height, width), stored
/// contiguously in that order.
struct FilterBank {
  int out = 0;
  int in = 0;
  int height = 0;
  int width = 0;
  Eigen::VectorXd weights;

  FilterBank() = default;
  FilterBank(int out_ch, int in_ch, int h, int w)
      : out(out_ch), in(in_ch), height(h), width(w), weights(Eigen::VectorXd::Zero(Eigen::Index{out_ch} * in_ch * h * w)) {}

  std::array<int, 4> shape() const { return {out, in, height, width}; }
  Eigen::Index index(int o, int c, int a, int b) const {
    return ((static_cast<Eigen::Index>(o) * in + c) * height + a) * width + b;
  }
  double& at(int o, int c, int a, int b) { return weights[index(o, c, a, b)]; }
  double at(int o, int c, int a, int b) const { return weights[index(o, c, a, b)]; }

  /// (out) x (in * height * width) view.
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> matrix() const {
    return {weights.data(), out, Eigen::Index{in} * height * width};
  }
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> matrix() {
    return {weights.data(), out, Eigen::Index{in} * height * width};
  }
};

/// Parameters of a bias-free, activation-free convolutional downscaler. The
/// deep variant has six banks (7x7, 5x5, 3x3, then three 1x1; 64 hidden
/// channels); the single-layer variant has one 13x13 bank.
struct GeneratorParams {
  std::vector<FilterBank> layers;

  /// Side of the composite kernel: 1 + sum(side - 1).
  int receptive_field() const;
  std::size_t parameter_count() const;
};

inline constexpr int kGeneratorScale = 2;
inline constexpr int kGeneratorChannels = 64;

/// The six layer shapes of the deep generator.
std::vector<std::array<int, 4>> deep_generator_shapes();

/// Normal(0, fan_in^-1/2) filters; the final bank is then rescaled so the
/// composite kernel sums to one.
GeneratorParams init_generator(std::uint64_t seed);

/// One 13x13 filter applied with stride 2, normalized to unit sum at init.
GeneratorParams single_layer_generator(std::uint64_t seed);

/// Runs the filter stack as a network: valid cross-correlation layer by
/// layer, channels summed, then keeps even rows and columns. Throws
/// ValidationError if the crop is smaller than receptive field + 1.
ImagePlane generator_forward(const GeneratorParams& p, const ImagePlane& crop);

/// Collapses the stack into the single kernel K it realizes, so that
/// generator_forward(p, x) == downscale_with_kernel(x, K, 2).
Kernel extract_kernel(const GeneratorParams& p);

/// Chain rule through extract_kernel: gradient of a scalar loss with
/// respect to every filter, given its gradient with respect to the kernel.
GeneratorParams extract_kernel_backward(const GeneratorParams& p, const Plane& kernel_grad);

/// Gradient of a loss with respect to the kernel when the loss depends on
/// downscale_with_kernel(x, K, s) through `output_grad`.
Plane downscale_kernel_grad(const ImagePlane& x, const Plane& output_grad, int kernel_side, int scale);

/// Raw float parameter blob (1 x N) plus a JSON manifest listing the 4-tuple
/// layer shapes.
void save_generator(const GeneratorParams& p, const std::filesystem::path& raw_path,
                    const std::filesystem::path& manifest_path);
GeneratorParams load_generator(const std::filesystem::path& raw_path,
                               const std::filesystem::path& manifest_path);

}  // namespace blindkernel
