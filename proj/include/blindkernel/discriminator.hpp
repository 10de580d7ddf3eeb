#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "blindkernel/generator.hpp"
#include "blindkernel/image.hpp"

namespace blindkernel {

inline constexpr int kDiscriminatorChannels = 64;
inline constexpr int kDiscriminatorFirstSide = 7;
inline constexpr int kDiscriminatorHiddenBlocks = 5;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// 1x1 block with spectral norm, batch norm and ReLU.
struct HiddenBlock {
  FilterBank conv;              // (64, 64, 1, 1)
  Eigen::VectorXd gamma;        // batch-norm scale
  Eigen::VectorXd beta;         // batch-norm shift
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  Eigen::VectorXd u;            // left power-iteration vector (out)
  Eigen::VectorXd v;            // right power-iteration vector (in*h*w)
};

/// Seven blocks: a 7x7 convolution (1 -> 64, zero padding 3), five hidden
/// 1x1 blocks (64 -> 64) and a final 1x1 convolution (64 -> 1) with bias
/// followed by a sigmoid.
struct DiscriminatorParams {
  FilterBank first;
  std::array<HiddenBlock, kDiscriminatorHiddenBlocks> hidden;
  FilterBank last;
  Eigen::VectorXd last_bias;  // size 1

  /// Learnable tensors in a fixed order (first, per block conv/gamma/beta,
  /// last, last_bias); running statistics and power vectors are excluded.
  std::vector<Eigen::VectorXd*> trainable();
  std::vector<const Eigen::VectorXd*> trainable() const;
};

/// Per-pixel realness map, same size as the input crop, values in [0, 1].
using DMap = Plane;

enum class Mode { kTraining, kEvaluation };

DiscriminatorParams init_discriminator(std::uint64_t seed);

/// Intermediate values of one forward pass, consumed by the backward pass.
struct DiscriminatorTape {
  int height = 0;
  int width = 0;
  Mode mode = Mode::kEvaluation;
  Eigen::MatrixXd columns;  // 49 x N im2col of the padded input
  std::vector<Eigen::MatrixXd> inputs;       // block inputs (64 x N), per hidden block
  std::vector<Eigen::MatrixXd> normalized;   // x-hat per hidden block
  std::vector<Eigen::VectorXd> inv_std;      // per hidden block
  std::vector<Eigen::MatrixXd> activations;  // post-ReLU outputs, per hidden block
  std::vector<Eigen::MatrixXd> sn_weights;   // W / sigma per hidden block
  std::vector<double> sigma;
  std::vector<Eigen::VectorXd> sn_u, sn_v;
  Eigen::RowVectorXd output;  // sigmoid output, 1 x N
};

/// Forward pass. In training mode the hidden blocks run one power iteration
/// (updating u, v) and normalize with batch statistics (updating the running
/// estimates); in evaluation mode nothing in `p` changes. Throws
/// ValidationError for crops smaller than 7x7.
DMap discriminator_forward(DiscriminatorParams& p, const Plane& crop, Mode mode,
                           DiscriminatorTape* tape = nullptr);
/// Evaluation-mode forward on const parameters.
DMap discriminator_forward(const DiscriminatorParams& p, const Plane& crop);

struct DiscriminatorGradients {
  std::vector<Eigen::VectorXd> params;  // same order as trainable()
  Plane input;                          // d loss / d crop
};

/// Backpropagates d loss / d DMap. Parameter gradients are skipped when
/// `with_params` is false (used when only the input gradient is needed).
DiscriminatorGradients discriminator_backward(const DiscriminatorParams& p, const DiscriminatorTape& tape,
                                              const Plane& dmap_grad, bool with_params = true);

/// Estimated top singular value of `w` after `iterations` power-iteration
/// steps that update u (rows) and v (cols) in place. Returns w / (sigma + 1e-12).
Eigen::MatrixXd spectral_normalize(const Eigen::MatrixXd& w, Eigen::VectorXd& u, Eigen::VectorXd& v,
                                   int iterations, double* sigma_out = nullptr);

/// Raw floats of every tensor (trainable, running statistics and power
/// vectors) plus a JSON manifest of names and shapes.
void save_discriminator(const DiscriminatorParams& p, const std::filesystem::path& raw_path,
                        const std::filesystem::path& manifest_path);
DiscriminatorParams load_discriminator(const std::filesystem::path& raw_path,
                                       const std::filesystem::path& manifest_path);

}  // namespace blindkernel
