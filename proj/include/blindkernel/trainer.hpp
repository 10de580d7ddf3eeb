#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "blindkernel/discriminator.hpp"
#include "blindkernel/errors.hpp"
#include "blindkernel/generator.hpp"
#include "blindkernel/image.hpp"
#include "blindkernel/kernel_algebra.hpp"
#include "blindkernel/optimizer.hpp"

namespace blindkernel {

enum class GeneratorKind { kDeep, kSingleLayer };
enum class DLossKind { kL1, kMse };

struct TrainConfig {
  int iterations = 3000;
  double g_lr = 2e-4;
  double d_lr = 2e-4;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 750;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  RegularizationWeights reg_weights;
  int g_crop = 64;
  int d_crop = 32;
  int bootstrap_iters = 75;
  double bootstrap_weight = 5.0;
  double bootstrap_exit_threshold = 0.02;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  GeneratorKind generator = GeneratorKind::kDeep;
  DLossKind d_loss = DLossKind::kL1;
  /// When set, checkpoint kernels are written here as text grids.
  std::filesystem::path checkpoint_dir;
};

/// Throws ValidationError on non-positive sizes/rates or crops that are too
/// small for the networks.
void validate(const TrainConfig& cfg);

void to_json(nlohmann::json& j, const TrainConfig& cfg);
/// Missing keys keep the values already in `cfg`; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& cfg);

/// base * factor^floor(iteration / every), iteration counted from 0.
double learning_rate(double base, int iteration, const TrainConfig& cfg);

struct LossRecord {
  double g_loss = 0.0;       // adversarial + regularization + bootstrap
  double d_loss = 0.0;
  double reg = 0.0;          // regularization with the exact sparse term
  double adversarial = 0.0;
  double bootstrap = 0.0;    // weighted term, 0 once discarded
};

struct Checkpoint {
  int iteration = 0;  // number of completed iterations
  double kernel_sum = 0.0;
  double extraction_error = 0.0;  // max |network forward - kernel downscale|
  bool bootstrap_active = false;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int iteration, std::vector<LossRecord> trace)
      : Error("training diverged at iteration " + std::to_string(iteration)),
        iteration_(iteration),
        trace_(std::move(trace)) {}
  int iteration() const { return iteration_; }
  const std::vector<LossRecord>& trace() const { return trace_; }

 private:
  int iteration_;
  std::vector<LossRecord> trace_;
};

struct EstimationResult {
  Kernel kernel_x2;   // 13x13, post-processed
  Kernel kernel_x4;   // compose_scale(kernel_x2)
  Kernel raw_kernel;  // extracted kernel before post-processing
  std::vector<LossRecord> loss_trace;
  std::vector<Checkpoint> checkpoints;
  double final_regularization = 0.0;
  int iterations_run = 0;
  int bootstrap_exit_iteration = -1;  // -1 if the bootstrap never exited early
  std::uint64_t seed = 0;
  double runtime_seconds = 0.0;
};

// --- Crop sampling -------------------------------------------------------------

/// Sum of `map` over every size x size window; entry (r, c) is the window
/// with top-left corner (r, c). Computed with an integral image.
Plane window_sums(const Plane& map, int size);

/// Draws crop positions with probability proportional to the window sum of
/// a gradient map, falling back to uniform when the map is all zero.
class CropSampler {
 public:
  CropSampler(const Plane& grad_map, int size);
  CropSpec sample(std::mt19937_64& rng) const;
  /// Probability of each top-left position (rows x cols of valid positions).
  Plane probabilities() const;
  int size() const { return size_; }

 private:
  int size_;
  int positions_cols_;
  std::vector<double> cumulative_;
};

CropSpec sample_crop(const ImagePlane& img, int size, const Plane& grad_map, std::mt19937_64& rng);

// --- Objectives ----------------------------------------------------------------

struct DObjective {
  double loss = 0.0;
  std::vector<Eigen::VectorXd> grad;  // order of DiscriminatorParams::trainable()
};

/// mean|D(real) - 1| + mean|D(fake)| (or the squared variant).
DObjective d_objective(DiscriminatorParams& d, const Plane& real, const Plane& fake, Mode mode, DLossKind kind,
                       bool with_grad = true);

/// Generator output of a bicubic-aligned comparison: bicubic x2 of the crop
/// restricted to the pixels whose centers line up with the generator output.
Plane bootstrap_target(const ImagePlane& g_crop, int receptive_field, int output_side);

/// mean|g_out - target|
double bootstrap_distance(const Plane& g_out, const Plane& target);

struct GObjective {
  double total = 0.0;
  double adversarial = 0.0;
  RegularizationTerms reg;
  double bootstrap = 0.0;           // weighted
  double bootstrap_distance = 0.0;  // unweighted mean-abs distance
  Kernel kernel;
  GeneratorParams grad;
};

/// adversarial mean|D(G(x)) - 1| + R(K) (+ bootstrap when active). The
/// generator output is computed as downscale_with_kernel(x, K, 2), which
/// equals the network output. Uses the smooth sparse term for both the
/// value and the gradient.
GObjective g_objective(const GeneratorParams& g, DiscriminatorParams& d, Mode d_mode, const ImagePlane& g_crop,
                       const TrainConfig& cfg, bool bootstrap_active, bool with_grad = true);

// --- Training loop -------------------------------------------------------------

struct GStepResult {
  double g_loss = 0.0;
  double reg = 0.0;
  double adversarial = 0.0;
  double bootstrap = 0.0;
};

/// Test-time adversarial training on one image.
class AdversarialTrainer {
 public:
  AdversarialTrainer(const ImagePlane& img, const TrainConfig& cfg);

  /// One D update on a real crop and a generated crop; returns d_loss.
  double d_step();
  /// One G update; `iteration` drives the learning rate and bootstrap.
  GStepResult g_step();
  /// Runs the remaining iterations and post-processes the kernel.
  EstimationResult run();

  int iteration() const { return iteration_; }
  bool bootstrap_active() const { return bootstrap_active_; }
  GeneratorParams& generator() { return g_; }
  DiscriminatorParams& discriminator() { return d_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  ImagePlane generated(const ImagePlane& g_crop) const;
  void checkpoint(const ImagePlane& g_crop, std::vector<Checkpoint>& out) const;
  bool parameters_finite() const;

  const ImagePlane& img_;
  TrainConfig cfg_;
  GeneratorParams g_;
  DiscriminatorParams d_;
  Adam g_opt_;
  Adam d_opt_;
  CropSampler g_sampler_;
  CropSampler d_sampler_;
  std::mt19937_64 rng_;
  int iteration_ = 0;
  bool bootstrap_active_ = true;
  int bootstrap_exit_ = -1;
  ImagePlane last_g_crop_;
};

/// Clamps |v| < 1e-4 to zero, normalizes, moves the center of mass to the
/// center cell by the nearest integer shift and renormalizes.
Kernel postprocess_kernel(const Kernel& raw);

/// Whole estimation: deterministic for a fixed (img, cfg). Throws
/// ValidationError for images smaller than the crops and DivergenceError on
/// a non-finite loss or parameter.
EstimationResult estimate_kernel(const ImagePlane& img, const TrainConfig& cfg);

}  // namespace blindkernel
