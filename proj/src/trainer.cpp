#include "blindkernel/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

namespace blindkernel {

// --- Configuration -------------------------------------------------------------

void validate(const TrainConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("invalid training config: ") + what);
  };
  require(cfg.iterations > 0, "iterations must be positive");
  require(cfg.g_lr > 0 && cfg.d_lr > 0, "learning rates must be positive");
  require(cfg.lr_decay_factor > 0 && cfg.lr_decay_every > 0, "learning-rate decay must be positive");
  require(cfg.adam_beta1 > 0 && cfg.adam_beta1 < 1 && cfg.adam_beta2 > 0 && cfg.adam_beta2 < 1,
          "adam betas must lie in (0, 1)");
  require(cfg.adam_epsilon > 0, "adam epsilon must be positive");
  require(cfg.g_crop >= kEstimatedKernelSize + 1, "g_crop must be at least 14");
  require(cfg.d_crop >= kDiscriminatorFirstSide, "d_crop must be at least 7");
  require(cfg.bootstrap_iters >= 0 && cfg.bootstrap_weight >= 0 && cfg.bootstrap_exit_threshold >= 0,
          "bootstrap settings must be non-negative");
  require(cfg.checkpoint_every > 0, "checkpoint_every must be positive");
  const auto& w = cfg.reg_weights;
  require(w.sum_to_1 >= 0 && w.boundaries >= 0 && w.sparse >= 0 && w.center >= 0,
          "regularization weights must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{
      {"iterations", cfg.iterations},
      {"g_lr", cfg.g_lr},
      {"d_lr", cfg.d_lr},
      {"lr_decay_factor", cfg.lr_decay_factor},
      {"lr_decay_every", cfg.lr_decay_every},
      {"adam_beta1", cfg.adam_beta1},
      {"adam_beta2", cfg.adam_beta2},
      {"adam_epsilon", cfg.adam_epsilon},
      {"reg_weights",
       {{"sum_to_1", cfg.reg_weights.sum_to_1},
        {"boundaries", cfg.reg_weights.boundaries},
        {"sparse", cfg.reg_weights.sparse},
        {"center", cfg.reg_weights.center}}},
      {"g_crop", cfg.g_crop},
      {"d_crop", cfg.d_crop},
      {"bootstrap_iters", cfg.bootstrap_iters},
      {"bootstrap_weight", cfg.bootstrap_weight},
      {"bootstrap_exit_threshold", cfg.bootstrap_exit_threshold},
      {"seed", cfg.seed},
      {"checkpoint_every", cfg.checkpoint_every},
      {"generator", cfg.generator == GeneratorKind::kDeep ? "deep" : "single_layer"},
      {"d_loss", cfg.d_loss == DLossKind::kL1 ? "l1" : "mse"},
  };
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  static const std::set<std::string> kKnown{
      "iterations",   "g_lr",           "d_lr",        "lr_decay_factor", "lr_decay_every",
      "adam_beta1",   "adam_beta2",     "adam_epsilon", "reg_weights",    "g_crop",
      "d_crop",       "bootstrap_iters", "bootstrap_weight", "bootstrap_exit_threshold",
      "seed",         "checkpoint_every", "generator",  "d_loss"};
  if (!j.is_object()) throw ValidationError("training config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kKnown.contains(key)) throw ValidationError("unknown training config key '" + key + "'");
  }
  auto read = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("iterations", cfg.iterations);
  read("g_lr", cfg.g_lr);
  read("d_lr", cfg.d_lr);
  read("lr_decay_factor", cfg.lr_decay_factor);
  read("lr_decay_every", cfg.lr_decay_every);
  read("adam_beta1", cfg.adam_beta1);
  read("adam_beta2", cfg.adam_beta2);
  read("adam_epsilon", cfg.adam_epsilon);
  read("g_crop", cfg.g_crop);
  read("d_crop", cfg.d_crop);
  read("bootstrap_iters", cfg.bootstrap_iters);
  read("bootstrap_weight", cfg.bootstrap_weight);
  read("bootstrap_exit_threshold", cfg.bootstrap_exit_threshold);
  read("seed", cfg.seed);
  read("checkpoint_every", cfg.checkpoint_every);
  if (j.contains("reg_weights")) {
    const auto& w = j.at("reg_weights");
    if (w.contains("sum_to_1")) cfg.reg_weights.sum_to_1 = w.at("sum_to_1").get<double>();
    if (w.contains("boundaries")) cfg.reg_weights.boundaries = w.at("boundaries").get<double>();
    if (w.contains("sparse")) cfg.reg_weights.sparse = w.at("sparse").get<double>();
    if (w.contains("center")) cfg.reg_weights.center = w.at("center").get<double>();
  }
  if (j.contains("generator")) {
    const auto g = j.at("generator").get<std::string>();
    if (g == "deep") cfg.generator = GeneratorKind::kDeep;
    else if (g == "single_layer") cfg.generator = GeneratorKind::kSingleLayer;
    else throw ValidationError("generator must be 'deep' or 'single_layer'");
  }
  if (j.contains("d_loss")) {
    const auto d = j.at("d_loss").get<std::string>();
    if (d == "l1") cfg.d_loss = DLossKind::kL1;
    else if (d == "mse") cfg.d_loss = DLossKind::kMse;
    else throw ValidationError("d_loss must be 'l1' or 'mse'");
  }
}

double learning_rate(double base, int iteration, const TrainConfig& cfg) {
  return base * std::pow(cfg.lr_decay_factor, static_cast<double>(iteration / cfg.lr_decay_every));
}

// --- Crop sampling -------------------------------------------------------------

Plane window_sums(const Plane& map, int size) {
  const Eigen::Index h = map.rows();
  const Eigen::Index w = map.cols();
  if (size <= 0 || size > h || size > w) throw ValidationError("window larger than map");
  Plane integral = Plane::Zero(h + 1, w + 1);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c)
      integral(r + 1, c + 1) = map(r, c) + integral(r, c + 1) + integral(r + 1, c) - integral(r, c);
  const Eigen::Index ph = h - size + 1;
  const Eigen::Index pw = w - size + 1;
  Plane sums(ph, pw);
  for (Eigen::Index r = 0; r < ph; ++r)
    for (Eigen::Index c = 0; c < pw; ++c)
      sums(r, c) = integral(r + size, c + size) - integral(r, c + size) - integral(r + size, c) + integral(r, c);
  return sums;
}

CropSampler::CropSampler(const Plane& grad_map, int size) : size_(size) {
  const Plane sums = window_sums(grad_map, size);
  positions_cols_ = static_cast<int>(sums.cols());
  const bool uniform = !(sums.maxCoeff() > 0.0);
  cumulative_.reserve(static_cast<std::size_t>(sums.size()));
  double running = 0.0;
  for (Eigen::Index i = 0; i < sums.size(); ++i) {
    // Integral-image round-off can leave tiny negatives.
    running += uniform ? 1.0 : std::max(0.0, sums.data()[i]);
    cumulative_.push_back(running);
  }
}

CropSpec CropSampler::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(0.0, cumulative_.back());
  const double x = u(rng);
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
  if (it == cumulative_.end()) --it;
  const auto index = static_cast<int>(it - cumulative_.begin());
  return CropSpec{index / positions_cols_, index % positions_cols_, size_};
}

Plane CropSampler::probabilities() const {
  const auto rows = static_cast<Eigen::Index>(cumulative_.size()) / positions_cols_;
  Plane p(rows, positions_cols_);
  double prev = 0.0;
  for (std::size_t i = 0; i < cumulative_.size(); ++i) {
    p.data()[i] = (cumulative_[i] - prev) / cumulative_.back();
    prev = cumulative_[i];
  }
  return p;
}

CropSpec sample_crop(const ImagePlane& img, int size, const Plane& grad_map, std::mt19937_64& rng) {
  if (grad_map.rows() != img.height() || grad_map.cols() != img.width()) {
    throw ValidationError("gradient map does not match image");
  }
  return CropSampler(grad_map, size).sample(rng);
}

// --- Objectives ----------------------------------------------------------------

namespace {

// Mean penalty of a D-map against a constant label and its gradient.
double label_loss(const Plane& dmap, double label, DLossKind kind, Plane* grad) {
  const double n = static_cast<double>(dmap.size());
  const Eigen::ArrayXXd diff = dmap.array() - label;
  if (kind == DLossKind::kL1) {
    if (grad) *grad = (diff.sign() / n).matrix();
    return diff.abs().sum() / n;
  }
  if (grad) *grad = (2.0 * diff / n).matrix();
  return diff.square().sum() / n;
}

void accumulate(std::vector<Eigen::VectorXd>& into, const std::vector<Eigen::VectorXd>& add) {
  if (into.empty()) {
    into = add;
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += add[i];
}

}  // namespace

DObjective d_objective(DiscriminatorParams& d, const Plane& real, const Plane& fake, Mode mode, DLossKind kind,
                       bool with_grad) {
  DObjective out;
  DiscriminatorTape tape;
  Plane g;
  const DMap real_map = discriminator_forward(d, real, mode, with_grad ? &tape : nullptr);
  out.loss += label_loss(real_map, 1.0, kind, with_grad ? &g : nullptr);
  if (with_grad) accumulate(out.grad, discriminator_backward(d, tape, g).params);
  const DMap fake_map = discriminator_forward(d, fake, mode, with_grad ? &tape : nullptr);
  out.loss += label_loss(fake_map, 0.0, kind, with_grad ? &g : nullptr);
  if (with_grad) accumulate(out.grad, discriminator_backward(d, tape, g).params);
  return out;
}

Plane bootstrap_target(const ImagePlane& g_crop, int receptive_field, int output_side) {
  const ImagePlane bicubic = bicubic_downscale(g_crop, kGeneratorScale);
  // Generator pixel i is centered on input 2i + (rf-1)/2; bicubic pixel m on 2m + 1/2.
  const int offset = (receptive_field - 1) / 4;
  if (offset + output_side > bicubic.height()) throw ValidationError("bootstrap region exceeds bicubic output");
  return bicubic.pixels().block(offset, offset, output_side, output_side);
}

double bootstrap_distance(const Plane& g_out, const Plane& target) {
  return (g_out - target).cwiseAbs().mean();
}

GObjective g_objective(const GeneratorParams& g, DiscriminatorParams& d, Mode d_mode, const ImagePlane& g_crop,
                       const TrainConfig& cfg, bool bootstrap_active, bool with_grad) {
  GObjective out;
  out.kernel = extract_kernel(g);
  const ImagePlane fake = downscale_with_kernel(g_crop, out.kernel, kGeneratorScale);

  DiscriminatorTape tape;
  const DMap dmap = discriminator_forward(d, fake.pixels(), d_mode, with_grad ? &tape : nullptr);
  Plane dmap_grad;
  out.adversarial = label_loss(dmap, 1.0, cfg.d_loss, with_grad ? &dmap_grad : nullptr);

  out.reg = regularization_terms(out.kernel, cfg.reg_weights, with_grad);
  out.total = out.adversarial + out.reg.total_smooth;

  Plane fake_grad;
  if (with_grad) fake_grad = discriminator_backward(d, tape, dmap_grad, false).input;

  if (bootstrap_active) {
    const Plane target = bootstrap_target(g_crop, out.kernel.rows(), fake.height());
    out.bootstrap_distance = bootstrap_distance(fake.pixels(), target);
    out.bootstrap = cfg.bootstrap_weight * out.bootstrap_distance;
    out.total += out.bootstrap;
    if (with_grad) {
      const double n = static_cast<double>(target.size());
      fake_grad += (cfg.bootstrap_weight / n) * (fake.pixels() - target).array().sign().matrix();
    }
  }

  if (with_grad) {
    Plane kernel_grad = downscale_kernel_grad(g_crop, fake_grad, out.kernel.rows(), kGeneratorScale);
    kernel_grad += out.reg.grad;
    out.grad = extract_kernel_backward(g, kernel_grad);
  }
  return out;
}

// --- Training loop -------------------------------------------------------------

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void require_image_size(const ImagePlane& img, const TrainConfig& cfg, int receptive_field) {
  const int need = std::max({cfg.g_crop, cfg.d_crop, 2 * receptive_field});
  if (img.height() < need || img.width() < need) {
    throw ValidationError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                          " is smaller than the required " + std::to_string(need) + "x" + std::to_string(need));
  }
}

GeneratorParams make_generator(const TrainConfig& cfg) {
  const std::uint64_t seed = stream_seed(cfg.seed, 1);
  return cfg.generator == GeneratorKind::kDeep ? init_generator(seed) : single_layer_generator(seed);
}

std::vector<Eigen::VectorXd*> generator_tensors(GeneratorParams& g) {
  std::vector<Eigen::VectorXd*> out;
  for (auto& bank : g.layers) out.push_back(&bank.weights);
  return out;
}

std::vector<Eigen::VectorXd> generator_grads(GeneratorParams& grads) {
  std::vector<Eigen::VectorXd> out;
  for (auto& bank : grads.layers) out.push_back(std::move(bank.weights));
  return out;
}

}  // namespace

AdversarialTrainer::AdversarialTrainer(const ImagePlane& img, const TrainConfig& cfg)
    : img_(img),
      cfg_(cfg),
      g_(make_generator(cfg)),
      d_(init_discriminator(stream_seed(cfg.seed, 2))),
      g_opt_(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon),
      d_opt_(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon),
      g_sampler_((validate(cfg), require_image_size(img, cfg, g_.receptive_field()), gradient_content_map(img)),
                 cfg.g_crop),
      d_sampler_(gradient_content_map(img), cfg.d_crop),
      rng_(stream_seed(cfg.seed, 3)),
      bootstrap_active_(cfg.bootstrap_iters > 0) {}

ImagePlane AdversarialTrainer::generated(const ImagePlane& g_crop) const {
  return downscale_with_kernel(g_crop, extract_kernel(g_), kGeneratorScale);
}

double AdversarialTrainer::d_step() {
  const ImagePlane real = crop(img_, d_sampler_.sample(rng_));
  const ImagePlane fake = generated(crop(img_, g_sampler_.sample(rng_)));
  DObjective obj = d_objective(d_, real.pixels(), fake.pixels(), Mode::kTraining, cfg_.d_loss, true);
  if (std::isfinite(obj.loss)) {
    d_opt_.step(d_.trainable(), obj.grad, learning_rate(cfg_.d_lr, iteration_, cfg_));
  }
  return obj.loss;
}

GStepResult AdversarialTrainer::g_step() {
  last_g_crop_ = crop(img_, g_sampler_.sample(rng_));
  const bool bootstrap = bootstrap_active_ && iteration_ < cfg_.bootstrap_iters;
  GObjective obj = g_objective(g_, d_, Mode::kTraining, last_g_crop_, cfg_, bootstrap, true);
  GStepResult result{obj.total, obj.reg.total, obj.adversarial, obj.bootstrap};
  if (!std::isfinite(obj.total)) return result;
  g_opt_.step(generator_tensors(g_), generator_grads(obj.grad), learning_rate(cfg_.g_lr, iteration_, cfg_));
  if (bootstrap_active_ &&
      (iteration_ + 1 >= cfg_.bootstrap_iters || (bootstrap && obj.bootstrap_distance <= cfg_.bootstrap_exit_threshold))) {
    bootstrap_active_ = false;
    if (iteration_ + 1 < cfg_.bootstrap_iters) bootstrap_exit_ = iteration_ + 1;
  }
  return result;
}

bool AdversarialTrainer::parameters_finite() const {
  for (const auto& bank : g_.layers)
    if (!bank.weights.allFinite()) return false;
  for (const auto* t : d_.trainable())
    if (!t->allFinite()) return false;
  // Finite layers can still compose to an overflowing kernel.
  try {
    extract_kernel(g_);
  } catch (const ValidationError&) {
    return false;
  }
  return true;
}

void AdversarialTrainer::checkpoint(const ImagePlane& g_crop, std::vector<Checkpoint>& out) const {
  const Kernel k = extract_kernel(g_);
  const ImagePlane network = generator_forward(g_, g_crop);
  const ImagePlane via_kernel = downscale_with_kernel(g_crop, k, kGeneratorScale);
  Checkpoint cp;
  cp.iteration = iteration_;
  cp.kernel_sum = k.sum();
  cp.extraction_error = (network.pixels() - via_kernel.pixels()).cwiseAbs().maxCoeff();
  cp.bootstrap_active = bootstrap_active_;
  out.push_back(cp);
  if (!cfg_.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg_.checkpoint_dir);
    char name[64];
    std::snprintf(name, sizeof name, "kernel_%05d.txt", iteration_);
    write_kernel_text(k, cfg_.checkpoint_dir / name);
  }
}

EstimationResult AdversarialTrainer::run() {
  const auto start = std::chrono::steady_clock::now();
  EstimationResult result;
  result.seed = cfg_.seed;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg_.iterations));
  while (iteration_ < cfg_.iterations) {
    LossRecord rec;
    rec.d_loss = d_step();
    const GStepResult g = g_step();
    rec.g_loss = g.g_loss;
    rec.reg = g.reg;
    rec.adversarial = g.adversarial;
    rec.bootstrap = g.bootstrap;
    result.loss_trace.push_back(rec);
    if (!std::isfinite(rec.d_loss) || !std::isfinite(rec.g_loss) || !parameters_finite()) {
      throw DivergenceError(iteration_, std::move(result.loss_trace));
    }
    ++iteration_;
    if (iteration_ % cfg_.checkpoint_every == 0) checkpoint(last_g_crop_, result.checkpoints);
  }
  result.iterations_run = iteration_;
  result.bootstrap_exit_iteration = bootstrap_exit_;
  result.raw_kernel = extract_kernel(g_);
  result.kernel_x2 = postprocess_kernel(result.raw_kernel);
  result.kernel_x4 = compose_scale(result.kernel_x2);
  result.final_regularization = regularization(result.raw_kernel, cfg_.reg_weights);
  result.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

Kernel postprocess_kernel(const Kernel& raw) {
  Kernel k = raw;
  for (Eigen::Index i = 0; i < k.weights().size(); ++i) {
    double& v = k.weights().data()[i];
    if (std::abs(v) < 1e-4) v = 0.0;
  }
  k = normalize(k);
  double row = 0.0;
  double col = 0.0;
  for (int r = 0; r < k.rows(); ++r)
    for (int c = 0; c < k.cols(); ++c) {
      row += k(r, c) * r;
      col += k(r, c) * c;
    }
  const int dr = static_cast<int>(std::lround(k.center_row() - row));
  const int dc = static_cast<int>(std::lround(k.center_col() - col));
  if (dr != 0 || dc != 0) k = normalize(Kernel(place_centered(k, k.rows(), k.cols(), dr, dc)));
  return k;
}

EstimationResult estimate_kernel(const ImagePlane& img, const TrainConfig& cfg) {
  AdversarialTrainer trainer(img, cfg);
  return trainer.run();
}

}  // namespace blindkernel
