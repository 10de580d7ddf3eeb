#include "blindkernel/discriminator.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "blindkernel/errors.hpp"

namespace blindkernel {

namespace {

constexpr int kPad = kDiscriminatorFirstSide / 2;
constexpr int kInitPowerIterations = 200;
constexpr int kTrainPowerIterations = 1;

Eigen::VectorXd random_unit(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v / v.norm();
}

FilterBank normal_bank(int out, int in, int side, double stddev, std::mt19937_64& rng) {
  FilterBank bank(out, in, side, side);
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index i = 0; i < bank.weights.size(); ++i) bank.weights[i] = normal(rng);
  return bank;
}

Eigen::MatrixXd im2col(const Plane& x) {
  const int h = static_cast<int>(x.rows());
  const int w = static_cast<int>(x.cols());
  constexpr int k = kDiscriminatorFirstSide;
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(k * k, Eigen::Index{h} * w);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      const int row = a * k + b;
      for (int r = 0; r < h; ++r) {
        const int rr = r + a - kPad;
        if (rr < 0 || rr >= h) continue;
        for (int c = 0; c < w; ++c) {
          const int cc = c + b - kPad;
          if (cc >= 0 && cc < w) cols(row, Eigen::Index{r} * w + c) = x(rr, cc);
        }
      }
    }
  return cols;
}

Plane col2im(const Eigen::MatrixXd& cols, int h, int w) {
  constexpr int k = kDiscriminatorFirstSide;
  Plane x = Plane::Zero(h, w);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      const int row = a * k + b;
      for (int r = 0; r < h; ++r) {
        const int rr = r + a - kPad;
        if (rr < 0 || rr >= h) continue;
        for (int c = 0; c < w; ++c) {
          const int cc = c + b - kPad;
          if (cc >= 0 && cc < w) x(rr, cc) += cols(row, Eigen::Index{r} * w + c);
        }
      }
    }
  return x;
}

Eigen::MatrixXd as_matrix(const FilterBank& bank) { return bank.matrix(); }

}  // namespace

std::vector<Eigen::VectorXd*> DiscriminatorParams::trainable() {
  std::vector<Eigen::VectorXd*> out{&first.weights};
  for (auto& block : hidden) {
    out.push_back(&block.conv.weights);
    out.push_back(&block.gamma);
    out.push_back(&block.beta);
  }
  out.push_back(&last.weights);
  out.push_back(&last_bias);
  return out;
}

std::vector<const Eigen::VectorXd*> DiscriminatorParams::trainable() const {
  std::vector<const Eigen::VectorXd*> out;
  for (auto* p : const_cast<DiscriminatorParams*>(this)->trainable()) out.push_back(p);
  return out;
}

DiscriminatorParams init_discriminator(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  constexpr int ch = kDiscriminatorChannels;
  DiscriminatorParams p;
  p.first = normal_bank(ch, 1, kDiscriminatorFirstSide, 0.02, rng);
  for (auto& block : p.hidden) {
    block.conv = normal_bank(ch, ch, 1, 0.02, rng);
    block.gamma = Eigen::VectorXd::Ones(ch);
    block.beta = Eigen::VectorXd::Zero(ch);
    block.running_mean = Eigen::VectorXd::Zero(ch);
    block.running_var = Eigen::VectorXd::Ones(ch);
    block.u = random_unit(ch, rng);
    block.v = random_unit(ch, rng);
    // Converge u, v up front so the one-step update starts from a tight estimate.
    spectral_normalize(block.conv.matrix(), block.u, block.v, kInitPowerIterations);
  }
  p.last = normal_bank(1, ch, 1, 0.02, rng);
  p.last_bias = Eigen::VectorXd::Zero(1);
  return p;
}

Eigen::MatrixXd spectral_normalize(const Eigen::MatrixXd& w, Eigen::VectorXd& u, Eigen::VectorXd& v,
                                   int iterations, double* sigma_out) {
  for (int i = 0; i < iterations; ++i) {
    v = w.transpose() * u;
    v /= v.norm() + 1e-12;
    u = w * v;
    u /= u.norm() + 1e-12;
  }
  const double sigma = u.dot(w * v);
  if (sigma_out) *sigma_out = sigma;
  return w / (sigma + 1e-12);
}

namespace {

DMap forward_impl(DiscriminatorParams& p, const Plane& crop, Mode mode, bool mutate, DiscriminatorTape* tape) {
  if (crop.rows() < kDiscriminatorFirstSide || crop.cols() < kDiscriminatorFirstSide) {
    throw ValidationError("discriminator input must be at least 7x7");
  }
  const int h = static_cast<int>(crop.rows());
  const int w = static_cast<int>(crop.cols());
  const Eigen::Index n = Eigen::Index{h} * w;
  const bool training = mode == Mode::kTraining;

  Eigen::MatrixXd cols = im2col(crop);
  Eigen::MatrixXd x = as_matrix(p.first) * cols;
  if (tape) {
    *tape = DiscriminatorTape{};
    tape->height = h;
    tape->width = w;
    tape->mode = mode;
    tape->columns = std::move(cols);
  }

  for (auto& block : p.hidden) {
    Eigen::VectorXd u = block.u;
    Eigen::VectorXd v = block.v;
    double sigma = 0.0;
    const Eigen::MatrixXd wsn = spectral_normalize(as_matrix(block.conv), u, v, training ? kTrainPowerIterations : 0, &sigma);
    if (mutate && training) {
      block.u = u;
      block.v = v;
    }
    const Eigen::MatrixXd z = wsn * x;

    Eigen::VectorXd mean;
    Eigen::VectorXd var;
    if (training) {
      mean = z.rowwise().mean();
      var = (z.colwise() - mean).array().square().rowwise().mean();
      if (mutate) {
        const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
        block.running_mean = (1.0 - kBatchNormMomentum) * block.running_mean + kBatchNormMomentum * mean;
        block.running_var = (1.0 - kBatchNormMomentum) * block.running_var + kBatchNormMomentum * unbias * var;
      }
    } else {
      mean = block.running_mean;
      var = block.running_var;
    }
    const Eigen::VectorXd inv_std = (var.array() + kBatchNormEpsilon).rsqrt();
    const Eigen::MatrixXd xhat = (z.colwise() - mean).array().colwise() * inv_std.array();
    Eigen::MatrixXd y = (xhat.array().colwise() * block.gamma.array()).colwise() + block.beta.array();
    y = y.cwiseMax(0.0);

    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->normalized.push_back(xhat);
      tape->inv_std.push_back(inv_std);
      tape->activations.push_back(y);
      tape->sn_weights.push_back(wsn);
      tape->sigma.push_back(sigma);
      tape->sn_u.push_back(u);
      tape->sn_v.push_back(v);
    }
    x = std::move(y);
  }

  Eigen::RowVectorXd logits = (as_matrix(p.last) * x).row(0);
  logits.array() += p.last_bias[0];
  const Eigen::RowVectorXd out = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
  if (tape) tape->output = out;
  return Eigen::Map<const Plane>(out.data(), h, w);
}

}  // namespace

DMap discriminator_forward(DiscriminatorParams& p, const Plane& crop, Mode mode, DiscriminatorTape* tape) {
  return forward_impl(p, crop, mode, true, tape);
}

DMap discriminator_forward(const DiscriminatorParams& p, const Plane& crop) {
  return forward_impl(const_cast<DiscriminatorParams&>(p), crop, Mode::kEvaluation, false, nullptr);
}

DiscriminatorGradients discriminator_backward(const DiscriminatorParams& p, const DiscriminatorTape& tape,
                                              const Plane& dmap_grad, bool with_params) {
  const Eigen::Index n = Eigen::Index{tape.height} * tape.width;
  if (dmap_grad.rows() != tape.height || dmap_grad.cols() != tape.width) {
    throw ValidationError("D-map gradient has the wrong size");
  }
  DiscriminatorGradients grads;
  if (with_params) {
    for (const auto* t : p.trainable()) grads.params.push_back(Eigen::VectorXd::Zero(t->size()));
  }
  // Indices into grads.params follow trainable(): 0 first, 1 + 3k.. hidden, then last, bias.
  const std::size_t last_idx = 1 + 3 * kDiscriminatorHiddenBlocks;

  const Eigen::RowVectorXd upstream = Eigen::Map<const Eigen::RowVectorXd>(dmap_grad.data(), n);
  const Eigen::RowVectorXd dz = upstream.array() * tape.output.array() * (1.0 - tape.output.array());
  const Eigen::MatrixXd& top = tape.activations.back();
  if (with_params) {
    grads.params[last_idx] = (dz * top.transpose()).transpose();
    grads.params[last_idx + 1][0] = dz.sum();
  }
  Eigen::MatrixXd dx = as_matrix(p.last).transpose() * dz;

  for (int k = kDiscriminatorHiddenBlocks - 1; k >= 0; --k) {
    const auto& block = p.hidden[static_cast<std::size_t>(k)];
    const auto idx = static_cast<std::size_t>(k);
    const Eigen::MatrixXd dy = (tape.activations[idx].array() > 0.0).select(dx, 0.0);
    const Eigen::MatrixXd& xhat = tape.normalized[idx];
    const Eigen::MatrixXd dxhat = dy.array().colwise() * block.gamma.array();
    Eigen::MatrixXd dzb;
    if (tape.mode == Mode::kTraining) {
      const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
      const Eigen::VectorXd sum_dx = dxhat.cwiseProduct(xhat).rowwise().sum();
      const double nn = static_cast<double>(n);
      dzb = ((dxhat.array() * nn).colwise() - sum_d.array()) - (xhat.array().colwise() * sum_dx.array());
      dzb = dzb.array().colwise() * (tape.inv_std[idx].array() / nn);
    } else {
      dzb = dxhat.array().colwise() * tape.inv_std[idx].array();
    }
    if (with_params) {
      const std::size_t base = 1 + 3 * idx;
      grads.params[base + 1] = dy.cwiseProduct(xhat).rowwise().sum();
      grads.params[base + 2] = dy.rowwise().sum();
      const Eigen::MatrixXd dwsn = dzb * tape.inputs[idx].transpose();
      const Eigen::MatrixXd& wsn = tape.sn_weights[idx];
      const double inner = dwsn.cwiseProduct(wsn).sum();
      const Eigen::MatrixXd dw =
          (dwsn - inner * tape.sn_u[idx] * tape.sn_v[idx].transpose()) / tape.sigma[idx];
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          grads.params[base].data(), dw.rows(), dw.cols()) = dw;
    }
    dx = tape.sn_weights[idx].transpose() * dzb;
  }

  if (with_params) {
    const Eigen::MatrixXd dw1 = dx * tape.columns.transpose();
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        grads.params[0].data(), dw1.rows(), dw1.cols()) = dw1;
  }
  grads.input = col2im(as_matrix(p.first).transpose() * dx, tape.height, tape.width);
  return grads;
}

namespace {

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  Eigen::VectorXd* values;
};

std::vector<NamedTensor> tensors(DiscriminatorParams& p) {
  constexpr int ch = kDiscriminatorChannels;
  std::vector<NamedTensor> out{{"first", {ch, 1, kDiscriminatorFirstSide, kDiscriminatorFirstSide}, &p.first.weights}};
  for (std::size_t k = 0; k < p.hidden.size(); ++k) {
    auto& b = p.hidden[k];
    const std::string prefix = "hidden" + std::to_string(k) + ".";
    out.push_back({prefix + "conv", {ch, ch, 1, 1}, &b.conv.weights});
    out.push_back({prefix + "gamma", {ch}, &b.gamma});
    out.push_back({prefix + "beta", {ch}, &b.beta});
    out.push_back({prefix + "running_mean", {ch}, &b.running_mean});
    out.push_back({prefix + "running_var", {ch}, &b.running_var});
    out.push_back({prefix + "u", {ch}, &b.u});
    out.push_back({prefix + "v", {ch}, &b.v});
  }
  out.push_back({"last", {1, ch, 1, 1}, &p.last.weights});
  out.push_back({"last_bias", {1}, &p.last_bias});
  return out;
}

}  // namespace

void save_discriminator(const DiscriminatorParams& p, const std::filesystem::path& raw_path,
                        const std::filesystem::path& manifest_path) {
  auto& mp = const_cast<DiscriminatorParams&>(p);
  nlohmann::json entries = nlohmann::json::array();
  Eigen::Index total = 0;
  for (const auto& t : tensors(mp)) total += t.values->size();
  Plane blob(1, total);
  Eigen::Index offset = 0;
  for (const auto& t : tensors(mp)) {
    blob.block(0, offset, 1, t.values->size()) = t.values->transpose();
    offset += t.values->size();
    entries.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  write_raw(blob, raw_path);
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + manifest_path.string());
  out << nlohmann::json{{"tensors", entries}}.dump(2) << '\n';
}

DiscriminatorParams load_discriminator(const std::filesystem::path& raw_path,
                                       const std::filesystem::path& manifest_path) {
  DiscriminatorParams p = init_discriminator(0);
  const Plane blob = read_raw(raw_path);
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad discriminator manifest: " + std::string(e.what()));
  }
  const auto slots = tensors(p);
  const auto& entries = manifest.at("tensors");
  if (entries.size() != slots.size()) throw IoError("discriminator manifest has the wrong tensor count");
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (entries[i].at("name").get<std::string>() != slots[i].name) {
      throw IoError("unexpected tensor " + entries[i].at("name").get<std::string>());
    }
    const Eigen::Index size = slots[i].values->size();
    if (offset + size > blob.size()) throw IoError("discriminator blob is too short");
    *slots[i].values = blob.block(0, offset, 1, size).transpose();
    offset += size;
  }
  return p;
}

}  // namespace blindkernel
