#include "blindkernel/generator.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "blindkernel/errors.hpp"

namespace blindkernel {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Multi-channel square grids, one flattened (side x side) grid per row.
struct Grids {
  int side = 0;
  RowMat values;  // channels x side^2
};

// (out x in) slice of a bank at spatial offset (a, b).
RowMat tap(const FilterBank& bank, int a, int b) {
  RowMat w(bank.out, bank.in);
  for (int o = 0; o < bank.out; ++o)
    for (int c = 0; c < bank.in; ++c) w(o, c) = bank.at(o, c, a, b);
  return w;
}

// Window of `src` (side S) at offset (a, b), `side` x `side` per channel.
RowMat window(const Grids& src, int a, int b, int side) {
  RowMat out(src.values.rows(), Eigen::Index{side} * side);
  for (Eigen::Index ch = 0; ch < src.values.rows(); ++ch)
    for (int r = 0; r < side; ++r)
      out.row(ch).segment(Eigen::Index{r} * side, side) =
          src.values.row(ch).segment(Eigen::Index{a + r} * src.side + b, side);
  return out;
}

// Adds `block` (side x side per channel) into `dst` at offset (a, b).
void scatter_add(Grids& dst, const RowMat& block, int a, int b, int side) {
  for (Eigen::Index ch = 0; ch < dst.values.rows(); ++ch)
    for (int r = 0; r < side; ++r)
      dst.values.row(ch).segment(Eigen::Index{a + r} * dst.side + b, side) +=
          block.row(ch).segment(Eigen::Index{r} * side, side);
}

// Composite kernel after one more bank: out[o](p) = sum_c sum_t W[o,c,t] in[c](p - t).
Grids compose_layer(const Grids& in, const FilterBank& bank) {
  Grids out;
  out.side = in.side + bank.height - 1;
  out.values = RowMat::Zero(bank.out, Eigen::Index{out.side} * out.side);
  for (int a = 0; a < bank.height; ++a)
    for (int b = 0; b < bank.width; ++b) {
      const RowMat t = tap(bank, a, b) * in.values;
      scatter_add(out, t, a, b, in.side);
    }
  return out;
}

std::vector<Grids> extraction_tape(const GeneratorParams& p) {
  std::vector<Grids> tape;
  tape.reserve(p.layers.size() + 1);
  Grids start;
  start.side = 1;
  start.values = RowMat::Ones(1, 1);
  tape.push_back(std::move(start));
  for (const FilterBank& bank : p.layers) {
    if (bank.height != bank.width) throw ValidationError("generator filters must be square");
    if (bank.in != tape.back().values.rows()) throw ValidationError("generator channel plan is inconsistent");
    tape.push_back(compose_layer(tape.back(), bank));
  }
  if (tape.back().values.rows() != 1) throw ValidationError("generator must end with a single channel");
  return tape;
}

FilterBank random_bank(int out, int in, int side, std::mt19937_64& rng) {
  FilterBank bank(out, in, side, side);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in) * side * side));
  for (Eigen::Index i = 0; i < bank.weights.size(); ++i) bank.weights[i] = normal(rng);
  return bank;
}

void rescale_to_unit_sum(GeneratorParams& p) {
  const double total = extract_kernel(p).sum();
  if (total != 0.0) p.layers.back().weights /= total;
}

}  // namespace

int GeneratorParams::receptive_field() const {
  int rf = 1;
  for (const auto& bank : layers) rf += bank.height - 1;
  return rf;
}

std::size_t GeneratorParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& bank : layers) n += static_cast<std::size_t>(bank.weights.size());
  return n;
}

std::vector<std::array<int, 4>> deep_generator_shapes() {
  constexpr int h = kGeneratorChannels;
  return {{h, 1, 7, 7}, {h, h, 5, 5}, {h, h, 3, 3}, {h, h, 1, 1}, {h, h, 1, 1}, {1, h, 1, 1}};
}

GeneratorParams init_generator(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GeneratorParams p;
  for (const auto& s : deep_generator_shapes()) p.layers.push_back(random_bank(s[0], s[1], s[2], rng));
  rescale_to_unit_sum(p);
  return p;
}

GeneratorParams single_layer_generator(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GeneratorParams p;
  p.layers.push_back(random_bank(1, 1, kEstimatedKernelSize, rng));
  rescale_to_unit_sum(p);
  return p;
}

ImagePlane generator_forward(const GeneratorParams& p, const ImagePlane& crop) {
  const int rf = p.receptive_field();
  if (crop.height() != crop.width()) throw ValidationError("generator expects square crops");
  if (crop.height() < rf + 1) {
    throw ValidationError("crop side " + std::to_string(crop.height()) + " is below the minimum " +
                          std::to_string(rf + 1));
  }
  Grids x;
  x.side = crop.height();
  x.values = Eigen::Map<const RowMat>(crop.pixels().data(), 1, crop.pixels().size());
  for (const FilterBank& bank : p.layers) {
    const int out_side = x.side - bank.height + 1;
    RowMat y = RowMat::Zero(bank.out, Eigen::Index{out_side} * out_side);
    for (int a = 0; a < bank.height; ++a)
      for (int b = 0; b < bank.width; ++b) y.noalias() += tap(bank, a, b) * window(x, a, b, out_side);
    x.side = out_side;
    x.values = std::move(y);
  }
  const int out = (x.side + kGeneratorScale - 1) / kGeneratorScale;
  Plane result(out, out);
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < out; ++j)
      result(i, j) = x.values(0, Eigen::Index{i * kGeneratorScale} * x.side + j * kGeneratorScale);
  return ImagePlane(std::move(result));
}

Kernel extract_kernel(const GeneratorParams& p) {
  const std::vector<Grids> tape = extraction_tape(p);
  const Grids& last = tape.back();
  return Kernel(Plane(Eigen::Map<const Plane>(last.values.data(), last.side, last.side)));
}

GeneratorParams extract_kernel_backward(const GeneratorParams& p, const Plane& kernel_grad) {
  const std::vector<Grids> tape = extraction_tape(p);
  if (kernel_grad.rows() != tape.back().side || kernel_grad.cols() != tape.back().side) {
    throw ValidationError("kernel gradient has the wrong shape");
  }
  GeneratorParams grads;
  grads.layers.reserve(p.layers.size());
  for (const auto& bank : p.layers) grads.layers.emplace_back(bank.out, bank.in, bank.height, bank.width);

  Grids upstream;
  upstream.side = tape.back().side;
  upstream.values = Eigen::Map<const RowMat>(kernel_grad.data(), 1, kernel_grad.size());
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const FilterBank& bank = p.layers[l];
    const Grids& input = tape[l];
    Grids downstream;
    downstream.side = input.side;
    downstream.values = RowMat::Zero(input.values.rows(), input.values.cols());
    for (int a = 0; a < bank.height; ++a)
      for (int b = 0; b < bank.width; ++b) {
        const RowMat g = window(upstream, a, b, input.side);
        const RowMat dw = g * input.values.transpose();
        FilterBank& gbank = grads.layers[l];
        for (int o = 0; o < bank.out; ++o)
          for (int c = 0; c < bank.in; ++c) gbank.at(o, c, a, b) = dw(o, c);
        if (l > 0) downstream.values.noalias() += tap(bank, a, b).transpose() * g;
      }
    upstream = std::move(downstream);
  }
  return grads;
}

Plane downscale_kernel_grad(const ImagePlane& x, const Plane& output_grad, int kernel_side, int scale) {
  Plane g = Plane::Zero(kernel_side, kernel_side);
  for (Eigen::Index i = 0; i < output_grad.rows(); ++i)
    for (Eigen::Index j = 0; j < output_grad.cols(); ++j) {
      const double v = output_grad(i, j);
      if (v == 0.0) continue;
      g.noalias() += v * x.pixels().block(i * scale, j * scale, kernel_side, kernel_side);
    }
  return g;
}

void save_generator(const GeneratorParams& p, const std::filesystem::path& raw_path,
                    const std::filesystem::path& manifest_path) {
  Plane blob(1, static_cast<Eigen::Index>(p.parameter_count()));
  nlohmann::json shapes = nlohmann::json::array();
  Eigen::Index offset = 0;
  for (const auto& bank : p.layers) {
    blob.block(0, offset, 1, bank.weights.size()) = bank.weights.transpose();
    offset += bank.weights.size();
    shapes.push_back(bank.shape());
  }
  write_raw(blob, raw_path);
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + manifest_path.string());
  out << nlohmann::json{{"layers", shapes}}.dump(2) << '\n';
}

GeneratorParams load_generator(const std::filesystem::path& raw_path,
                               const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad generator manifest " + manifest_path.string() + ": " + e.what());
  }
  const Plane blob = read_raw(raw_path);
  GeneratorParams p;
  Eigen::Index offset = 0;
  for (const auto& s : manifest.at("layers")) {
    FilterBank bank(s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>(), s.at(3).get<int>());
    if (offset + bank.weights.size() > blob.size()) throw IoError("generator blob is too short");
    bank.weights = blob.block(0, offset, 1, bank.weights.size()).transpose();
    offset += bank.weights.size();
    p.layers.push_back(std::move(bank));
  }
  if (offset != blob.size()) throw IoError("generator blob size does not match manifest");
  return p;
}

}  // namespace blindkernel
