#include "blindkernel/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "blindkernel/errors.hpp"
#include "blindkernel/procedural.hpp"

namespace blindkernel {

namespace fs = std::filesystem;
using nlohmann::json;

bool operator==(const BenchmarkEntry& a, const BenchmarkEntry& b) {
  return a.id == b.id && a.source_path == b.source_path && a.source_height == b.source_height &&
         a.source_width == b.source_width && a.spec.lambda1 == b.spec.lambda1 && a.spec.lambda2 == b.spec.lambda2 &&
         a.spec.theta == b.spec.theta && a.spec.noise_amplitude == b.spec.noise_amplitude &&
         a.spec.size == b.spec.size && a.seed == b.seed && a.scale == b.scale && a.kernel_path == b.kernel_path &&
         a.kernel_raw_path == b.kernel_raw_path && a.lr_path == b.lr_path && a.lr_png_path == b.lr_png_path;
}

bool operator==(const BenchmarkManifest& a, const BenchmarkManifest& b) {
  return a.schema_version == b.schema_version && a.global_seed == b.global_seed && a.scale == b.scale &&
         a.count == b.count && a.noise_amplitude == b.noise_amplitude && a.corpus_dir == b.corpus_dir &&
         a.entries == b.entries;
}

std::uint64_t entry_seed(std::uint64_t global_seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(global_seed), static_cast<std::uint32_t>(global_seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5EEDu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

GaussianSpec draw_gaussian_spec(std::uint64_t global_seed, std::uint64_t index, double noise_amplitude) {
  std::mt19937_64 rng(entry_seed(global_seed, index));
  std::uniform_real_distribution<double> length(0.6, 5.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  GaussianSpec spec;
  spec.lambda1 = length(rng);
  spec.lambda2 = length(rng);
  spec.theta = angle(rng);
  spec.noise_amplitude = noise_amplitude;
  spec.size = kBenchmarkKernelSize;
  return spec;
}

namespace {

json to_json(const BenchmarkEntry& e) {
  return json{{"id", e.id},
              {"source_path", e.source_path},
              {"source_height", e.source_height},
              {"source_width", e.source_width},
              {"gaussian",
               {{"lambda1", e.spec.lambda1},
                {"lambda2", e.spec.lambda2},
                {"theta", e.spec.theta},
                {"noise_amplitude", e.spec.noise_amplitude},
                {"size", e.spec.size}}},
              {"seed", e.seed},
              {"scale", e.scale},
              {"kernel_path", e.kernel_path},
              {"kernel_raw_path", e.kernel_raw_path},
              {"lr_path", e.lr_path},
              {"lr_png_path", e.lr_png_path}};
}

BenchmarkEntry entry_from_json(const json& j) {
  BenchmarkEntry e;
  e.id = j.at("id").get<std::string>();
  e.source_path = j.at("source_path").get<std::string>();
  e.source_height = j.at("source_height").get<int>();
  e.source_width = j.at("source_width").get<int>();
  const auto& g = j.at("gaussian");
  e.spec.lambda1 = g.at("lambda1").get<double>();
  e.spec.lambda2 = g.at("lambda2").get<double>();
  e.spec.theta = g.at("theta").get<double>();
  e.spec.noise_amplitude = g.at("noise_amplitude").get<double>();
  e.spec.size = g.at("size").get<int>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.scale = j.at("scale").get<int>();
  e.kernel_path = j.at("kernel_path").get<std::string>();
  e.kernel_raw_path = j.at("kernel_raw_path").get<std::string>();
  e.lr_path = j.at("lr_path").get<std::string>();
  e.lr_png_path = j.at("lr_png_path").get<std::string>();
  return e;
}

bool looks_like_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::array<std::string, 7> kExt{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".rawf"};
  return std::find(kExt.begin(), kExt.end(), ext) != kExt.end();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void check_entry(const BenchmarkManifest& m, const BenchmarkEntry& e) {
  auto fail = [&e](const std::string& what) { throw IntegrityError(e.id, "benchmark entry '" + e.id + "': " + what); };
  for (const auto* rel : {&e.kernel_path, &e.kernel_raw_path, &e.lr_path}) {
    if (!fs::exists(m.resolve(*rel))) fail("missing file " + *rel);
  }
  Kernel k;
  try {
    k = read_kernel_text(m.resolve(e.kernel_path));
  } catch (const Error& err) {
    fail(std::string("unreadable kernel: ") + err.what());
  }
  if (k.rows() != kBenchmarkKernelSize || k.cols() != kBenchmarkKernelSize) fail("kernel is not 11x11");
  if (std::abs(k.sum() - 1.0) > 1e-6) fail("kernel does not sum to one");
  Plane lr;
  try {
    lr = read_raw(m.resolve(e.lr_path));
  } catch (const Error& err) {
    fail(std::string("unreadable LR image: ") + err.what());
  }
  if (lr.rows() != downscaled_size(e.source_height, kBenchmarkKernelSize, e.scale) ||
      lr.cols() != downscaled_size(e.source_width, kBenchmarkKernelSize, e.scale)) {
    fail("LR dimensions do not match the downscaling rule");
  }
}

}  // namespace

BenchmarkManifest make_benchmark(const fs::path& corpus_dir, const fs::path& out_dir, int scale, int count,
                                 std::uint64_t seed, const BenchmarkOptions& options) {
  if (scale != 2 && scale != 4) throw ValidationError("benchmark scale must be 2 or 4");
  if (count <= 0) throw ValidationError("benchmark count must be positive");
  if (!fs::is_directory(corpus_dir)) throw IoError("corpus directory not found: " + corpus_dir.string());

  std::vector<fs::path> files;
  for (const auto& item : fs::directory_iterator(corpus_dir)) {
    if (item.is_regular_file() && looks_like_image(item.path())) files.push_back(item.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<std::pair<fs::path, ImagePlane>> sources;
  for (const auto& file : files) {
    if (static_cast<int>(sources.size()) == count) break;
    try {
      ImagePlane img = load_image(file, true);
      if (img.height() < kBenchmarkKernelSize || img.width() < kBenchmarkKernelSize) {
        std::cerr << "warning: skipping " << file << ": smaller than the kernel\n";
        continue;
      }
      sources.emplace_back(file, std::move(img));
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << file << ": " << e.what() << '\n';
    }
  }
  if (static_cast<int>(sources.size()) < count) {
    throw ValidationError("corpus " + corpus_dir.string() + " has only " + std::to_string(sources.size()) +
                          " decodable images, " + std::to_string(count) + " requested");
  }

  fs::create_directories(out_dir / "lr");
  fs::create_directories(out_dir / "kernels");

  BenchmarkManifest m;
  m.global_seed = seed;
  m.scale = scale;
  m.count = count;
  m.noise_amplitude = options.noise_amplitude;
  m.corpus_dir = corpus_dir.string();
  m.root = out_dir;
  for (int i = 0; i < count; ++i) {
    const auto& [path, img] = sources[static_cast<std::size_t>(i)];
    BenchmarkEntry e;
    e.id = path.stem().string();
    e.source_path = path.string();
    e.source_height = img.height();
    e.source_width = img.width();
    e.spec = draw_gaussian_spec(seed, static_cast<std::uint64_t>(i), options.noise_amplitude);
    e.seed = entry_seed(seed, static_cast<std::uint64_t>(i) + (1ull << 32));
    e.scale = scale;
    e.kernel_path = "kernels/" + e.id + ".txt";
    e.kernel_raw_path = "kernels/" + e.id + ".rawf";
    e.lr_path = "lr/" + e.id + ".rawf";
    e.lr_png_path = "lr/" + e.id + ".png";

    // The kernel is re-read from its text file so the LR image is exactly
    // what a consumer of the manifest recomputes.
    write_kernel_text(synth_gaussian(e.spec, e.seed), m.resolve(e.kernel_path));
    const Kernel k = read_kernel_text(m.resolve(e.kernel_path));
    write_raw(k.weights(), m.resolve(e.kernel_raw_path));
    const ImagePlane lr = downscale_with_kernel(img, k, scale);
    write_raw(lr.pixels(), m.resolve(e.lr_path));
    save_png(lr, m.resolve(e.lr_png_path));
    m.entries.push_back(std::move(e));
  }

  json entries = json::array();
  for (const auto& e : m.entries) entries.push_back(to_json(e));
  const json doc{{"schema_version", m.schema_version},
                 {"global_seed", m.global_seed},
                 {"scale", m.scale},
                 {"count", m.count},
                 {"noise_amplitude", m.noise_amplitude},
                 {"corpus_dir", m.corpus_dir},
                 {"entries", entries}};
  write_text(out_dir / "manifest.json", doc.dump(2) + "\n");
  return m;
}

BenchmarkManifest load_benchmark(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  BenchmarkManifest m;
  m.root = manifest_path.parent_path();
  json doc;
  try {
    doc = json::parse(in);
    m.schema_version = doc.at("schema_version").get<int>();
    if (m.schema_version != kBenchmarkSchemaVersion) {
      throw ValidationError("unsupported manifest schema version " + std::to_string(m.schema_version));
    }
    m.global_seed = doc.at("global_seed").get<std::uint64_t>();
    m.scale = doc.at("scale").get<int>();
    m.count = doc.at("count").get<int>();
    m.noise_amplitude = doc.at("noise_amplitude").get<double>();
    m.corpus_dir = doc.at("corpus_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto& entries = doc.at("entries");
  if (!entries.is_array()) throw IoError("manifest entries must be an array");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    try {
      m.entries.push_back(entry_from_json(entries[i]));
    } catch (const json::exception& e) {
      const std::string id = entries[i].contains("id") ? entries[i]["id"].dump() : "#" + std::to_string(i);
      throw IntegrityError(id, "malformed manifest entry " + id + ": " + e.what());
    }
  }
  if (static_cast<int>(m.entries.size()) != m.count) {
    throw IoError("manifest lists " + std::to_string(m.entries.size()) + " entries but count is " +
                  std::to_string(m.count));
  }
  for (const auto& e : m.entries) check_entry(m, e);
  return m;
}

std::vector<fs::path> write_mini_corpus(const fs::path& dir, int size) {
  fs::create_directories(dir);
  std::vector<fs::path> paths;
  for (const auto& item : mini_corpus(size)) {
    const fs::path p = dir / (item.name + ".png");
    save_png(item.image, p);
    paths.push_back(p);
  }
  return paths;
}

}  // namespace blindkernel
