#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blindkernel/kernel_algebra.hpp"

namespace blindkernel {

inline constexpr int kBenchmarkSchemaVersion = 1;
inline constexpr int kBenchmarkKernelSize = 11;

struct BenchmarkEntry {
  std::string id;           // source file stem
  std::string source_path;  // as given by the corpus directory
  int source_height = 0;
  int source_width = 0;
  GaussianSpec spec;
  std::uint64_t seed = 0;   // seeds the multiplicative noise
  int scale = 2;
  // Paths relative to the manifest directory.
  std::string kernel_path;      // text grid
  std::string kernel_raw_path;  // raw float
  std::string lr_path;          // raw float
  std::string lr_png_path;      // 8-bit preview
};

struct BenchmarkManifest {
  int schema_version = kBenchmarkSchemaVersion;
  std::uint64_t global_seed = 0;
  int scale = 2;
  int count = 0;
  double noise_amplitude = 0.25;
  std::string corpus_dir;
  std::vector<BenchmarkEntry> entries;
  /// Directory holding manifest.json; not serialized.
  std::filesystem::path root;

  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

bool operator==(const BenchmarkEntry& a, const BenchmarkEntry& b);
bool operator==(const BenchmarkManifest& a, const BenchmarkManifest& b);

struct BenchmarkOptions {
  double noise_amplitude = 0.25;
};

/// Random anisotropic Gaussian parameters for entry `index`:
/// lambda1, lambda2 ~ U(0.6, 5), theta ~ U[-pi, pi].
GaussianSpec draw_gaussian_spec(std::uint64_t global_seed, std::uint64_t index, double noise_amplitude);

/// Seed of entry `index`, derived from the global seed only, so entries do
/// not depend on each other.
std::uint64_t entry_seed(std::uint64_t global_seed, std::uint64_t index);

/// Blurs and subsamples the first `count` decodable images of `corpus_dir`
/// (sorted by file name) with per-image random kernels. Writes
/// out/lr/<id>.rawf, out/lr/<id>.png, out/kernels/<id>.txt,
/// out/kernels/<id>.rawf and out/manifest.json. Unreadable files are
/// skipped with a warning on stderr; too few images -> ValidationError.
BenchmarkManifest make_benchmark(const std::filesystem::path& corpus_dir, const std::filesystem::path& out_dir,
                                 int scale, int count, std::uint64_t seed, const BenchmarkOptions& options = {});

/// Parses and checks a manifest: every kernel re-loads as a unit-sum 11x11
/// kernel and every LR image has the dimensions implied by its source and
/// scale. Throws IntegrityError naming the offending entry.
BenchmarkManifest load_benchmark(const std::filesystem::path& manifest_path);

/// Writes the bundled procedural mini-corpus as 8-bit PNGs.
std::vector<std::filesystem::path> write_mini_corpus(const std::filesystem::path& dir, int size = 512);

}  // namespace blindkernel
