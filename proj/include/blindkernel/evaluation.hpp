#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blindkernel/dataset.hpp"
#include "blindkernel/trainer.hpp"

namespace blindkernel {

struct EvalRow {
  std::string id;
  double kernel_l1 = 0.0;
  double kernel_image_psnr = 0.0;
  double runtime_seconds = 0.0;
  int iterations = 0;
  bool failed = false;
  std::string error;
};

struct Aggregate {
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // population standard deviation
  int count = 0;
};

/// Mean, median and standard deviation of `values`; zeros when empty.
Aggregate aggregate(std::vector<double> values);

struct EvalReport {
  std::vector<EvalRow> rows;
  Aggregate kernel_l1;
  Aggregate kernel_image_psnr;
  Aggregate runtime_seconds;
  Aggregate iterations;
  int failures = 0;
  nlohmann::json config;

  /// Recomputes the aggregates from the successful rows.
  void recompute();
};

struct EvalOptions {
  /// Worker threads; 0 means the BLINDKERNEL_THREADS cap (or 1).
  int threads = 0;
  /// Pixels shaved from each side before the kernel image PSNR.
  int border_crop = 0;
  /// Write kernel heat maps and loss-trace plots.
  bool plots = true;
};

/// Thread cap from BLINDKERNEL_THREADS (at least 1).
int thread_cap();

/// Runs estimate_kernel on every entry and compares the estimate (x2 for
/// scale-2 benchmarks, x4 otherwise) with the ground truth. Per-entry
/// failures are recorded and do not stop the run. Writes report.csv,
/// report.json, kernels/<id>_x2.txt, kernels/<id>_x4.txt and plots/ under
/// `out_dir`.
EvalReport evaluate_benchmark(const BenchmarkManifest& manifest, const TrainConfig& cfg,
                              const std::filesystem::path& out_dir, const EvalOptions& options = {});

/// RFC-4180 CSV with header id,kernel_l1,kernel_image_psnr,iterations,status
/// and reals at 17 significant digits. Runtime is left to the JSON report so
/// the CSV is reproducible byte for byte.
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
std::vector<EvalRow> read_report_csv(const std::filesystem::path& path);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);

/// Min-max normalized grayscale rendering, nearest-neighbour upscaled.
Plane kernel_heatmap(const Kernel& k, int upscale = 16);
/// Ground truth and estimate side by side on a common canvas.
Plane kernel_pair_image(const Kernel& truth, const Kernel& estimate, int upscale = 16);
/// Simple line plot of the G and D loss traces.
void plot_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path);

/// CSV of the per-iteration loss trace: iteration,g_loss,d_loss,reg.
void write_loss_trace_csv(const std::vector<LossRecord>& trace, const std::filesystem::path& path);

}  // namespace blindkernel
