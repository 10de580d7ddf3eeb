#include "blindkernel/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "blindkernel/errors.hpp"

namespace blindkernel {

namespace fs = std::filesystem;
using nlohmann::json;

Aggregate aggregate(std::vector<double> values) {
  Aggregate a;
  a.count = static_cast<int>(values.size());
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / a.count;
  double sq = 0.0;
  for (double v : values) sq += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(sq / a.count);
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  a.median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return a;
}

void EvalReport::recompute() {
  std::vector<double> l1, ip, rt, it;
  failures = 0;
  for (const auto& r : rows) {
    if (r.failed) {
      ++failures;
      continue;
    }
    l1.push_back(r.kernel_l1);
    ip.push_back(r.kernel_image_psnr);
    rt.push_back(r.runtime_seconds);
    it.push_back(r.iterations);
  }
  kernel_l1 = aggregate(l1);
  kernel_image_psnr = aggregate(ip);
  runtime_seconds = aggregate(rt);
  iterations = aggregate(it);
}

int thread_cap() {
  const char* env = std::getenv("BLINDKERNEL_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) return 1;
  return static_cast<int>(std::min<long>(v, 256));
}

// --- Plots ---------------------------------------------------------------------

Plane kernel_heatmap(const Kernel& k, int upscale) {
  if (upscale < 1) throw ValidationError("upscale must be positive");
  const double lo = k.weights().minCoeff();
  const double hi = k.weights().maxCoeff();
  const double range = hi - lo;
  Plane out(k.rows() * upscale, k.cols() * upscale);
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) {
      const double v = k(r / upscale, c / upscale);
      out(r, c) = range > 0.0 ? (v - lo) / range : 0.0;
    }
  }
  return out;
}

Plane kernel_pair_image(const Kernel& truth, const Kernel& estimate, int upscale) {
  const int side = std::max({truth.rows(), truth.cols(), estimate.rows(), estimate.cols()});
  const Plane a = kernel_heatmap(Kernel(place_centered(truth, side, side)), upscale);
  const Plane b = kernel_heatmap(Kernel(place_centered(estimate, side, side)), upscale);
  const int gap = upscale;
  Plane out = Plane::Ones(a.rows(), a.cols() + gap + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

void plot_loss_trace(const std::vector<LossRecord>& trace, const fs::path& path) {
  constexpr int kWidth = 800;
  constexpr int kHeight = 400;
  constexpr int kMargin = 20;
  cv::Mat canvas(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  if (trace.size() >= 2) {
    double lo = trace.front().g_loss;
    double hi = lo;
    for (const auto& r : trace) {
      for (double v : {r.g_loss, r.d_loss}) {
        if (!std::isfinite(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (hi <= lo) hi = lo + 1.0;
    const double n = static_cast<double>(trace.size() - 1);
    auto to_point = [&](std::size_t i, double v) {
      const double x = kMargin + (kWidth - 2 * kMargin) * (static_cast<double>(i) / n);
      const double y = kHeight - kMargin - (kHeight - 2 * kMargin) * ((v - lo) / (hi - lo));
      return cv::Point(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
    };
    std::vector<cv::Point> g, d;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      g.push_back(to_point(i, std::isfinite(trace[i].g_loss) ? trace[i].g_loss : hi));
      d.push_back(to_point(i, std::isfinite(trace[i].d_loss) ? trace[i].d_loss : hi));
    }
    cv::polylines(canvas, g, false, cv::Scalar(200, 80, 20), 1, cv::LINE_AA);
    cv::polylines(canvas, d, false, cv::Scalar(20, 60, 200), 1, cv::LINE_AA);
    cv::putText(canvas, "G", cv::Point(kWidth - 60, 30), cv::FONT_HERSHEY_SIMPLEX, 0.6, cv::Scalar(200, 80, 20));
    cv::putText(canvas, "D", cv::Point(kWidth - 30, 30), cv::FONT_HERSHEY_SIMPLEX, 0.6, cv::Scalar(20, 60, 200));
  }
  if (!cv::imwrite(path.string(), canvas)) throw IoError("cannot write " + path.string());
}

void write_loss_trace_csv(const std::vector<LossRecord>& trace, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iteration,g_loss,d_loss,reg\n" << std::setprecision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << i << ',' << trace[i].g_loss << ',' << trace[i].d_loss << ',' << trace[i].reg << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// --- CSV -----------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Splits a CSV document into records; quoted fields may hold separators.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
      }
      field.clear();
      record.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw IoError("unterminated quoted CSV field");
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

double parse_real(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw IoError("bad number in report: '" + s + "'");
  }
  if (used != s.size()) throw IoError("bad number in report: '" + s + "'");
  return v;
}

constexpr const char* kCsvHeader = "id,kernel_l1,kernel_image_psnr,iterations,status";

json aggregate_json(const Aggregate& a) {
  return json{{"mean", a.mean}, {"median", a.median}, {"std", a.std}, {"count", a.count}};
}

}  // namespace

void write_report_csv(const EvalReport& report, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kCsvHeader << "\r\n";
  for (const auto& r : report.rows) {
    out << csv_field(r.id) << ',' << format_real(r.kernel_l1) << ',' << format_real(r.kernel_image_psnr) << ','
        << r.iterations << ',' << csv_field(r.failed ? "failed: " + r.error : "ok") << "\r\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<EvalRow> read_report_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto records = parse_csv(buf.str());
  if (records.empty()) throw IoError("empty report " + path.string());
  std::string header;
  for (std::size_t i = 0; i < records[0].size(); ++i) header += (i ? "," : "") + records[0][i];
  if (header != kCsvHeader) throw IoError("unexpected report header in " + path.string());
  std::vector<EvalRow> rows;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& f = records[i];
    if (f.size() != 5) throw IoError("report row " + std::to_string(i) + " has " + std::to_string(f.size()) + " fields");
    EvalRow r;
    r.id = f[0];
    r.kernel_l1 = parse_real(f[1]);
    r.kernel_image_psnr = parse_real(f[2]);
    r.iterations = static_cast<int>(parse_real(f[3]));
    if (f[4] != "ok") {
      r.failed = true;
      r.error = f[4].rfind("failed: ", 0) == 0 ? f[4].substr(8) : f[4];
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_report_json(const EvalReport& report, const fs::path& path) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json row{{"id", r.id},
             {"kernel_l1", r.kernel_l1},
             {"kernel_image_psnr", r.kernel_image_psnr},
             {"runtime_seconds", r.runtime_seconds},
             {"iterations", r.iterations},
             {"failed", r.failed}};
    if (r.failed) row["error"] = r.error;
    rows.push_back(std::move(row));
  }
  const json doc{{"rows", rows},
                 {"aggregates",
                  {{"kernel_l1", aggregate_json(report.kernel_l1)},
                   {"kernel_image_psnr", aggregate_json(report.kernel_image_psnr)},
                   {"runtime_seconds", aggregate_json(report.runtime_seconds)},
                   {"iterations", aggregate_json(report.iterations)}}},
                 {"failures", report.failures},
                 {"config", report.config}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// --- Benchmark loop ------------------------------------------------------------

namespace {

EvalRow evaluate_entry(const BenchmarkManifest& manifest, std::size_t index, const TrainConfig& base,
                       const fs::path& out_dir, const EvalOptions& options) {
  const BenchmarkEntry& e = manifest.entries[index];
  EvalRow row;
  row.id = e.id;
  try {
    TrainConfig cfg = base;
    cfg.seed = entry_seed(base.seed, index);
    cfg.checkpoint_dir.clear();
    const ImagePlane lr = load_image(manifest.resolve(e.lr_path));
    const Kernel truth = read_kernel_text(manifest.resolve(e.kernel_path));
    EstimationResult res;
    try {
      res = estimate_kernel(lr, cfg);
    } catch (const DivergenceError& div) {
      row.failed = true;
      row.error = div.what();
      row.iterations = div.iteration();
      if (options.plots) plot_loss_trace(div.trace(), out_dir / "plots" / (e.id + "_loss.png"));
      return row;
    }
    const Kernel& estimate = e.scale == 2 ? res.kernel_x2 : res.kernel_x4;
    const KernelDistance d = kernel_distance(truth, estimate, options.border_crop);
    row.kernel_l1 = d.l1;
    row.kernel_image_psnr = d.image_psnr;
    row.runtime_seconds = res.runtime_seconds;
    row.iterations = res.iterations_run;
    write_kernel_text(res.kernel_x2, out_dir / "kernels" / (e.id + "_x2.txt"));
    write_kernel_text(res.kernel_x4, out_dir / "kernels" / (e.id + "_x4.txt"));
    if (options.plots) {
      save_png(kernel_pair_image(truth, estimate), out_dir / "plots" / (e.id + "_kernels.png"));
      plot_loss_trace(res.loss_trace, out_dir / "plots" / (e.id + "_loss.png"));
    }
  } catch (const Error& err) {
    row.failed = true;
    row.error = err.what();
  }
  return row;
}

}  // namespace

EvalReport evaluate_benchmark(const BenchmarkManifest& manifest, const TrainConfig& cfg, const fs::path& out_dir,
                              const EvalOptions& options) {
  validate(cfg);
  if (options.border_crop < 0) throw ValidationError("border crop must be non-negative");
  fs::create_directories(out_dir / "kernels");
  if (options.plots) fs::create_directories(out_dir / "plots");

  const std::size_t n = manifest.entries.size();
  std::vector<EvalRow> rows(n);
  const int threads = std::max(1, std::min<int>(options.threads > 0 ? options.threads : thread_cap(),
                                                static_cast<int>(std::max<std::size_t>(n, 1))));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) rows[i] = evaluate_entry(manifest, i, cfg, out_dir, options);
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  EvalReport report;
  report.rows = std::move(rows);
  json c;
  to_json(c, cfg);
  report.config = json{{"train", c},
                       {"manifest_seed", manifest.global_seed},
                       {"scale", manifest.scale},
                       {"border_crop", options.border_crop}};
  report.recompute();
  write_report_csv(report, out_dir / "report.csv");
  write_report_json(report, out_dir / "report.json");
  return report;
}

}  // namespace blindkernel
