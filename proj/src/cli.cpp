#include "blindkernel/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "blindkernel/dataset.hpp"
#include "blindkernel/evaluation.hpp"
#include "blindkernel/trainer.hpp"

namespace blindkernel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Training overrides shared by estimate and evaluate.
struct Overrides {
  std::string config_path;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::optional<int> checkpoint_every;
  std::optional<std::string> generator;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "JSON training config")->check(CLI::ExistingFile);
    cmd.add_option("--iterations", iterations, "training iterations")->check(CLI::PositiveNumber);
    cmd.add_option("--seed", seed, "random seed");
    cmd.add_option("--checkpoint-every", checkpoint_every, "checkpoint period")->check(CLI::PositiveNumber);
    cmd.add_option("--generator", generator, "deep or single_layer")->check(CLI::IsMember({"deep", "single_layer"}));
  }

  // defaults < config file < flags
  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config " + config_path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ValidationError("malformed config " + config_path + ": " + e.what());
      }
      try {
        from_json(j, cfg);
      } catch (const json::exception& e) {
        throw ValidationError("bad value in config " + config_path + ": " + e.what());
      }
    }
    if (iterations) cfg.iterations = *iterations;
    if (seed) cfg.seed = *seed;
    if (checkpoint_every) cfg.checkpoint_every = *checkpoint_every;
    if (generator) cfg.generator = *generator == "deep" ? GeneratorKind::kDeep : GeneratorKind::kSingleLayer;
    validate(cfg);
    return cfg;
  }

  json echo() const {
    json j = json::object();
    if (!config_path.empty()) j["config"] = config_path;
    if (iterations) j["iterations"] = *iterations;
    if (seed) j["seed"] = *seed;
    if (checkpoint_every) j["checkpoint_every"] = *checkpoint_every;
    if (generator) j["generator"] = *generator;
    return j;
  }
};

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

int cmd_estimate(const fs::path& image, const fs::path& out_dir, int scale, bool keep_checkpoints,
                 const Overrides& ov, std::ostream& out) {
  if (!fs::exists(image)) throw IoError("input image not found: " + image.string());
  TrainConfig cfg = ov.resolve();
  if (keep_checkpoints) cfg.checkpoint_dir = out_dir / "checkpoints";
  const ImagePlane img = load_image(image);
  fs::create_directories(out_dir);

  json manifest{{"command", "estimate"},
                {"input", image.string()},
                {"input_height", img.height()},
                {"input_width", img.width()},
                {"scale", scale},
                {"overrides", ov.echo()}};
  json train;
  to_json(train, cfg);
  manifest["config"] = train;

  EstimationResult res;
  try {
    res = estimate_kernel(img, cfg);
  } catch (const DivergenceError& e) {
    write_loss_trace_csv(e.trace(), out_dir / "loss_trace.csv");
    manifest["status"] = "diverged";
    manifest["diverged_at"] = e.iteration();
    write_json(out_dir / "manifest.json", manifest);
    throw;
  }

  write_kernel_text(res.kernel_x2, out_dir / "kernel_x2.txt");
  write_kernel_text(res.kernel_x4, out_dir / "kernel_x4.txt");
  write_raw(res.kernel_x2.weights(), out_dir / "kernel_x2.rawf");
  write_raw(res.kernel_x4.weights(), out_dir / "kernel_x4.rawf");
  write_kernel_text(res.raw_kernel, out_dir / "kernel_raw.txt");
  write_loss_trace_csv(res.loss_trace, out_dir / "loss_trace.csv");

  const LossRecord last = res.loss_trace.empty() ? LossRecord{} : res.loss_trace.back();
  manifest["status"] = "ok";
  manifest["seed"] = res.seed;
  manifest["iterations_run"] = res.iterations_run;
  manifest["bootstrap_exit_iteration"] = res.bootstrap_exit_iteration;
  manifest["final"] = {{"g_loss", last.g_loss},
                       {"d_loss", last.d_loss},
                       {"reg", last.reg},
                       {"regularization", res.final_regularization}};
  manifest["runtime_seconds"] = res.runtime_seconds;
  manifest["artifacts"] = {"kernel_x2.txt", "kernel_x4.txt", "kernel_x2.rawf", "kernel_x4.rawf", "kernel_raw.txt",
                           "loss_trace.csv"};
  write_json(out_dir / "manifest.json", manifest);
  out << "kernel written to " << (out_dir / (scale == 2 ? "kernel_x2.txt" : "kernel_x4.txt")).string() << " ("
      << res.iterations_run << " iterations, " << res.runtime_seconds << " s)\n";
  return kExitOk;
}

int cmd_make_dataset(const fs::path& corpus, const fs::path& out_dir, int scale, int count, std::uint64_t seed,
                     double noise, std::ostream& out) {
  BenchmarkOptions opts;
  opts.noise_amplitude = noise;
  const BenchmarkManifest m = make_benchmark(corpus, out_dir, scale, count, seed, opts);
  out << m.entries.size() << " entries written to " << (out_dir / "manifest.json").string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const fs::path& manifest_path, const fs::path& out_dir, int border_crop, int threads, bool plots,
                 const Overrides& ov, std::ostream& out) {
  const TrainConfig cfg = ov.resolve();
  const BenchmarkManifest m = load_benchmark(manifest_path);
  EvalOptions opts;
  opts.border_crop = border_crop;
  opts.threads = threads;
  opts.plots = plots;
  EvalReport report = evaluate_benchmark(m, cfg, out_dir, opts);
  report.config["overrides"] = ov.echo();
  report.config["manifest"] = manifest_path.string();
  write_report_json(report, out_dir / "report.json");
  out << "median kernel L1 " << report.kernel_l1.median << ", median kernel PSNR " << report.kernel_image_psnr.median
      << " dB, failures " << report.failures << '\n';
  return kExitOk;
}

int cmd_derive_scale(const fs::path& kernel_path, const fs::path& out_path, std::ostream& out) {
  const Kernel k2 = read_kernel(kernel_path);
  const Kernel k4 = compose_scale(k2);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_kernel_text(k4, out_path);
  out << k2.rows() << 'x' << k2.cols() << " -> " << k4.rows() << 'x' << k4.cols() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind estimation of super-resolution downscaling kernels"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Overrides est_ov;
  std::string est_image;
  std::string est_out;
  int est_scale = 2;
  bool est_ckpt = false;
  auto* estimate = app.add_subcommand("estimate", "estimate the kernel of one image");
  estimate->add_option("image", est_image, "input image")->required();
  estimate->add_option("--out", est_out, "output directory")->required();
  estimate->add_option("--scale", est_scale, "scale of the reported kernel")->check(CLI::IsMember({2, 4}));
  estimate->add_flag("--keep-checkpoints", est_ckpt, "write checkpoint kernels under OUT/checkpoints");
  est_ov.attach(*estimate);

  std::string ds_corpus;
  std::string ds_out;
  int ds_scale = 2;
  int ds_count = 10;
  std::uint64_t ds_seed = 0;
  double ds_noise = 0.25;
  auto* make_dataset = app.add_subcommand("make-dataset", "synthesize a benchmark from a corpus");
  make_dataset->add_option("corpus", ds_corpus, "directory of source images")->required();
  make_dataset->add_option("--out", ds_out, "output directory")->required();
  make_dataset->add_option("--scale", ds_scale, "2 or 4")->check(CLI::IsMember({2, 4}));
  make_dataset->add_option("--count", ds_count, "number of images")->check(CLI::PositiveNumber);
  make_dataset->add_option("--seed", ds_seed, "global seed");
  make_dataset->add_option("--noise", ds_noise, "multiplicative kernel noise")->check(CLI::Range(0.0, 0.25));

  Overrides ev_ov;
  std::string ev_manifest;
  std::string ev_out;
  int ev_border = 0;
  int ev_threads = 0;
  bool ev_no_plots = false;
  auto* evaluate = app.add_subcommand("evaluate", "estimate and score every benchmark entry");
  evaluate->add_option("manifest", ev_manifest, "benchmark manifest.json")->required();
  evaluate->add_option("--out", ev_out, "report directory")->required();
  evaluate->add_option("--border-crop", ev_border, "pixels shaved before the kernel PSNR")
      ->check(CLI::NonNegativeNumber);
  evaluate->add_option("--threads", ev_threads, "worker threads (default BLINDKERNEL_THREADS)")
      ->check(CLI::NonNegativeNumber);
  evaluate->add_flag("--no-plots", ev_no_plots, "skip heat maps and loss plots");
  ev_ov.attach(*evaluate);

  std::string dv_in;
  std::string dv_out;
  auto* derive = app.add_subcommand("derive-scale", "x4 kernel from a x2 kernel");
  derive->add_option("kernel", dv_in, "x2 kernel file")->required();
  derive->add_option("out", dv_out, "x4 kernel file")->required();

  std::string wc_dir;
  int wc_size = 512;
  auto* corpus = app.add_subcommand("write-corpus", "write the procedural mini-corpus as PNGs");
  corpus->add_option("dir", wc_dir, "output directory")->required();
  corpus->add_option("--size", wc_size, "image side")->check(CLI::Range(64, 4096));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }

  try {
    if (*estimate) return cmd_estimate(est_image, est_out, est_scale, est_ckpt, est_ov, out);
    if (*make_dataset) return cmd_make_dataset(ds_corpus, ds_out, ds_scale, ds_count, ds_seed, ds_noise, out);
    if (*evaluate) return cmd_evaluate(ev_manifest, ev_out, ev_border, ev_threads, !ev_no_plots, ev_ov, out);
    if (*derive) return cmd_derive_scale(dv_in, dv_out, out);
    if (*corpus) {
      const auto paths = write_mini_corpus(wc_dir, wc_size);
      out << paths.size() << " images written to " << wc_dir << '\n';
      return kExitOk;
    }
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace blindkernel
