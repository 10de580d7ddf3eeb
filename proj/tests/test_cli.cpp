#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "blindkernel/cli.hpp"
#include "blindkernel/kernel_algebra.hpp"
#include "blindkernel/procedural.hpp"
#include "test_util.hpp"

using namespace blindkernel;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(testutil::slurp(p)); }

// A 100x100 raw image, enough for the default crops.
fs::path input_image() {
  static const fs::path path = [] {
    const fs::path dir = testutil::scratch_dir("cli_input");
    write_raw(make_pattern(PatternKind::kPolygons, 100, 4).pixels(), dir / "lr.rawf");
    return dir / "lr.rawf";
  }();
  return path;
}

}  // namespace

TEST_CASE("usage errors and help") {
  CHECK(cli({}).code == kExitFailure);
  const Run help = cli({"--help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("estimate") != std::string::npos);
  CHECK(help.out.find("derive-scale") != std::string::npos);
  CHECK(cli({"estimate", "--help"}).code == kExitOk);
  CHECK(cli({"frobnicate"}).code == kExitFailure);
  CHECK(cli({"estimate", input_image().string(), "--out", "x", "--bogus"}).code == kExitFailure);
  CHECK(cli({"estimate", input_image().string(), "--out", "x", "--scale", "3"}).code == kExitFailure);
  CHECK(cli({"estimate", input_image().string()}).code == kExitFailure);
}

TEST_CASE("missing input names the path") {
  const Run r = cli({"estimate", "/nonexistent/picture.png", "--out", testutil::scratch_dir("cli_missing").string()});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.find("/nonexistent/picture.png") != std::string::npos);
}

TEST_CASE("estimate writes its artifacts and is reproducible") {
  const fs::path a = testutil::scratch_dir("cli_est_a");
  const fs::path b = testutil::scratch_dir("cli_est_b");
  const std::vector<std::string> common{"--iterations", "6", "--seed", "5", "--checkpoint-every", "3"};
  auto args = [&](const fs::path& out) {
    std::vector<std::string> v{"estimate", input_image().string(), "--out", out.string()};
    v.insert(v.end(), common.begin(), common.end());
    return v;
  };
  REQUIRE(cli(args(a)).code == kExitOk);
  REQUIRE(cli(args(b)).code == kExitOk);
  for (const char* name : {"kernel_x2.txt", "kernel_x4.txt", "kernel_x2.rawf", "kernel_x4.rawf", "loss_trace.csv"}) {
    CAPTURE(name);
    REQUIRE(fs::exists(a / name));
    CHECK(testutil::slurp(a / name) == testutil::slurp(b / name));
  }
  CHECK(read_kernel(a / "kernel_x2.txt").rows() == 13);
  CHECK(read_kernel(a / "kernel_x4.txt").rows() == 37);

  const nlohmann::json m = read_json(a / "manifest.json");
  CHECK(m.at("status") == "ok");
  CHECK(m.at("seed") == 5);
  CHECK(m.at("iterations_run") == 6);
  CHECK(m.at("overrides").at("iterations") == 6);
  CHECK(m.at("overrides").at("seed") == 5);
  CHECK(m.at("overrides").at("checkpoint_every") == 3);
  CHECK(m.at("config").at("iterations") == 6);
  CHECK(m.contains("runtime_seconds"));

  const fs::path c = testutil::scratch_dir("cli_est_c");
  REQUIRE(cli({"estimate", input_image().string(), "--out", c.string(), "--iterations", "6", "--seed", "6"}).code ==
          kExitOk);
  CHECK(testutil::slurp(a / "kernel_x2.txt") != testutil::slurp(c / "kernel_x2.txt"));
}

TEST_CASE("config file sits between defaults and flags") {
  const fs::path dir = testutil::scratch_dir("cli_cfg");
  std::ofstream(dir / "cfg.json") << R"({"iterations": 4, "seed": 1, "g_lr": 0.001, "generator": "single_layer"})";
  REQUIRE(cli({"estimate", input_image().string(), "--out", (dir / "run").string(), "--config",
               (dir / "cfg.json").string(), "--seed", "9"})
              .code == kExitOk);
  const nlohmann::json m = read_json(dir / "run" / "manifest.json");
  CHECK(m.at("config").at("iterations") == 4);
  CHECK(m.at("config").at("seed") == 9);
  CHECK(m.at("config").at("g_lr") == 0.001);
  CHECK(m.at("config").at("d_lr") == 2e-4);
  CHECK(m.at("config").at("generator") == "single_layer");
  CHECK(m.at("overrides").at("config") == (dir / "cfg.json").string());
  CHECK_FALSE(m.at("overrides").contains("iterations"));

  std::ofstream(dir / "typo.json") << R"({"iteration": 4})";
  const Run bad = cli({"estimate", input_image().string(), "--out", (dir / "typo").string(), "--config",
                       (dir / "typo.json").string()});
  CHECK(bad.code == kExitFailure);
  CHECK(bad.err.find("iteration") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{";
  CHECK(cli({"estimate", input_image().string(), "--out", (dir / "broken").string(), "--config",
             (dir / "broken.json").string()})
            .code == kExitFailure);
}

TEST_CASE("divergence exits with its own code") {
  const fs::path dir = testutil::scratch_dir("cli_diverge");
  std::ofstream(dir / "hot.json") << R"({"g_lr": 1e60, "iterations": 50})";
  const Run r = cli({"estimate", input_image().string(), "--out", (dir / "run").string(), "--config",
                     (dir / "hot.json").string()});
  CHECK(r.code == kExitDivergence);
  const nlohmann::json m = read_json(dir / "run" / "manifest.json");
  CHECK(m.at("status") == "diverged");
  CHECK(fs::exists(dir / "run" / "loss_trace.csv"));
}

TEST_CASE("derive-scale") {
  const fs::path dir = testutil::scratch_dir("cli_derive");
  Plane w = Plane::Zero(13, 13);
  w.block(5, 5, 3, 3).setConstant(1.0 / 9.0);
  write_kernel_text(Kernel(w), dir / "k2.txt");
  const Run r = cli({"derive-scale", (dir / "k2.txt").string(), (dir / "out" / "k4.txt").string()});
  REQUIRE(r.code == kExitOk);
  const Kernel k4 = read_kernel(dir / "out" / "k4.txt");
  CHECK(k4.rows() == 37);
  CHECK(k4.weights() == compose_scale(Kernel(w)).weights());
  CHECK(cli({"derive-scale", (dir / "none.txt").string(), (dir / "k4.txt").string()}).code == kExitFailure);
}

TEST_CASE("corpus, dataset and evaluation commands") {
  const fs::path dir = testutil::scratch_dir("cli_pipeline");
  REQUIRE(cli({"write-corpus", (dir / "corpus").string(), "--size", "150"}).code == kExitOk);
  CHECK(std::distance(fs::directory_iterator(dir / "corpus"), fs::directory_iterator{}) == 10);

  CHECK(cli({"make-dataset", (dir / "corpus").string(), "--out", (dir / "x").string(), "--noise", "0.3"}).code ==
        kExitFailure);
  REQUIRE(cli({"make-dataset", (dir / "corpus").string(), "--out", (dir / "bench").string(), "--count", "2", "--seed",
               "4", "--noise", "0"})
              .code == kExitOk);
  const nlohmann::json bench = read_json(dir / "bench" / "manifest.json");
  CHECK(bench.at("entries").size() == 2);

  const Run ev = cli({"evaluate", (dir / "bench" / "manifest.json").string(), "--out", (dir / "report").string(),
                      "--iterations", "3", "--no-plots", "--threads", "1"});
  REQUIRE(ev.code == kExitOk);
  const nlohmann::json report = read_json(dir / "report" / "report.json");
  CHECK(report.at("rows").size() == 2);
  CHECK(report.at("config").at("overrides").at("iterations") == 3);
  CHECK(report.at("config").at("train").at("iterations") == 3);
  CHECK(fs::exists(dir / "report" / "report.csv"));

  std::ofstream(dir / "corrupt.json") << R"({"entries": 3})";
  CHECK(cli({"evaluate", (dir / "corrupt.json").string(), "--out", (dir / "r2").string()}).code == kExitFailure);
  CHECK(cli({"evaluate", (dir / "absent.json").string(), "--out", (dir / "r3").string()}).code == kExitFailure);
}
