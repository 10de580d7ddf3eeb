#include "blindkernel/procedural.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <string_view>
#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

#include "blindkernel/errors.hpp"

namespace blindkernel {
namespace {

constexpr int kSupersample = 4;

ImagePlane from_canvas(const cv::Mat& canvas, int size) {
  cv::Mat small;
  cv::resize(canvas, small, cv::Size(size, size), 0, 0, cv::INTER_AREA);
  Plane out(size, size);
  for (int r = 0; r < size; ++r) {
    const float* row = small.ptr<float>(r);
    for (int c = 0; c < size; ++c) out(r, c) = std::clamp(static_cast<double>(row[c]), 0.0, 1.0);
  }
  return ImagePlane(std::move(out));
}

// Occluding disks with radius density ~ r^-3: statistically scale invariant.
cv::Mat dead_leaves(int big, std::mt19937_64& rng) {
  cv::Mat canvas(big, big, CV_32F, cv::Scalar(0.5));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rmin = 1.5 * kSupersample;
  const double rmax = 0.15 * big;
  const int count = 6000;
  for (int i = 0; i < count; ++i) {
    // Inverse CDF of p(r) ~ r^-3 on [rmin, rmax].
    const double u = unit(rng);
    const double inv2 = 1.0 / (rmin * rmin) - u * (1.0 / (rmin * rmin) - 1.0 / (rmax * rmax));
    const double radius = 1.0 / std::sqrt(inv2);
    const cv::Point center(static_cast<int>(unit(rng) * big), static_cast<int>(unit(rng) * big));
    const double value = 0.05 + 0.9 * unit(rng);
    cv::circle(canvas, center, static_cast<int>(radius), cv::Scalar(value), cv::FILLED, cv::LINE_8);
  }
  return canvas;
}

cv::Mat text(int big, std::mt19937_64& rng) {
  cv::Mat canvas(big, big, CV_32F, cv::Scalar(0.92));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  static constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
  const std::array fonts{cv::FONT_HERSHEY_SIMPLEX, cv::FONT_HERSHEY_DUPLEX, cv::FONT_HERSHEY_COMPLEX,
                         cv::FONT_HERSHEY_TRIPLEX};
  for (int line = 0; line < 140; ++line) {
    std::string word;
    const int len = 3 + static_cast<int>(unit(rng) * 8);
    for (int i = 0; i < len; ++i) word += kAlphabet[static_cast<std::size_t>(unit(rng) * kAlphabet.size())];
    const double scale = kSupersample * (0.3 + 2.2 * unit(rng) * unit(rng));
    const int thickness = std::max(1, static_cast<int>(scale * (0.8 + unit(rng))));
    const cv::Point origin(static_cast<int>((unit(rng) - 0.1) * big), static_cast<int>(unit(rng) * big));
    const double value = unit(rng) < 0.8 ? 0.05 + 0.2 * unit(rng) : 0.6 + 0.4 * unit(rng);
    cv::putText(canvas, word, origin, fonts[static_cast<std::size_t>(unit(rng) * fonts.size())], scale,
                cv::Scalar(value), thickness, cv::LINE_8);
  }
  return canvas;
}

cv::Mat checkerboard(int big, std::mt19937_64& rng) {
  cv::Mat canvas(big, big, CV_32F);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Four quadrants with different cell sizes and rotations.
  std::array<double, 4> cell{}, angle{}, lo{}, hi{};
  for (int q = 0; q < 4; ++q) {
    cell[q] = kSupersample * (3.0 + 22.0 * unit(rng));
    angle[q] = unit(rng) * std::numbers::pi / 2;
    lo[q] = 0.1 + 0.3 * unit(rng);
    hi[q] = 0.6 + 0.35 * unit(rng);
  }
  for (int r = 0; r < big; ++r) {
    auto* row = canvas.ptr<float>(r);
    for (int c = 0; c < big; ++c) {
      const int q = (r >= big / 2 ? 2 : 0) + (c >= big / 2 ? 1 : 0);
      const double x = std::cos(angle[q]) * c + std::sin(angle[q]) * r;
      const double y = -std::sin(angle[q]) * c + std::cos(angle[q]) * r;
      const bool odd = (static_cast<long>(std::floor(x / cell[q])) + static_cast<long>(std::floor(y / cell[q]))) & 1L;
      row[c] = static_cast<float>(odd ? hi[q] : lo[q]);
    }
  }
  return canvas;
}

cv::Mat polygons(int big, std::mt19937_64& rng) {
  cv::Mat canvas(big, big, CV_32F, cv::Scalar(0.4));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 900; ++i) {
    const int vertices = 3 + static_cast<int>(unit(rng) * 4);
    const double radius = kSupersample * (2.0 + 60.0 * std::pow(unit(rng), 3.0));
    const double cx = unit(rng) * big;
    const double cy = unit(rng) * big;
    const double phase = unit(rng) * 2 * std::numbers::pi;
    std::vector<cv::Point> pts;
    for (int v = 0; v < vertices; ++v) {
      const double a = phase + 2 * std::numbers::pi * v / vertices + 0.4 * (unit(rng) - 0.5);
      const double rr = radius * (0.6 + 0.4 * unit(rng));
      pts.emplace_back(static_cast<int>(cx + rr * std::cos(a)), static_cast<int>(cy + rr * std::sin(a)));
    }
    cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(0.05 + 0.9 * unit(rng)), cv::LINE_8);
  }
  return canvas;
}

cv::Mat rings(int big, std::mt19937_64& rng) {
  cv::Mat canvas(big, big, CV_32F, cv::Scalar(0.5));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 60; ++i) {
    const cv::Point center(static_cast<int>(unit(rng) * big), static_cast<int>(unit(rng) * big));
    const double outer = kSupersample * (4.0 + 70.0 * unit(rng) * unit(rng));
    const int bands = 2 + static_cast<int>(unit(rng) * 6);
    for (int b = 0; b < bands; ++b) {
      const int radius = static_cast<int>(outer * (bands - b) / bands);
      if (radius < 1) break;
      cv::circle(canvas, center, radius, cv::Scalar(b % 2 ? 0.1 + 0.2 * unit(rng) : 0.7 + 0.3 * unit(rng)),
                 cv::FILLED, cv::LINE_8);
    }
  }
  return canvas;
}

// Multi-octave value noise with 1/f amplitude, cut by a few sharp steps.
ImagePlane noise_edges(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Plane acc = Plane::Zero(size, size);
  double total_amp = 0.0;
  for (int grid = 4; grid <= size / 2; grid *= 2) {
    Plane lattice(grid + 1, grid + 1);
    for (Eigen::Index i = 0; i < lattice.size(); ++i) lattice.data()[i] = unit(rng) - 0.5;
    const double amp = 1.0 / grid;
    total_amp += amp;
    for (int r = 0; r < size; ++r) {
      const double fy = static_cast<double>(r) * grid / size;
      const int y0 = static_cast<int>(fy);
      const double ty = fy - y0;
      for (int c = 0; c < size; ++c) {
        const double fx = static_cast<double>(c) * grid / size;
        const int x0 = static_cast<int>(fx);
        const double tx = fx - x0;
        const double v = (1 - ty) * ((1 - tx) * lattice(y0, x0) + tx * lattice(y0, x0 + 1)) +
                         ty * ((1 - tx) * lattice(y0 + 1, x0) + tx * lattice(y0 + 1, x0 + 1));
        acc(r, c) += amp * v;
      }
    }
  }
  acc /= total_amp;
  // Sharp half-plane steps.
  for (int s = 0; s < 12; ++s) {
    const double a = unit(rng) * 2 * std::numbers::pi;
    const double offset = unit(rng) * size;
    const double jump = 0.35 * (unit(rng) - 0.5);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        if (std::cos(a) * c + std::sin(a) * r > offset) acc(r, c) += jump;
  }
  const double lo = acc.minCoeff();
  const double hi = acc.maxCoeff();
  return ImagePlane(Plane(((acc.array() - lo) / (hi - lo) * 0.9 + 0.05).matrix()));
}

}  // namespace

std::string to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::kDeadLeaves: return "dead_leaves";
    case PatternKind::kText: return "text";
    case PatternKind::kNoiseEdges: return "noise_edges";
    case PatternKind::kCheckerboard: return "checkerboard";
    case PatternKind::kPolygons: return "polygons";
    case PatternKind::kRings: return "rings";
  }
  return "unknown";
}

ImagePlane make_pattern(PatternKind kind, int size, std::uint64_t seed) {
  if (size < 8) throw ValidationError("pattern size must be at least 8");
  std::mt19937_64 rng(seed);
  const int big = size * kSupersample;
  switch (kind) {
    case PatternKind::kDeadLeaves: return from_canvas(dead_leaves(big, rng), size);
    case PatternKind::kText: return from_canvas(text(big, rng), size);
    case PatternKind::kCheckerboard: return from_canvas(checkerboard(big, rng), size);
    case PatternKind::kPolygons: return from_canvas(polygons(big, rng), size);
    case PatternKind::kRings: return from_canvas(rings(big, rng), size);
    case PatternKind::kNoiseEdges: return noise_edges(size, rng);
  }
  throw ValidationError("unknown pattern kind");
}

const ImagePlane& reference_test_image() {
  static const ImagePlane image = make_pattern(PatternKind::kDeadLeaves, 128, 20190601);
  return image;
}

std::vector<CorpusImage> mini_corpus(int size) {
  const std::array<std::pair<PatternKind, std::uint64_t>, 10> plan{{
      {PatternKind::kDeadLeaves, 11},
      {PatternKind::kDeadLeaves, 12},
      {PatternKind::kDeadLeaves, 13},
      {PatternKind::kText, 21},
      {PatternKind::kText, 22},
      {PatternKind::kNoiseEdges, 31},
      {PatternKind::kNoiseEdges, 32},
      {PatternKind::kCheckerboard, 41},
      {PatternKind::kPolygons, 51},
      {PatternKind::kRings, 61},
  }};
  std::vector<CorpusImage> corpus;
  corpus.reserve(plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& [kind, seed] = plan[i];
    char name[64];
    std::snprintf(name, sizeof name, "%02zu_%s", i, to_string(kind).c_str());
    corpus.push_back({name, make_pattern(kind, size, seed)});
  }
  return corpus;
}

}  // namespace blindkernel
