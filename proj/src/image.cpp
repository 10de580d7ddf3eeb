#include "blindkernel/image.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "blindkernel/errors.hpp"

namespace blindkernel {

static_assert(std::endian::native == std::endian::little,
              "raw float I/O assumes a little-endian host");

Kernel::Kernel(int rows, int cols) {
  if (rows <= 0 || cols <= 0 || rows % 2 == 0 || cols % 2 == 0) {
    throw ValidationError("kernel sides must be odd and positive, got " +
                          std::to_string(rows) + "x" + std::to_string(cols));
  }
  weights_ = Plane::Zero(rows, cols);
}

Kernel::Kernel(Plane weights) : Kernel(static_cast<int>(weights.rows()), static_cast<int>(weights.cols())) {
  if (!weights.allFinite()) throw ValidationError("kernel has non-finite weights");
  weights_ = std::move(weights);
}

Kernel Kernel::delta(int size) {
  Kernel k(size, size);
  k(size / 2, size / 2) = 1.0;
  return k;
}

ImagePlane::ImagePlane(int height, int width, double fill)
    : pixels_(Plane::Constant(height, width, fill)) {}

void validate_crop(const ImagePlane& img, const CropSpec& spec) {
  if (spec.size <= 0 || spec.top < 0 || spec.left < 0 ||
      spec.top + spec.size > img.height() || spec.left + spec.size > img.width()) {
    throw ValidationError("crop (" + std::to_string(spec.top) + "," + std::to_string(spec.left) +
                          ") size " + std::to_string(spec.size) + " does not fit a " +
                          std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                          " plane");
  }
}

ImagePlane crop(const ImagePlane& img, const CropSpec& spec) {
  validate_crop(img, spec);
  return ImagePlane(Plane(img.pixels().block(spec.top, spec.left, spec.size, spec.size)));
}

// --- I/O -------------------------------------------------------------------

bool is_raw_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint32_t magic = 0;
  if (!in.read(reinterpret_cast<char*>(&magic), sizeof magic)) return false;
  return magic == kRawFloatMagic;
}

void write_raw(const Plane& values, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::array<std::uint32_t, 3> header{kRawFloatMagic, static_cast<std::uint32_t>(values.rows()),
                                            static_cast<std::uint32_t>(values.cols())};
  out.write(reinterpret_cast<const char*>(header.data()), sizeof header);
  std::vector<float> buf(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values.data()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

Plane read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<std::uint32_t, 3> header{};
  if (!in.read(reinterpret_cast<char*>(header.data()), sizeof header) ||
      header[0] != kRawFloatMagic) {
    throw IoError(path.string() + " is not a raw float file");
  }
  const auto rows = static_cast<Eigen::Index>(header[1]);
  const auto cols = static_cast<Eigen::Index>(header[2]);
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw IoError(path.string() + " is truncated");
  }
  Plane out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = buf[i];
  return out;
}

ImagePlane load_image(const std::filesystem::path& path, bool to_luminance) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  Plane pixels;
  if (is_raw_file(path)) {
    pixels = read_raw(path);
  } else {
    const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
    if (raw.empty()) throw IoError("cannot decode image: " + path.string());
    double scale = 0.0;
    switch (raw.depth()) {
      case CV_8U: scale = 1.0 / 255.0; break;
      case CV_16U: scale = 1.0 / 65535.0; break;
      default: throw IoError("unsupported bit depth in " + path.string());
    }
    cv::Mat values;
    raw.convertTo(values, CV_64F, scale);
    const int channels = values.channels();
    if (channels >= 3 && !to_luminance) {
      throw ValidationError("colour image " + path.string() + " needs luminance conversion");
    }
    pixels.resize(values.rows, values.cols);
    for (int r = 0; r < values.rows; ++r) {
      const double* row = values.ptr<double>(r);
      for (int c = 0; c < values.cols; ++c) {
        const double* px = row + static_cast<std::ptrdiff_t>(c) * channels;
        // OpenCV stores colour as BGR(A).
        pixels(r, c) = channels >= 3 ? 0.299 * px[2] + 0.587 * px[1] + 0.114 * px[0] : px[0];
      }
    }
  }
  if (pixels.size() == 0) throw ValidationError("zero-area image: " + path.string());
  if (!pixels.allFinite()) throw ValidationError("non-finite pixels in " + path.string());
  return ImagePlane(Plane(pixels.cwiseMax(0.0).cwiseMin(1.0)));
}

void save_png(const Plane& pixels, const std::filesystem::path& path) {
  cv::Mat out(static_cast<int>(pixels.rows()), static_cast<int>(pixels.cols()), CV_8U);
  for (int r = 0; r < out.rows; ++r) {
    auto* row = out.ptr<std::uint8_t>(r);
    for (int c = 0; c < out.cols; ++c) {
      row[c] = static_cast<std::uint8_t>(std::lround(std::clamp(pixels(r, c), 0.0, 1.0) * 255.0));
    }
  }
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write " + path.string());
}

// --- Linear operators ------------------------------------------------------

Plane correlate_valid(const Plane& img, const Plane& weights) {
  const Eigen::Index out_h = img.rows() - weights.rows() + 1;
  const Eigen::Index out_w = img.cols() - weights.cols() + 1;
  if (out_h <= 0 || out_w <= 0) throw ValidationError("kernel larger than image");
  Plane out = Plane::Zero(out_h, out_w);
  for (Eigen::Index a = 0; a < weights.rows(); ++a) {
    for (Eigen::Index b = 0; b < weights.cols(); ++b) {
      out.noalias() += weights(a, b) * img.block(a, b, out_h, out_w);
    }
  }
  return out;
}

int downscaled_size(int input, int kernel_side, int scale) {
  return (input - kernel_side + 1 + scale - 1) / scale;
}

ImagePlane downscale_with_kernel(const ImagePlane& img, const Plane& weights, int scale) {
  if (scale < 1) throw ValidationError("scale must be positive");
  if (weights.rows() > img.height() || weights.cols() > img.width()) {
    throw ValidationError("kernel larger than image");
  }
  const int out_h = downscaled_size(img.height(), static_cast<int>(weights.rows()), scale);
  const int out_w = downscaled_size(img.width(), static_cast<int>(weights.cols()), scale);
  Plane out = Plane::Zero(out_h, out_w);
  const Plane& x = img.pixels();
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      double acc = 0.0;
      for (Eigen::Index a = 0; a < weights.rows(); ++a) {
        const double* src = &x(i * scale + a, j * scale);
        const double* w = &weights(a, 0);
        for (Eigen::Index b = 0; b < weights.cols(); ++b) acc += w[b] * src[b];
      }
      out(i, j) = acc;
    }
  }
  return ImagePlane(std::move(out));
}

double cubic(double x) {
  const double ax = std::abs(x);
  const double ax2 = ax * ax;
  const double ax3 = ax2 * ax;
  if (ax <= 1.0) return 1.5 * ax3 - 2.5 * ax2 + 1.0;
  if (ax <= 2.0) return -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0;
  return 0.0;
}

namespace {

// Row i holds the resampling weights of output sample i over the input axis.
Plane bicubic_weights(int in_len, int scale) {
  const int out_len = (in_len + scale - 1) / scale;
  const double support = 4.0 * scale;
  const int taps = static_cast<int>(std::ceil(support)) + 2;
  Plane w = Plane::Zero(out_len, in_len);
  for (int i = 0; i < out_len; ++i) {
    // Input coordinate of the output sample center (zero-based).
    const double u = (i + 0.5) * scale - 0.5;
    const int left = static_cast<int>(std::floor(u - support / 2.0));
    double total = 0.0;
    std::vector<std::pair<int, double>> row;
    row.reserve(taps);
    for (int t = 0; t < taps; ++t) {
      const int idx = left + t;
      const double weight = cubic((u - idx) / scale) / scale;
      if (weight == 0.0) continue;
      // Symmetric boundary: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
      const int period = 2 * in_len;
      int m = ((idx % period) + period) % period;
      if (m >= in_len) m = period - 1 - m;
      row.emplace_back(m, weight);
      total += weight;
    }
    for (const auto& [m, weight] : row) w(i, m) += weight / total;
  }
  return w;
}

}  // namespace

ImagePlane bicubic_downscale(const ImagePlane& img, int scale) {
  if (scale != 2 && scale != 4) throw ValidationError("bicubic_downscale supports scale 2 or 4");
  if (img.height() < scale || img.width() < scale) throw ValidationError("image too small");
  const Plane rows = bicubic_weights(img.height(), scale);
  const Plane cols = bicubic_weights(img.width(), scale);
  return ImagePlane(Plane(rows * img.pixels() * cols.transpose()));
}

Plane gradient_content_map(const ImagePlane& img) {
  const int h = img.height();
  const int w = img.width();
  if (h < 3 || w < 3) throw ValidationError("gradient map needs at least 3x3 pixels");
  Plane g = Plane::Zero(h, w);
  for (int r = 1; r < h - 1; ++r) {
    for (int c = 1; c < w - 1; ++c) {
      const double dx = 0.5 * (img(r, c + 1) - img(r, c - 1));
      const double dy = 0.5 * (img(r + 1, c) - img(r - 1, c));
      g(r, c) = std::abs(dx) + std::abs(dy);
    }
  }
  for (int c = 1; c < w - 1; ++c) {
    g(0, c) = g(1, c);
    g(h - 1, c) = g(h - 2, c);
  }
  for (int r = 0; r < h; ++r) {
    g(r, 0) = g(r, 1);
    g(r, w - 1) = g(r, w - 2);
  }
  return g;
}

}  // namespace blindkernel
