#pragma once

#include <cstdint>
#include <filesystem>

#include "blindkernel/kernel.hpp"
#include "blindkernel/plane.hpp"

namespace blindkernel {

/// Single-channel floating point image. Values are clamped to [0, 1] only
/// when ingested from disk; intermediate planes (generator outputs,
/// residuals) may leave that range.
class ImagePlane {
 public:
  ImagePlane() = default;
  ImagePlane(int height, int width, double fill = 0.0);
  explicit ImagePlane(Plane pixels) : pixels_(std::move(pixels)) {}

  int height() const { return static_cast<int>(pixels_.rows()); }
  int width() const { return static_cast<int>(pixels_.cols()); }
  bool empty() const { return pixels_.size() == 0; }

  double operator()(int r, int c) const { return pixels_(r, c); }
  double& operator()(int r, int c) { return pixels_(r, c); }

  const Plane& pixels() const { return pixels_; }
  Plane& pixels() { return pixels_; }

 private:
  Plane pixels_;
};

/// Square crop window inside a plane.
struct CropSpec {
  int top = 0;
  int left = 0;
  int size = 0;
};

/// Throws ValidationError when `spec` does not fit inside `img`.
void validate_crop(const ImagePlane& img, const CropSpec& spec);
ImagePlane crop(const ImagePlane& img, const CropSpec& spec);

// --- I/O -------------------------------------------------------------------

/// Magic number of the raw float format ("BKRF" little-endian).
inline constexpr std::uint32_t kRawFloatMagic = 0x46524B42u;

/// Reads a PNG/JPEG/BMP raster (8 or 16 bit) or a raw float file. Raster
/// values are scaled to [0, 1]; colour rasters require `to_luminance`
/// and are combined as 0.299 R + 0.587 G + 0.114 B. Raw float files are
/// clamped to [0, 1] as well.
ImagePlane load_image(const std::filesystem::path& path, bool to_luminance = true);

/// 8-bit grayscale PNG, values clamped to [0, 1] then rounded.
void save_png(const Plane& pixels, const std::filesystem::path& path);
inline void save_png(const ImagePlane& img, const std::filesystem::path& path) {
  save_png(img.pixels(), path);
}

/// Raw float format: three little-endian uint32 (magic, height, width)
/// followed by height*width little-endian float32 values, row-major.
void write_raw(const Plane& values, const std::filesystem::path& path);
Plane read_raw(const std::filesystem::path& path);
bool is_raw_file(const std::filesystem::path& path);

// --- Linear operators ------------------------------------------------------

/// Valid-region cross-correlation (no flip, no padding).
Plane correlate_valid(const Plane& img, const Plane& weights);

/// Output side of downscale_with_kernel along one axis.
int downscaled_size(int input, int kernel_side, int scale);

/// Valid cross-correlation with `weights` followed by keeping rows and
/// columns whose index is 0 mod `scale`. Throws ValidationError if the
/// kernel is larger than the image or scale < 1.
ImagePlane downscale_with_kernel(const ImagePlane& img, const Plane& weights, int scale);
inline ImagePlane downscale_with_kernel(const ImagePlane& img, const Kernel& k, int scale) {
  return downscale_with_kernel(img, k.weights(), scale);
}

/// Antialiased bicubic resize by 1/scale (cubic convolution, a = -0.5,
/// support stretched by `scale`, symmetric boundary, per-pixel weight
/// normalization). Output side is ceil(input / scale). scale in {2, 4}.
ImagePlane bicubic_downscale(const ImagePlane& img, int scale);

/// Cubic convolution kernel with a = -0.5.
double cubic(double x);

/// |d/dx| + |d/dy| by central differences on the interior, with the border
/// rows and columns copied from their nearest interior neighbour.
Plane gradient_content_map(const ImagePlane& img);

}  // namespace blindkernel
