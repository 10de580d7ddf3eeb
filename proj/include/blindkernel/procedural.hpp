#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blindkernel/image.hpp"

namespace blindkernel {

/// Families of sharp synthetic images used for the bundled mini-corpus.
enum class PatternKind { kDeadLeaves, kText, kNoiseEdges, kCheckerboard, kPolygons, kRings };

std::string to_string(PatternKind kind);

/// Deterministic sharp test image of the given family. Geometry is rendered
/// with 4x4 supersampling so edges are sharp but not aliased.
ImagePlane make_pattern(PatternKind kind, int size, std::uint64_t seed);

/// The fixed 128x128 image used to compare kernels by their effect.
const ImagePlane& reference_test_image();

struct CorpusImage {
  std::string name;
  ImagePlane image;
};

/// The 10-image mini-corpus (512x512 each).
std::vector<CorpusImage> mini_corpus(int size = 512);

}  // namespace blindkernel
