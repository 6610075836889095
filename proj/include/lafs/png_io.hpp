#pragma once

// Minimal PNG reader/writer over zlib: 8-bit grayscale or 8-bit RGB,
// non-interlaced. The writer emits filter type None on every scanline; the
// reader handles all five standard filters and verifies chunk CRCs.
// Pixel values map linearly between float [0, 1] and bytes [0, 255].

#include <string>

#include "lafs/geometry.hpp"

namespace lafs {

// img.channels must be 1 (grayscale) or 3 (RGB).
void write_png(const std::string& path, const Image& img);

// Returns a 1- or 3-channel image matching the file's color type.
Image read_png(const std::string& path);

}  // namespace lafs
