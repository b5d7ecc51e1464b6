#pragma once

#include <string>

#include "patchforge/features.hpp"

namespace patchforge {

// Reads .pgm (P2 or P5, maxval up to 65535) or .png; color PNGs are reduced
// to grayscale with luminance weights 0.299 / 0.587 / 0.114. Dispatch is by
// file extension. Throws with the path on unreadable or malformed files.
RasterImage read_image(const std::string& path);

RasterImage read_pgm(const std::string& path);
RasterImage read_png(const std::string& path);

// Binary P5, maxval 255. Values are clamped to [0, 1] before quantizing.
void write_pgm(const std::string& path, const RasterImage& img);

} // namespace patchforge
