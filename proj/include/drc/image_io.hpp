#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "drc/tensor.hpp"

namespace drc {

// Loads PNG (8/16-bit gray, palette, RGB/RGBA), baseline JPEG, or PGM/PPM as
// a (h, w) luminance grid in [0, 1]. Color images are reduced with Rec. 601
// weights before the preprocessing pipeline sees them.
Tensor load_image_gray(const std::filesystem::path& path);

// Fixed-settings PNG writers (filter 0, stored deflate blocks): output bytes
// depend only on the pixel payload, never on the zlib version, so golden-file
// comparisons stay stable.
void write_png_rgb8(const std::filesystem::path& path, const std::uint8_t* pixels,
                    int width, int height);
void write_png_gray8(const std::filesystem::path& path, const std::uint8_t* pixels,
                     int width, int height);

// PGM (P5) writer for quick synthetic fixtures.
void write_pgm(const std::filesystem::path& path, const std::uint8_t* pixels, int width,
               int height);

} // namespace drc
