#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ruid/raster.hpp"

// PNG encode/decode for RasterImage (8-bit RGB). Encoding settings are
// pinned so identical images always produce identical bytes. Decoding
// accepts any well-formed PNG (palette, gray, 16-bit, alpha) and converts
// to 8-bit RGB; broken input raises MalformedPng.

namespace ruid::png_io {

using TextChunks = std::vector<std::pair<std::string, std::string>>;

std::vector<uint8_t> encode_png(const raster::RasterImage& image, const TextChunks& text = {});
raster::RasterImage decode_png(const std::vector<uint8_t>& bytes);

void write_png_file(const raster::RasterImage& image, const std::string& path, const TextChunks& text = {});
raster::RasterImage read_png_file(const std::string& path);

} // namespace ruid::png_io
