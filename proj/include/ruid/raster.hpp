#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ruid/html.hpp"
#include "ruid/rgb.hpp"

// Deterministic software rendering of element lists. Stands in for the
// browser screenshot step so the code -> image -> metric -> reward loop is
// hermetic: identical inputs produce bit-identical images on every platform.

namespace ruid::raster {

struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels; // row-major RGB, 3 bytes per pixel

    static RasterImage filled(int w, int h, Rgb color);

    Rgb get(int x, int y) const {
        size_t i = (static_cast<size_t>(y) * width + x) * 3;
        return {pixels[i], pixels[i + 1], pixels[i + 2]};
    }
    void set(int x, int y, Rgb c) {
        size_t i = (static_cast<size_t>(y) * width + x) * 3;
        pixels[i] = c.r;
        pixels[i + 1] = c.g;
        pixels[i + 2] = c.b;
    }
    bool operator==(const RasterImage&) const = default;
};

struct PixelMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> bits; // 0/1 per pixel, row-major

    size_t popcount() const;
};

enum class TextMode { None, Box };

struct RenderOptions {
    TextMode text_mode = TextMode::Box;
    Rgb background{255, 255, 255};
};

constexpr Rgb kButtonFill{0xEF, 0xEF, 0xEF};
constexpr Rgb kButtonBorder{0x76, 0x76, 0x76};
constexpr Rgb kTextColor{0x33, 0x33, 0x33};

// Paints elements over a background in document order. Rectangle edges are
// percentage coordinates rounded half-up to pixels; ellipses cover pixels
// whose centers fall inside the inscribed ellipse. Content outside the
// viewport is clipped. Throws ViewportTooSmall below 16x16.
RasterImage render(const std::vector<html::RuidElement>& elements, int viewport_w, int viewport_h,
                   const RenderOptions& options = {});

// Bit set exactly where a pixel differs from the background color.
PixelMask foreground_mask(const RasterImage& image, Rgb background = {255, 255, 255});

// Debug export (binary PGM, foreground=255).
void write_pgm(const PixelMask& mask, const std::string& path);

} // namespace ruid::raster
