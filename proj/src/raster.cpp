#include "ruid/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ruid/errors.hpp"

namespace ruid::raster {

namespace {

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

int clamp_int(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

void fill_rect(RasterImage& img, int x0, int y0, int x1, int y1, Rgb c) {
    x0 = clamp_int(x0, 0, img.width);
    x1 = clamp_int(x1, 0, img.width);
    y0 = clamp_int(y0, 0, img.height);
    y1 = clamp_int(y1, 0, img.height);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) img.set(x, y, c);
}

// 1px ring just inside [x0,x1)x[y0,y1).
void stroke_rect(RasterImage& img, int x0, int y0, int x1, int y1, Rgb c) {
    fill_rect(img, x0, y0, x1, y0 + 1, c);
    fill_rect(img, x0, y1 - 1, x1, y1, c);
    fill_rect(img, x0, y0, x0 + 1, y1, c);
    fill_rect(img, x1 - 1, y0, x1, y1, c);
}

void fill_ellipse(RasterImage& img, double cx, double cy, double a, double b, Rgb c) {
    if (a <= 0 || b <= 0) return;
    int x0 = clamp_int(static_cast<int>(std::floor(cx - a)), 0, img.width);
    int x1 = clamp_int(static_cast<int>(std::ceil(cx + a)) + 1, 0, img.width);
    int y0 = clamp_int(static_cast<int>(std::floor(cy - b)), 0, img.height);
    int y1 = clamp_int(static_cast<int>(std::ceil(cy + b)) + 1, 0, img.height);
    for (int y = y0; y < y1; ++y) {
        double dy = (y + 0.5 - cy) / b;
        for (int x = x0; x < x1; ++x) {
            double dx = (x + 0.5 - cx) / a;
            if (dx * dx + dy * dy <= 1.0) img.set(x, y, c);
        }
    }
}

struct ElementBox {
    double left, top, width, height; // percents, absent fields defaulted
};

ElementBox box_of(const html::RuidElement& e) {
    return {e.left_pct.value_or(0.0), e.top_pct.value_or(0.0), e.width_pct.value_or(0.0),
            e.height_pct.value_or(0.0)};
}

void draw_text_box(RasterImage& img, double cx, double cy, const std::string& word) {
    if (word.empty()) return;
    int w = 8 * static_cast<int>(word.size());
    int h = 16;
    int x0 = round_half_up(cx - w / 2.0);
    int y0 = round_half_up(cy - h / 2.0);
    fill_rect(img, x0, y0, x0 + w, y0 + h, kTextColor);
}

} // namespace

RasterImage RasterImage::filled(int w, int h, Rgb color) {
    RasterImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<size_t>(w) * h * 3);
    for (size_t i = 0; i < img.pixels.size(); i += 3) {
        img.pixels[i] = color.r;
        img.pixels[i + 1] = color.g;
        img.pixels[i + 2] = color.b;
    }
    return img;
}

size_t PixelMask::popcount() const {
    size_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
}

RasterImage render(const std::vector<html::RuidElement>& elements, int viewport_w, int viewport_h,
                   const RenderOptions& options) {
    if (viewport_w < 16 || viewport_h < 16)
        throw ViewportTooSmall("viewport must be at least 16x16, got " + std::to_string(viewport_w) + "x" +
                               std::to_string(viewport_h));
    const double W = viewport_w, H = viewport_h;
    RasterImage img = RasterImage::filled(viewport_w, viewport_h, options.background);

    for (const auto& elem : elements) {
        ElementBox box = box_of(elem);
        // Edges are rounded, not widths, so adjacent elements tile without gaps.
        int x0 = round_half_up(box.left / 100.0 * W);
        int x1 = round_half_up((box.left + box.width) / 100.0 * W);
        int y0 = round_half_up(box.top / 100.0 * H);
        int y1 = round_half_up((box.top + box.height) / 100.0 * H);
        double cx = (box.left + box.width / 2.0) / 100.0 * W;
        double cy = (box.top + box.height / 2.0) / 100.0 * H;

        switch (elem.kind) {
        case html::ElementKind::Rectangle:
            if (elem.background) fill_rect(img, x0, y0, x1, y1, *elem.background);
            break;
        case html::ElementKind::Ellipse:
            if (elem.background)
                fill_ellipse(img, cx, cy, box.width / 2.0 / 100.0 * W, box.height / 2.0 / 100.0 * H,
                             *elem.background);
            break;
        case html::ElementKind::Button:
            fill_rect(img, x0, y0, x1, y1, kButtonFill);
            stroke_rect(img, x0, y0, x1, y1, kButtonBorder);
            break;
        }
        if (options.text_mode == TextMode::Box) draw_text_box(img, cx, cy, elem.text);
    }
    return img;
}

PixelMask foreground_mask(const RasterImage& image, Rgb background) {
    PixelMask mask;
    mask.width = image.width;
    mask.height = image.height;
    mask.bits.resize(static_cast<size_t>(image.width) * image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            mask.bits[static_cast<size_t>(y) * image.width + x] = image.get(x, y) == background ? 0 : 1;
    return mask;
}

void write_pgm(const PixelMask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path);
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    for (uint8_t b : mask.bits) out.put(b ? static_cast<char>(255) : 0);
    if (!out) throw IoFailure("write failed: " + path);
}

} // namespace ruid::raster
