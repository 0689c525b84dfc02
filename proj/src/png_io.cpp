#include "ruid/png_io.hpp"

#include <csetjmp>
#include <cstring>
#include <fstream>

#include <png.h>

#include "ruid/errors.hpp"

namespace ruid::png_io {

namespace {

struct WriteSink {
    std::vector<uint8_t>* out;
};

void write_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* sink = static_cast<WriteSink*>(png_get_io_ptr(png));
    sink->out->insert(sink->out->end(), data, data + len);
}

void flush_cb(png_structp) {}

struct ReadSource {
    const uint8_t* data;
    size_t size;
    size_t pos;
};

void read_cb(png_structp png, png_bytep out, png_size_t len) {
    auto* src = static_cast<ReadSource*>(png_get_io_ptr(png));
    if (src->pos + len > src->size) png_error(png, "unexpected end of data");
    std::memcpy(out, src->data + src->pos, len);
    src->pos += len;
}

void error_cb(png_structp png, png_const_charp) { longjmp(png_jmpbuf(png), 1); }
void warning_cb(png_structp, png_const_charp) {}

// setjmp stays in leaf helpers whose frames hold no C++ objects, so a
// longjmp cannot clobber anything the caller still uses.
bool encode_steps(png_structp png, png_infop info, const raster::RasterImage& image,
                  std::vector<png_text>& chunks, std::vector<png_bytep>& rows, WriteSink& sink) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_set_write_fn(png, &sink, write_cb, flush_cb);
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Pinned settings: output bytes are a pure function of the pixel data.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    return true;
}

bool read_header_steps(png_structp png, png_infop info, ReadSource& src, int* width, int* height) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_set_read_fn(png, &src, read_cb);
    png_read_info(png, info);

    // Normalize every color type to 8-bit RGB.
    png_byte color_type = png_get_color_type(png, info);
    png_byte bit_depth = png_get_bit_depth(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    *width = static_cast<int>(png_get_image_width(png, info));
    *height = static_cast<int>(png_get_image_height(png, info));
    return true;
}

bool read_image_steps(png_structp png, std::vector<png_bytep>& rows) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return true;
}

} // namespace

std::vector<uint8_t> encode_png(const raster::RasterImage& image, const TextChunks& text) {
    if (image.width < 1 || image.height < 1 ||
        image.pixels.size() != static_cast<size_t>(image.width) * image.height * 3)
        throw MalformedPng("image dimensions inconsistent with pixel buffer");

    std::vector<uint8_t> out;
    WriteSink sink{&out};
    std::vector<png_bytep> rows(image.height);
    auto* base = const_cast<png_bytep>(image.pixels.data());
    for (int y = 0; y < image.height; ++y)
        rows[y] = base + static_cast<size_t>(y) * image.width * 3;
    std::vector<png_text> chunks(text.size());
    for (size_t i = 0; i < text.size(); ++i) {
        chunks[i] = png_text{};
        chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
        chunks[i].key = const_cast<char*>(text[i].first.c_str());
        chunks[i].text = const_cast<char*>(text[i].second.c_str());
        chunks[i].text_length = text[i].second.size();
    }

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
    if (!png) throw MalformedPng("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw MalformedPng("png_create_info_struct failed");
    }
    bool ok = encode_steps(png, info, image, chunks, rows, sink);
    png_destroy_write_struct(&png, &info);
    if (!ok) throw MalformedPng("png encode failed");
    return out;
}

raster::RasterImage decode_png(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw MalformedPng("not a PNG signature");

    raster::RasterImage image;
    ReadSource src{bytes.data(), bytes.size(), 0};

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
    if (!png) throw MalformedPng("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw MalformedPng("png_create_info_struct failed");
    }
    int width = 0, height = 0;
    if (!read_header_steps(png, info, src, &width, &height)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw MalformedPng("png decode failed");
    }
    if (width < 1 || height < 1 ||
        png_get_rowbytes(png, info) != static_cast<size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw MalformedPng("bad dimensions");
    }
    image.width = width;
    image.height = height;
    image.pixels.resize(static_cast<size_t>(width) * height * 3);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = image.pixels.data() + static_cast<size_t>(y) * width * 3;
    bool ok = read_image_steps(png, rows);
    png_destroy_read_struct(&png, &info, nullptr);
    if (!ok) throw MalformedPng("png decode failed");
    return image;
}

void write_png_file(const raster::RasterImage& image, const std::string& path, const TextChunks& text) {
    std::vector<uint8_t> bytes = encode_png(image, text);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoFailure("write failed: " + path);
}

raster::RasterImage read_png_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

} // namespace ruid::png_io
