#include "kpe_forge/image.hpp"

#include "kpe_forge/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace kpeforge {

Image::Image(int w, int h, int c, float fill)
    : width(w), height(h), channels(c),
      pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {
    if (w <= 0 || h <= 0 || c <= 0) throw InvalidArgument("image dimensions must be positive");
}

std::size_t Mask::count() const noexcept {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](unsigned char b) { return b != 0; }));
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char toByte(float v) noexcept {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0F, 1.0F) * 255.0F));
}

void writeRaw(const std::filesystem::path& path, int w, int h, int colorType, int channels,
              const std::vector<unsigned char>& bytes) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw Error("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, colorType,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(w) * static_cast<std::size_t>(channels);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Returns bytes normalized to 8-bit gray, gray+alpha stripped, RGB.
std::vector<unsigned char> readRaw(const std::filesystem::path& path, int& w, int& h, int& channels) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw MissingArtifact("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("not a readable PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    std::vector<unsigned char> bytes(stride * static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) png_read_row(png, bytes.data() + static_cast<std::size_t>(y) * stride, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return bytes;
}

} // namespace

void writePng(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw InvalidArgument("PNG export supports 1 or 3 channels");
    std::vector<unsigned char> bytes(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), toByte);
    writeRaw(path, image.width, image.height, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
             image.channels, bytes);
}

Image readPng(const std::filesystem::path& path) {
    int w = 0, h = 0, c = 0;
    auto bytes = readRaw(path, w, h, c);
    Image image(w, h, c);
    std::transform(bytes.begin(), bytes.end(), image.pixels.begin(),
                   [](unsigned char b) { return static_cast<float>(b) / 255.0F; });
    return image;
}

void writeMaskPng(const std::filesystem::path& path, const Mask& mask) {
    std::vector<unsigned char> bytes(mask.bits.size());
    std::transform(mask.bits.begin(), mask.bits.end(), bytes.begin(),
                   [](unsigned char b) { return static_cast<unsigned char>(b ? 255 : 0); });
    writeRaw(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 1, bytes);
}

Mask readMaskPng(const std::filesystem::path& path) {
    int w = 0, h = 0, c = 0;
    auto bytes = readRaw(path, w, h, c);
    if (c != 1) throw FormatError("mask PNG must be single channel: " + path.string());
    Mask mask(w, h);
    std::transform(bytes.begin(), bytes.end(), mask.bits.begin(),
                   [](unsigned char b) { return static_cast<unsigned char>(b >= 128 ? 1 : 0); });
    return mask;
}

void quantize8(Image& image) noexcept {
    for (float& v : image.pixels) v = static_cast<float>(toByte(v)) / 255.0F;
}

Image tileImages(std::span<const Image> images, int columns, float separator) {
    if (images.empty() || columns <= 0) throw InvalidArgument("tileImages needs at least one image and column");
    const Image& first = images.front();
    for (const auto& im : images)
        if (!im.sameShape(first)) throw InvalidArgument("tileImages: images differ in shape");
    const int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
    Image sheet(columns * (first.width + 1) - 1, rows * (first.height + 1) - 1, first.channels, separator);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const int ox = static_cast<int>(i % static_cast<std::size_t>(columns)) * (first.width + 1);
        const int oy = static_cast<int>(i / static_cast<std::size_t>(columns)) * (first.height + 1);
        for (int y = 0; y < first.height; ++y)
            for (int x = 0; x < first.width; ++x)
                for (int c = 0; c < first.channels; ++c) sheet.at(ox + x, oy + y, c) = images[i].at(x, y, c);
    }
    return sheet;
}

} // namespace kpeforge
