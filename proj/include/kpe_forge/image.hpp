#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace kpeforge {

/// Interleaved (HWC) float image with values nominally in [0, 1].
struct Image {
    int width{0};
    int height{0};
    int channels{0};
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0F);

    bool empty() const noexcept { return pixels.empty(); }
    std::size_t index(int x, int y, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                   static_cast<std::size_t>(channels) +
               static_cast<std::size_t>(c);
    }
    float& at(int x, int y, int c = 0) noexcept { return pixels[index(x, y, c)]; }
    float at(int x, int y, int c = 0) const noexcept { return pixels[index(x, y, c)]; }
    std::span<float> pixel(int x, int y) noexcept {
        return {pixels.data() + index(x, y), static_cast<std::size_t>(channels)};
    }
    std::span<const float> pixel(int x, int y) const noexcept {
        return {pixels.data() + index(x, y), static_cast<std::size_t>(channels)};
    }
    bool sameShape(const Image& o) const noexcept {
        return width == o.width && height == o.height && channels == o.channels;
    }
    friend bool operator==(const Image&, const Image&) = default;
};

// Single-channel occupancy mask (1 = foreground).
struct Mask {
    int width{0};
    int height{0};
    std::vector<unsigned char> bits;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}

    bool at(int x, int y) const noexcept { return bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0; }
    void set(int x, int y, bool v = true) noexcept {
        bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = v ? 1 : 0;
    }
    std::size_t count() const noexcept;
    friend bool operator==(const Mask&, const Mask&) = default;
};

// 8-bit PNG round trip; values are clamped to [0,1] and rounded on write.
void writePng(const std::filesystem::path& path, const Image& image);
Image readPng(const std::filesystem::path& path);
void writeMaskPng(const std::filesystem::path& path, const Mask& mask);
Mask readMaskPng(const std::filesystem::path& path);

// Quantize to the 8-bit grid so in-memory images match what a PNG round trip returns.
void quantize8(Image& image) noexcept;

// Rows of images tiled left to right, top to bottom with a 1px separator.
Image tileImages(std::span<const Image> images, int columns, float separator = 1.0F);

} // namespace kpeforge
