#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cervinet/errors.hpp"

namespace cervinet {

/// Row-major single-channel raster.
template <typename T>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
        if (w < 0 || h < 0) throw ShapeError("negative grid dimensions");
    }

    T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const auto& other) const { return width == other.width && height == other.height; }

    bool operator==(const Grid&) const = default;
};

/// Grayscale intensities, nominally in [0,1].
using GrayImage = Grid<float>;
/// Binary mask, values in {0,1}.
using BinaryMask = Grid<std::uint8_t>;

/// Interleaved RGB, channel values in [0,1].
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    RgbImage() = default;
    RgbImage(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

    static RgbImage from_gray(const GrayImage& gray);
    bool operator==(const RgbImage&) const = default;
};

/// ITU-R BT.601 luma.
GrayImage to_gray(const RgbImage& rgb);

/// Bilinear resampling with half-pixel centers (edges clamped).
GrayImage resize_bilinear(const GrayImage& image, int width, int height);

std::uint8_t to_byte(float v);

std::size_t count_ones(const BinaryMask& mask);
bool is_binary(const BinaryMask& mask);

/// Raw decoded PNG: 1 (gray) or 3 (RGB) channels, 8-bit.
struct PngPixels {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;
};

PngPixels read_png(const std::filesystem::path& path);
GrayImage read_png_gray(const std::filesystem::path& path);
RgbImage read_png_rgb(const std::filesystem::path& path);
/// Nonzero pixels become 1.
BinaryMask read_png_mask(const std::filesystem::path& path);

std::string encode_png(const PngPixels& pixels);
std::string encode_png(const GrayImage& image);
std::string encode_png(const RgbImage& image);
/// Masks are stored as 0/255.
std::string encode_png(const BinaryMask& mask);
PngPixels decode_png(const std::string& bytes);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

template <typename Img>
void write_png(const std::filesystem::path& path, const Img& image) {
    write_file(path, encode_png(image));
}

}  // namespace cervinet
