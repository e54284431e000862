#include "cervinet/image.hpp"

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

namespace cervinet {

RgbImage RgbImage::from_gray(const GrayImage& gray) {
    RgbImage out(gray.width, gray.height);
    for (std::size_t i = 0; i < gray.size(); ++i) {
        out.data[i * 3] = out.data[i * 3 + 1] = out.data[i * 3 + 2] = gray.data[i];
    }
    return out;
}

GrayImage to_gray(const RgbImage& rgb) {
    GrayImage out(rgb.width, rgb.height);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float r = rgb.data[i * 3], g = rgb.data[i * 3 + 1], b = rgb.data[i * 3 + 2];
        // Neutral pixels pass through exactly; the weighted sum would round.
        out.data[i] = (r == g && g == b) ? r : 0.299f * r + 0.587f * g + 0.114f * b;
    }
    return out;
}

GrayImage resize_bilinear(const GrayImage& image, int width, int height) {
    if (width < 1 || height < 1) throw ShapeError("resize target must be at least 1x1");
    if (image.width == width && image.height == height) return image;
    GrayImage out(width, height);
    const double sx = static_cast<double>(image.width) / width;
    const double sy = static_cast<double>(image.height) / height;
    for (int y = 0; y < height; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, image.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, image.width - 1);
            double wx = fx - x0;
            double top = image.at(x0, y0) * (1 - wx) + image.at(x1, y0) * wx;
            double bottom = image.at(x0, y1) * (1 - wx) + image.at(x1, y1) * wx;
            out.at(x, y) = static_cast<float>(top * (1 - wy) + bottom * wy);
        }
    }
    return out;
}

std::uint8_t to_byte(float v) {
    float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::size_t count_ones(const BinaryMask& mask) {
    return static_cast<std::size_t>(std::count(mask.data.begin(), mask.data.end(), std::uint8_t{1}));
}

bool is_binary(const BinaryMask& mask) {
    return std::all_of(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v <= 1; });
}

namespace {

struct ReadCursor {
    const std::string* bytes;
    std::size_t offset;
};

void read_from_string(png_structp png, png_bytep out, png_size_t length) {
    auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cursor->offset + length > cursor->bytes->size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, cursor->bytes->data() + cursor->offset, length);
    cursor->offset += length;
}

void write_to_string(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), length);
}

void flush_noop(png_structp) {}

struct ErrorSlot {
    std::string message;
};

// libpng is C; errors unwind via longjmp back into the calling frame.
void png_fail(png_structp png, png_const_charp message) {
    auto* slot = static_cast<ErrorSlot*>(png_get_error_ptr(png));
    slot->message = message;
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

PngPixels decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        throw IoError("png: not a PNG stream");
    }
    ErrorSlot slot;
    PngPixels out;
    std::vector<png_bytep> rows;
    ReadCursor cursor{&bytes, 0};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &slot, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: " + slot.message);
    }
    {
        png_set_read_fn(png, &cursor, read_from_string);
        png_read_info(png, info);
        png_set_strip_16(png);
        png_set_packing(png);
        png_set_expand(png);
        png_set_strip_alpha(png);
        png_read_update_info(png, info);
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.channels = png_get_channels(png, info);
        if (out.channels != 1 && out.channels != 3) png_error(png, "unsupported channel count");
        out.bytes.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
        rows.resize(out.height);
        for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + static_cast<std::size_t>(y) * out.width * out.channels;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

std::string encode_png(const PngPixels& pixels) {
    if (pixels.channels != 1 && pixels.channels != 3) throw IoError("png: unsupported channel count");
    ErrorSlot slot;
    std::string out;
    std::vector<png_bytep> rows(pixels.height);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &slot, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: " + slot.message);
    }
    {
        png_set_write_fn(png, &out, write_to_string, flush_noop);
        png_set_IHDR(png, info, pixels.width, pixels.height, 8,
                     pixels.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < pixels.height; ++y) {
            rows[y] = const_cast<png_bytep>(pixels.bytes.data() + static_cast<std::size_t>(y) * pixels.width * pixels.channels);
        }
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

std::string encode_png(const GrayImage& image) {
    PngPixels px{image.width, image.height, 1, std::vector<std::uint8_t>(image.size())};
    std::transform(image.data.begin(), image.data.end(), px.bytes.begin(), to_byte);
    return encode_png(px);
}

std::string encode_png(const RgbImage& image) {
    PngPixels px{image.width, image.height, 3, std::vector<std::uint8_t>(image.data.size())};
    std::transform(image.data.begin(), image.data.end(), px.bytes.begin(), to_byte);
    return encode_png(px);
}

std::string encode_png(const BinaryMask& mask) {
    PngPixels px{mask.width, mask.height, 1, std::vector<std::uint8_t>(mask.size())};
    std::transform(mask.data.begin(), mask.data.end(), px.bytes.begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
    return encode_png(px);
}

PngPixels read_png(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    try {
        return decode_png(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

GrayImage read_png_gray(const std::filesystem::path& path) {
    PngPixels px = read_png(path);
    GrayImage out(px.width, px.height);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (px.channels == 1) {
            out.data[i] = px.bytes[i] / 255.0f;
        } else {
            out.data[i] = (0.299f * px.bytes[i * 3] + 0.587f * px.bytes[i * 3 + 1] + 0.114f * px.bytes[i * 3 + 2]) / 255.0f;
        }
    }
    return out;
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
    PngPixels px = read_png(path);
    RgbImage out(px.width, px.height);
    for (std::size_t i = 0; i < static_cast<std::size_t>(px.width) * px.height; ++i) {
        for (int c = 0; c < 3; ++c) {
            out.data[i * 3 + c] = px.bytes[i * px.channels + (px.channels == 1 ? 0 : c)] / 255.0f;
        }
    }
    return out;
}

BinaryMask read_png_mask(const std::filesystem::path& path) {
    PngPixels px = read_png(path);
    BinaryMask out(px.width, px.height);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = px.bytes[i * px.channels] != 0 ? 1 : 0;
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    static std::atomic<unsigned long> counter{0};
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ostringstream suffix;
    suffix << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << '.' << counter++;
    std::filesystem::path tmp = path;
    tmp += suffix.str();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("cannot write " + path.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot write " + path.string());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

}  // namespace cervinet
