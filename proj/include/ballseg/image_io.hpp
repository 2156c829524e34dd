#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "ballseg/tensor.hpp"

namespace ballseg {

// 8-bit interleaved image buffer. channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
    int width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> pixels;
};

// Reads any PNG and normalizes it to 8-bit gray or RGB via libpng's
// simplified API (palette/alpha/16-bit inputs are converted).
inline ImageU8 read_png(const std::filesystem::path& path, int want_channels) {
    if (want_channels != 1 && want_channels != 3)
        throw std::invalid_argument("read_png: want_channels must be 1 or 3");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw std::runtime_error("read_png: cannot read " + path.string() + ": " + img.message);
    img.format = want_channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    ImageU8 out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.channels = want_channels;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error("read_png: decode failed for " + path.string() + ": " + img.message);
    }
    return out;
}

inline void write_png(const std::filesystem::path& path, const ImageU8& image) {
    if (image.channels != 1 && image.channels != 3)
        throw std::invalid_argument("write_png: channels must be 1 or 3");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr))
        throw std::runtime_error("write_png: cannot write " + path.string() + ": " + img.message);
}

// float [0,1] planes <-> interleaved bytes

inline Tensor tensor_from_image(const ImageU8& image) {
    Tensor t(1, image.channels, image.height, image.width);
    for (int c = 0; c < image.channels; ++c) {
        float* plane = t.plane(0, c);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                plane[static_cast<std::size_t>(y) * image.width + x] =
                    image.pixels[(static_cast<std::size_t>(y) * image.width + x) * image.channels + c] / 255.0f;
    }
    return t;
}

inline ImageU8 image_from_tensor(const Tensor& t) {
    if (t.batch() != 1 || (t.channels() != 1 && t.channels() != 3))
        throw std::invalid_argument("image_from_tensor: expected [1,1|3,H,W], got " + t.shape_str());
    ImageU8 image;
    image.width = t.width();
    image.height = t.height();
    image.channels = t.channels();
    image.pixels.resize(static_cast<std::size_t>(t.width()) * t.height() * t.channels());
    for (int c = 0; c < image.channels; ++c) {
        const float* plane = t.plane(0, c);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                float v = plane[static_cast<std::size_t>(y) * image.width + x];
                v = std::min(std::max(v, 0.0f), 1.0f);
                image.pixels[(static_cast<std::size_t>(y) * image.width + x) * image.channels + c] =
                    static_cast<std::uint8_t>(v * 255.0f + 0.5f);
            }
    }
    return image;
}

// Masks are stored as single-channel PNGs, nonzero = ball.
inline Tensor mask_from_image(const ImageU8& image) {
    if (image.channels != 1)
        throw std::invalid_argument("mask_from_image: expected a single-channel image");
    Tensor t(1, 1, image.height, image.width);
    for (std::size_t i = 0; i < image.pixels.size(); ++i)
        t.data[i] = image.pixels[i] != 0 ? 1.0f : 0.0f;
    return t;
}

inline ImageU8 image_from_mask(const Tensor& mask) {
    if (mask.batch() != 1 || mask.channels() != 1)
        throw std::invalid_argument("image_from_mask: expected [1,1,H,W], got " + mask.shape_str());
    ImageU8 image;
    image.width = mask.width();
    image.height = mask.height();
    image.channels = 1;
    image.pixels.resize(mask.data.size());
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        image.pixels[i] = mask.data[i] >= 0.5f ? 255 : 0;
    return image;
}

}  // namespace ballseg
