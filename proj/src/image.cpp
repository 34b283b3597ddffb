#include "tracetune/image.hpp"

#include "tracetune/digest.hpp"
#include "tracetune/error.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace tracetune {

Image::Image(int width, int height) : Image(width, height, {}) {}

Image::Image(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), rgb_(std::move(rgb)) {
    if (width < 0 || height < 0) throw Error(ErrorCode::InvalidArgument, "negative image size");
    const std::size_t n = 3 * static_cast<std::size_t>(width) * height;
    if (rgb_.empty()) {
        rgb_.assign(n, 0);
    } else if (rgb_.size() != n) {
        throw Error(ErrorCode::DimensionMismatch, "pixel buffer does not match width*height*3");
    }
}

Mask::Mask(int width, int height, bool value)
    : width_(width), height_(height), bits_(static_cast<std::size_t>(width) * height, value ? 1 : 0) {
    if (width < 0 || height < 0) throw Error(ErrorCode::InvalidArgument, "negative mask size");
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count_if(bits_.begin(), bits_.end(), [](auto b) { return b != 0; }));
}

MaskRle encode_rle(const Mask& m) {
    MaskRle rle{m.width(), m.height(), {}};
    bool current = false;
    std::uint32_t run = 0;
    for (std::uint8_t b : m.bits()) {
        if ((b != 0) != current) {
            rle.counts.push_back(run);
            run = 0;
            current = !current;
        }
        ++run;
    }
    rle.counts.push_back(run);
    return rle;
}

Mask decode_rle(const MaskRle& rle) {
    Mask m(rle.width, rle.height);
    const std::size_t total = static_cast<std::size_t>(rle.width) * rle.height;
    const std::size_t sum = std::accumulate(rle.counts.begin(), rle.counts.end(), std::size_t{0});
    if (sum != total) {
        throw Error(ErrorCode::InvalidArgument, "RLE counts do not cover the mask",
                    std::to_string(sum) + " != " + std::to_string(total));
    }
    auto bits = m.bits();
    std::size_t pos = 0;
    bool value = false;
    for (std::uint32_t run : rle.counts) {
        if (value) std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(pos), run, 1);
        pos += run;
        value = !value;
    }
    return m;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    if (img.empty()) throw Error(ErrorCode::InvalidArgument, "cannot encode an empty image");
    png_image desc;
    std::memset(&desc, 0, sizeof desc);
    desc.version = PNG_IMAGE_VERSION;
    desc.width = static_cast<png_uint_32>(img.width());
    desc.height = static_cast<png_uint_32>(img.height());
    desc.format = PNG_FORMAT_RGB;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&desc, nullptr, &size, 0, img.pixels().data(), 0, nullptr)) {
        throw Error(ErrorCode::StorageFailure, "png size query failed", desc.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&desc, out.data(), &size, 0, img.pixels().data(), 0, nullptr)) {
        throw Error(ErrorCode::StorageFailure, "png encode failed", desc.message);
    }
    out.resize(size);
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image desc;
    std::memset(&desc, 0, sizeof desc);
    desc.version = PNG_IMAGE_VERSION;
    if (bytes.empty() || !png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
        throw Error(ErrorCode::UndecodableImage, "not a PNG image", desc.message);
    }
    desc.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(desc));
    if (!png_image_finish_read(&desc, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&desc);
        throw Error(ErrorCode::UndecodableImage, "corrupt PNG data", desc.message);
    }
    return Image(static_cast<int>(desc.width), static_cast<int>(desc.height), std::move(rgb));
}

Image read_png_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::StorageFailure, "cannot open image file", path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

void write_png_file(const std::string& path, const Image& img) {
    const auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::StorageFailure, "cannot write image file", path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::StorageFailure, "short write", path);
}

std::string image_digest(const Image& img) {
    return sha256_hex(encode_png(img));
}

} // namespace tracetune
