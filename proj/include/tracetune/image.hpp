#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tracetune {

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool operator==(const BBox&) const = default;
};

/// Interleaved 8-bit RGB raster, row-major.
class Image {
public:
    Image() = default;
    Image(int width, int height);
    Image(int width, int height, std::vector<std::uint8_t> rgb);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return width_ == 0 || height_ == 0; }

    std::span<std::uint8_t> pixels() { return rgb_; }
    std::span<const std::uint8_t> pixels() const { return rgb_; }

    std::uint8_t* at(int x, int y) { return rgb_.data() + 3 * (static_cast<std::size_t>(y) * width_ + x); }
    const std::uint8_t* at(int x, int y) const {
        return rgb_.data() + 3 * (static_cast<std::size_t>(y) * width_ + x);
    }

    bool operator==(const Image&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> rgb_;
};

/// Binary per-pixel mask; one byte per pixel (0 or 1).
class Mask {
public:
    Mask() = default;
    Mask(int width, int height, bool value = false);

    int width() const { return width_; }
    int height() const { return height_; }

    bool get(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

    std::span<std::uint8_t> bits() { return bits_; }
    std::span<const std::uint8_t> bits() const { return bits_; }

    std::size_t count() const;

    bool operator==(const Mask&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Run-length encoding, row-major, alternating runs starting with a
/// (possibly empty) run of false pixels.
struct MaskRle {
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> counts;

    bool operator==(const MaskRle&) const = default;
};

MaskRle encode_rle(const Mask& m);
/// Throws Error(InvalidArgument) when counts do not cover width*height.
Mask decode_rle(const MaskRle& rle);

/// Deterministic PNG (RGB8, no metadata, fixed compression level).
std::vector<std::uint8_t> encode_png(const Image& img);
/// Throws Error(UndecodableImage). Any bit depth / color type is
/// normalized to RGB8.
Image decode_png(std::span<const std::uint8_t> bytes);

Image read_png_file(const std::string& path);
void write_png_file(const std::string& path, const Image& img);

/// Content digest of an image: SHA-256 of its PNG encoding.
std::string image_digest(const Image& img);

} // namespace tracetune
