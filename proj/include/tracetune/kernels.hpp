#pragma once

// Pixel kernels on the selection and refinement hot paths. Every kernel
// exists twice: `serial` is the reference implementation the tests compare
// against, `omp` is the OpenMP-parallel version the library calls. Both
// must produce bit-identical output.

#include "tracetune/image.hpp"

#include <cstdint>
#include <optional>
#include <span>

namespace tracetune::kernels {

/// Darkening keeps 1/5 of each channel (floor), i.e. removes 80%.
inline constexpr int kRetainNumerator = 1;
inline constexpr int kRetainDenominator = 5;

inline std::uint8_t darken_channel(std::uint8_t v) {
    return static_cast<std::uint8_t>((v * kRetainNumerator) / kRetainDenominator);
}

namespace serial {

/// Copy `crop` out of `src`; pixels whose mask bit is clear are darkened.
Image darken_outside_mask(const Image& src, const Mask& mask, BBox crop);

/// `generated` with every pixel outside `mask` replaced by `base`.
Image composite_outside_mask(const Image& base, const Image& generated, const Mask& mask);

/// Tight bound of the set bits; nullopt for an all-false mask.
std::optional<BBox> mask_bbox(const Mask& mask);

/// Cosine similarity of `query` against each row of a row-major matrix.
void cosine_scores(std::span<const float> query, std::span<const float> rows, std::size_t dim,
                   std::span<float> out);

/// Average-pool downscale so the longer side is at most `max_side`.
Image downscale(const Image& src, int max_side);

/// Per-pixel splitmix noise keyed by `key`, quantized to `tile` px blocks.
void fill_hash_noise(Image& dst, std::uint64_t key, int tile);

} // namespace serial

namespace omp {

Image darken_outside_mask(const Image& src, const Mask& mask, BBox crop);
Image composite_outside_mask(const Image& base, const Image& generated, const Mask& mask);
std::optional<BBox> mask_bbox(const Mask& mask);
void cosine_scores(std::span<const float> query, std::span<const float> rows, std::size_t dim,
                   std::span<float> out);
Image downscale(const Image& src, int max_side);
void fill_hash_noise(Image& dst, std::uint64_t key, int tile);

} // namespace omp

std::uint64_t splitmix64(std::uint64_t x);

} // namespace tracetune::kernels
