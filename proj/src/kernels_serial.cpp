#include "tracetune/kernels.hpp"

#include "tracetune/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tracetune::kernels {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace serial {

Image darken_outside_mask(const Image& src, const Mask& mask, BBox crop) {
    Image out(crop.width(), crop.height());
    for (int y = crop.y0; y < crop.y1; ++y) {
        for (int x = crop.x0; x < crop.x1; ++x) {
            const std::uint8_t* in = src.at(x, y);
            std::uint8_t* o = out.at(x - crop.x0, y - crop.y0);
            if (mask.get(x, y)) {
                o[0] = in[0];
                o[1] = in[1];
                o[2] = in[2];
            } else {
                o[0] = darken_channel(in[0]);
                o[1] = darken_channel(in[1]);
                o[2] = darken_channel(in[2]);
            }
        }
    }
    return out;
}

Image composite_outside_mask(const Image& base, const Image& generated, const Mask& mask) {
    Image out = generated;
    for (int y = 0; y < base.height(); ++y) {
        for (int x = 0; x < base.width(); ++x) {
            if (!mask.get(x, y)) std::copy_n(base.at(x, y), 3, out.at(x, y));
        }
    }
    return out;
}

std::optional<BBox> mask_bbox(const Mask& mask) {
    int x0 = std::numeric_limits<int>::max();
    int y0 = std::numeric_limits<int>::max();
    int x1 = -1;
    int y1 = -1;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (!mask.get(x, y)) continue;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    }
    if (x1 < 0) return std::nullopt;
    return BBox{x0, y0, x1 + 1, y1 + 1};
}

void cosine_scores(std::span<const float> query, std::span<const float> rows, std::size_t dim,
                   std::span<float> out) {
    double qn = 0.0;
    for (std::size_t k = 0; k < dim; ++k) qn += double(query[k]) * query[k];
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        double rn = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double r = rows[i * dim + k];
            dot += double(query[k]) * r;
            rn += r * r;
        }
        out[i] = (qn > 0.0 && rn > 0.0) ? static_cast<float>(dot / std::sqrt(qn * rn)) : 0.0f;
    }
}

Image downscale(const Image& src, int max_side) {
    if (max_side <= 0) throw Error(ErrorCode::InvalidArgument, "max_side must be positive");
    const int longer = std::max(src.width(), src.height());
    const int f = std::max(1, (longer + max_side - 1) / max_side);
    const int w = (src.width() + f - 1) / f;
    const int h = (src.height() + f - 1) / f;
    Image out(w, h);
    for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
            unsigned sum[3] = {0, 0, 0};
            unsigned n = 0;
            for (int y = oy * f; y < std::min(src.height(), (oy + 1) * f); ++y) {
                for (int x = ox * f; x < std::min(src.width(), (ox + 1) * f); ++x) {
                    const std::uint8_t* p = src.at(x, y);
                    sum[0] += p[0];
                    sum[1] += p[1];
                    sum[2] += p[2];
                    ++n;
                }
            }
            std::uint8_t* o = out.at(ox, oy);
            for (int c = 0; c < 3; ++c) o[c] = static_cast<std::uint8_t>(sum[c] / n);
        }
    }
    return out;
}

void fill_hash_noise(Image& dst, std::uint64_t key, int tile) {
    tile = std::max(1, tile);
    for (int y = 0; y < dst.height(); ++y) {
        for (int x = 0; x < dst.width(); ++x) {
            const std::uint64_t cell =
                (static_cast<std::uint64_t>(y / tile) << 32) | static_cast<std::uint32_t>(x / tile);
            const std::uint64_t v = splitmix64(key ^ splitmix64(cell));
            std::uint8_t* o = dst.at(x, y);
            o[0] = static_cast<std::uint8_t>(v);
            o[1] = static_cast<std::uint8_t>(v >> 8);
            o[2] = static_cast<std::uint8_t>(v >> 16);
        }
    }
}

} // namespace serial
} // namespace tracetune::kernels
