#include "tracetune/kernels.hpp"

#include "tracetune/error.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace tracetune::kernels::omp {

Image darken_outside_mask(const Image& src, const Mask& mask, BBox crop) {
    Image out(crop.width(), crop.height());
    const int w = src.width();
    const std::uint8_t* in = src.pixels().data();
    const std::uint8_t* m = mask.bits().data();
    std::uint8_t* o = out.pixels().data();
    const int ow = crop.width();

    #pragma omp parallel for schedule(static)
    for (int y = crop.y0; y < crop.y1; ++y) {
        const std::uint8_t* row = in + 3 * static_cast<std::size_t>(y) * w;
        const std::uint8_t* mrow = m + static_cast<std::size_t>(y) * w;
        std::uint8_t* orow = o + 3 * static_cast<std::size_t>(y - crop.y0) * ow;
        for (int x = crop.x0; x < crop.x1; ++x) {
            const std::uint8_t* p = row + 3 * x;
            std::uint8_t* q = orow + 3 * (x - crop.x0);
            if (mrow[x]) {
                q[0] = p[0];
                q[1] = p[1];
                q[2] = p[2];
            } else {
                q[0] = darken_channel(p[0]);
                q[1] = darken_channel(p[1]);
                q[2] = darken_channel(p[2]);
            }
        }
    }
    return out;
}

Image composite_outside_mask(const Image& base, const Image& generated, const Mask& mask) {
    Image out = generated;
    const std::size_t n = static_cast<std::size_t>(base.width()) * base.height();
    const std::uint8_t* b = base.pixels().data();
    const std::uint8_t* m = mask.bits().data();
    std::uint8_t* o = out.pixels().data();

    #pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        if (!m[i]) {
            o[3 * i + 0] = b[3 * i + 0];
            o[3 * i + 1] = b[3 * i + 1];
            o[3 * i + 2] = b[3 * i + 2];
        }
    }
    return out;
}

std::optional<BBox> mask_bbox(const Mask& mask) {
    int x0 = std::numeric_limits<int>::max();
    int y0 = std::numeric_limits<int>::max();
    int x1 = -1;
    int y1 = -1;
    const int w = mask.width();
    const std::uint8_t* m = mask.bits().data();

    #pragma omp parallel for schedule(static) reduction(min : x0, y0) reduction(max : x1, y1)
    for (int y = 0; y < mask.height(); ++y) {
        const std::uint8_t* row = m + static_cast<std::size_t>(y) * w;
        int first = -1;
        int last = -1;
        for (int x = 0; x < w; ++x) {
            if (row[x]) {
                if (first < 0) first = x;
                last = x;
            }
        }
        if (first >= 0) {
            x0 = std::min(x0, first);
            x1 = std::max(x1, last);
            y0 = std::min(y0, y);
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
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(out.size());

    #pragma omp parallel for schedule(static) if (n * static_cast<std::ptrdiff_t>(dim) > 65536)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double dot = 0.0;
        double rn = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double r = rows[static_cast<std::size_t>(i) * dim + k];
            dot += double(query[k]) * r;
            rn += r * r;
        }
        out[static_cast<std::size_t>(i)] =
            (qn > 0.0 && rn > 0.0) ? static_cast<float>(dot / std::sqrt(qn * rn)) : 0.0f;
    }
}

Image downscale(const Image& src, int max_side) {
    if (max_side <= 0) throw Error(ErrorCode::InvalidArgument, "max_side must be positive");
    const int longer = std::max(src.width(), src.height());
    const int f = std::max(1, (longer + max_side - 1) / max_side);
    const int w = (src.width() + f - 1) / f;
    const int h = (src.height() + f - 1) / f;
    Image out(w, h);

    #pragma omp parallel for schedule(static)
    for (int oy = 0; oy < h; ++oy) {
        const int ye = std::min(src.height(), (oy + 1) * f);
        for (int ox = 0; ox < w; ++ox) {
            const int xe = std::min(src.width(), (ox + 1) * f);
            unsigned sum[3] = {0, 0, 0};
            unsigned n = 0;
            for (int y = oy * f; y < ye; ++y) {
                for (int x = ox * f; x < xe; ++x) {
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
    const int w = dst.width();
    std::uint8_t* o = dst.pixels().data();

    #pragma omp parallel for schedule(static)
    for (int y = 0; y < dst.height(); ++y) {
        const std::uint64_t row_cell = static_cast<std::uint64_t>(y / tile) << 32;
        std::uint8_t* orow = o + 3 * static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const std::uint64_t cell = row_cell | static_cast<std::uint32_t>(x / tile);
            const std::uint64_t v = splitmix64(key ^ splitmix64(cell));
            orow[3 * x + 0] = static_cast<std::uint8_t>(v);
            orow[3 * x + 1] = static_cast<std::uint8_t>(v >> 8);
            orow[3 * x + 2] = static_cast<std::uint8_t>(v >> 16);
        }
    }
}

} // namespace tracetune::kernels::omp
