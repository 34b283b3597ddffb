#pragma once

#include "tracetune/image.hpp"

namespace tracetune {

struct Point {
    int x = 0;
    int y = 0;
    bool operator==(const Point&) const = default;
};

/// A user selection on an image: a clicked point or a dragged box.
struct RegionSelection {
    enum class Kind { Point, Box };

    Kind kind = Kind::Point;
    Point point;
    BBox box;

    static RegionSelection at(int x, int y) { return {Kind::Point, {x, y}, {}}; }
    static RegionSelection boxed(int x0, int y0, int x1, int y1) {
        return {Kind::Box, {}, {x0, y0, x1, y1}};
    }

    /// Throws Error(InvalidArgument) if the selection falls outside a
    /// width x height image or the box has no area.
    void validate(int width, int height) const;

    bool operator==(const RegionSelection&) const = default;
};

} // namespace tracetune
