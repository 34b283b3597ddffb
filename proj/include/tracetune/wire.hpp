#pragma once

// JSON encodings shared by the HTTP API, live provider clients, session
// documents and CLI scripts.

#include "tracetune/error.hpp"
#include "tracetune/image.hpp"
#include "tracetune/selection.hpp"

#include <json.hpp>

namespace tracetune::wire {

nlohmann::json to_json(const RegionSelection& s);
/// Accepts {"kind":"point","x","y"} or {"kind":"box","x0","y0","x1","y1"}.
/// Throws Error(InvalidArgument).
RegionSelection selection_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MaskRle& rle);
MaskRle rle_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BBox& b);

nlohmann::json to_json(const ErrorInfo& e);
ErrorInfo error_from_json(const nlohmann::json& j);

std::string image_to_base64_png(const Image& img);
Image image_from_base64_png(std::string_view b64);

} // namespace tracetune::wire
