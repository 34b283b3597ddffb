#include "tracetune/wire.hpp"

#include "tracetune/digest.hpp"

namespace tracetune::wire {

nlohmann::json to_json(const RegionSelection& s) {
    if (s.kind == RegionSelection::Kind::Point) return {{"kind", "point"}, {"x", s.point.x}, {"y", s.point.y}};
    return {{"kind", "box"}, {"x0", s.box.x0}, {"y0", s.box.y0}, {"x1", s.box.x1}, {"y1", s.box.y1}};
}

RegionSelection selection_from_json(const nlohmann::json& j) {
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "point") return RegionSelection::at(j.at("x").get<int>(), j.at("y").get<int>());
        if (kind == "box") {
            return RegionSelection::boxed(j.at("x0").get<int>(), j.at("y0").get<int>(), j.at("x1").get<int>(),
                                          j.at("y1").get<int>());
        }
        throw Error(ErrorCode::InvalidArgument, "selection kind must be point or box", kind);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "malformed selection", e.what());
    }
}

nlohmann::json to_json(const MaskRle& rle) {
    return {{"width", rle.width}, {"height", rle.height}, {"counts", rle.counts}};
}

MaskRle rle_from_json(const nlohmann::json& j) {
    try {
        return {j.at("width").get<int>(), j.at("height").get<int>(), j.at("counts").get<std::vector<std::uint32_t>>()};
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "malformed mask RLE", e.what());
    }
}

nlohmann::json to_json(const BBox& b) { return {b.x0, b.y0, b.x1, b.y1}; }

nlohmann::json to_json(const ErrorInfo& e) {
    return {{"code", std::string(to_string(e.code))}, {"message", e.message}, {"detail", e.detail}};
}

ErrorInfo error_from_json(const nlohmann::json& j) {
    return {error_code_from_string(j.at("code").get<std::string>()), j.value("message", ""), j.value("detail", "")};
}

std::string image_to_base64_png(const Image& img) { return base64_encode(encode_png(img)); }

Image image_from_base64_png(std::string_view b64) { return decode_png(base64_decode(b64)); }

} // namespace tracetune::wire
