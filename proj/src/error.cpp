#include "tracetune/error.hpp"

#include <array>
#include <utility>

namespace tracetune {

namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 22> kNames{{
    {ErrorCode::InvalidArgument, "InvalidArgument"},
    {ErrorCode::MissingCategory, "MissingCategory"},
    {ErrorCode::EmptyContent, "EmptyContent"},
    {ErrorCode::DuplicateLabel, "DuplicateLabel"},
    {ErrorCode::CyclicParent, "CyclicParent"},
    {ErrorCode::MalformedDocument, "MalformedDocument"},
    {ErrorCode::UnknownLabel, "UnknownLabel"},
    {ErrorCode::ProviderFailure, "ProviderFailure"},
    {ErrorCode::EmptyMask, "EmptyMask"},
    {ErrorCode::EmptyLabelSet, "EmptyLabelSet"},
    {ErrorCode::SchemaViolation, "SchemaViolation"},
    {ErrorCode::UndecodableImage, "UndecodableImage"},
    {ErrorCode::DimensionMismatch, "DimensionMismatch"},
    {ErrorCode::UnknownNode, "UnknownNode"},
    {ErrorCode::UnknownSession, "UnknownSession"},
    {ErrorCode::StorageFailure, "StorageFailure"},
    {ErrorCode::MalformedConfig, "MalformedConfig"},
    {ErrorCode::MissingCredential, "MissingCredential"},
    {ErrorCode::UnscriptedInput, "UnscriptedInput"},
    {ErrorCode::Conflict, "Conflict"},
    {ErrorCode::ScriptParseError, "ScriptParseError"},
    {ErrorCode::AssertionFailed, "AssertionFailed"},
}};

} // namespace

std::string_view to_string(ErrorCode code) {
    for (const auto& [c, name] : kNames) {
        if (c == code) return name;
    }
    return "Unknown";
}

ErrorCode error_code_from_string(std::string_view name) {
    for (const auto& [c, n] : kNames) {
        if (n == name) return c;
    }
    throw Error(ErrorCode::MalformedDocument, "unknown error code", std::string(name));
}

Error::Error(ErrorCode code, std::string message, std::string detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + message +
                         (detail.empty() ? std::string{} : " (" + detail + ")")),
      code_(code),
      detail_(std::move(detail)) {}

} // namespace tracetune
