#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tracetune {

enum class ErrorCode {
    InvalidArgument,
    MissingCategory,
    EmptyContent,
    DuplicateLabel,
    CyclicParent,
    MalformedDocument,
    UnknownLabel,
    ProviderFailure,
    EmptyMask,
    EmptyLabelSet,
    SchemaViolation,
    UndecodableImage,
    DimensionMismatch,
    UnknownNode,
    UnknownSession,
    StorageFailure,
    MalformedConfig,
    MissingCredential,
    UnscriptedInput,
    Conflict,
    ScriptParseError,
    AssertionFailed,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library. `detail` names the offending
/// category, label, node, field or digest when there is one.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message, std::string detail = {});

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

/// Plain-data form of an Error, used where failures are recorded per item
/// instead of thrown (partial batches, session error records).
struct ErrorInfo {
    ErrorCode code = ErrorCode::InvalidArgument;
    std::string message;
    std::string detail;

    static ErrorInfo from(const Error& e) { return {e.code(), e.what(), e.detail()}; }
    bool operator==(const ErrorInfo&) const = default;
};

ErrorCode error_code_from_string(std::string_view name);

} // namespace tracetune
