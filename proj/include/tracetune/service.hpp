#pragma once

// JSON-over-HTTP adapter around a Studio.

#include "tracetune/studio.hpp"

#include <json.hpp>

#include <memory>
#include <string>

namespace tracetune {

inline constexpr std::string_view kApiSchema = "tracetune/api/v1";

enum class ApiErrorCode { BadRequest, NotFound, ProviderFailure, Conflict, Internal };

std::string_view to_string(ApiErrorCode c);

struct ApiError {
    ApiErrorCode code = ApiErrorCode::Internal;
    std::string message;
    std::string detail;
    bool retryable = false;

    int http_status() const;
    nlohmann::json to_json() const;
};

/// Provider failures are reduced to a generic message so nothing from the
/// upstream response or the request credentials reaches the client.
ApiError to_api_error(const Error& e);

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 0;              ///< 0 picks a free port
    int thumbnail_side = 128;
    std::size_t max_upload_bytes = 32u << 20;
};

class Service {
public:
    Service(Studio& studio, ServiceOptions options = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and serves on a background thread. Returns the bound port.
    int start();
    /// Binds and serves on the calling thread until stop().
    void run();
    void stop();
    int port() const;

    /// Blocks until every queued refinement has finished.
    void drain();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace tracetune
