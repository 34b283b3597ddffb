#pragma once

#include "tracetune/providers.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tracetune {

inline constexpr std::string_view kConfigSchema = "tracetune/config/v1";

/// Names of the six provider slots, in config-file order.
inline constexpr std::array<const char*, 6> kProviderSlots{"text", "image", "inpaint",
                                                           "segmentation", "embedding", "caption"};

enum class ProviderKind { Mock, Live };

struct ProviderSettings {
    ProviderKind kind = ProviderKind::Mock;
    std::string endpoint;       ///< live: http(s) URL
    std::string model;          ///< live: model name forwarded to the backend
    std::string credential_env; ///< live: env var holding the API key; never the key itself
    double timeout_s = 60.0;
    int retries = 1;
    int max_in_flight = 4;
    std::string template_set = "default";
    nlohmann::json options = nlohmann::json::object(); ///< kind-specific options (mock fixtures, embedding dimension)
};

struct ProviderConfig {
    std::map<std::string, ProviderSettings> providers;
    std::string templates_path;            ///< empty: built-in templates
    std::optional<std::uint64_t> rng_seed; ///< seeds fresh-seed generation; random when absent
    nlohmann::json scene;                  ///< scene fixture for image/segmentation/embedding mocks
    std::string base_dir;                  ///< relative paths resolve against this
    std::vector<std::string> missing_credentials;

    const ProviderSettings& settings(const std::string& slot) const;
    bool mock_only() const;

    /// Serializable view. Contains env-var names, never credential values.
    nlohmann::json to_json() const;
};

using Environment = std::function<std::optional<std::string>(const std::string&)>;
Environment process_environment();

/// Throws MalformedConfig, or MissingCredential for a live provider whose
/// env var is unset. With `mock_only`, every slot is forced to the mock and
/// unset credentials are only listed in `missing_credentials`.
ProviderConfig parse_provider_config(std::string_view document, const std::string& base_dir,
                                     const Environment& env = process_environment(), bool mock_only = false);
ProviderConfig load_provider_config(const std::string& path, const Environment& env = process_environment(),
                                    bool mock_only = false);

/// Instantiate the configured providers. Live slots read their credential
/// from `env` at this point.
Providers build_providers(const ProviderConfig& config, const Environment& env = process_environment());

} // namespace tracetune
