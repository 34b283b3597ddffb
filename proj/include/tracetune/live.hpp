#pragma once

// HTTP-backed provider clients. Wire formats are documented in
// docs/providers.md. Live providers are best-effort: determinism is only
// guaranteed by the mocks.

#include "tracetune/config.hpp"
#include "tracetune/providers.hpp"

#include <condition_variable>
#include <cstdint>
#include <mutex>

namespace tracetune::live {

/// Admits at most `limit` concurrent holders; waiters are admitted in
/// arrival order.
class FifoGate {
public:
    explicit FifoGate(int limit);

    class Pass {
    public:
        explicit Pass(FifoGate* gate) : gate_(gate) {}
        Pass(Pass&& o) noexcept : gate_(std::exchange(o.gate_, nullptr)) {}
        Pass& operator=(Pass&&) = delete;
        ~Pass() {
            if (gate_) gate_->leave();
        }

    private:
        FifoGate* gate_;
    };

    Pass enter();
    int in_flight() const;
    int limit() const { return limit_; }

private:
    void leave();

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::uint64_t next_ticket_ = 0;
    std::uint64_t serving_ = 0;
    int in_flight_ = 0;
    int limit_;
};

struct Url {
    std::string scheme_host_port; ///< e.g. "http://127.0.0.1:8080"
    std::string path;             ///< e.g. "/v1/chat/completions"

    /// Throws Error(MalformedConfig).
    static Url parse(const std::string& url);
};

/// JSON-over-HTTP POST with timeout, bounded retries on transport errors and
/// 5xx, and a FIFO in-flight limit. Failures surface as ProviderFailure with
/// no credential or response body in the message.
class JsonEndpoint {
public:
    JsonEndpoint(std::string name, const ProviderSettings& settings, std::string credential);

    nlohmann::json post(const nlohmann::json& body);
    const ProviderSettings& settings() const { return settings_; }
    FifoGate& gate() { return gate_; }

private:
    std::string name_;
    ProviderSettings settings_;
    std::string credential_;
    Url url_;
    FifoGate gate_;
};

std::shared_ptr<TextProvider> make_text(const ProviderSettings& s, std::string credential);
std::shared_ptr<ImageProvider> make_image(const ProviderSettings& s, std::string credential);
std::shared_ptr<InpaintProvider> make_inpaint(const ProviderSettings& s, std::string credential);
std::shared_ptr<SegmentationProvider> make_segmentation(const ProviderSettings& s, std::string credential);
std::shared_ptr<EmbeddingProvider> make_embedding(const ProviderSettings& s, std::string credential);
std::shared_ptr<CaptionProvider> make_caption(const ProviderSettings& s, std::string credential);

} // namespace tracetune::live
