#include "tracetune/live.hpp"

#include "tracetune/wire.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <thread>

namespace tracetune::live {

FifoGate::FifoGate(int limit) : limit_(std::max(1, limit)) {}

FifoGate::Pass FifoGate::enter() {
    std::unique_lock lock(mutex_);
    const std::uint64_t ticket = next_ticket_++;
    cv_.wait(lock, [&] { return ticket == serving_ && in_flight_ < limit_; });
    ++serving_;
    ++in_flight_;
    cv_.notify_all();
    return Pass(this);
}

void FifoGate::leave() {
    {
        std::lock_guard lock(mutex_);
        --in_flight_;
    }
    cv_.notify_all();
}

int FifoGate::in_flight() const {
    std::lock_guard lock(mutex_);
    return in_flight_;
}

Url Url::parse(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::MalformedConfig, "endpoint must be an http(s) URL", url);
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw Error(ErrorCode::MalformedConfig, "endpoint scheme must be http or https", url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    Url u;
    u.scheme_host_port = url.substr(0, path_start);
    u.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (u.scheme_host_port.size() <= scheme_end + 3) throw Error(ErrorCode::MalformedConfig, "endpoint has no host", url);
    return u;
}

JsonEndpoint::JsonEndpoint(std::string name, const ProviderSettings& settings, std::string credential)
    : name_(std::move(name)),
      settings_(settings),
      credential_(std::move(credential)),
      url_(Url::parse(settings.endpoint)),
      gate_(settings.max_in_flight) {}

nlohmann::json JsonEndpoint::post(const nlohmann::json& body) {
    auto pass = gate_.enter();
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(settings_.timeout_s));
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= settings_.retries; ++attempt) {
        httplib::Client client(url_.scheme_host_port);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers headers;
        if (!credential_.empty()) headers.emplace("Authorization", "Bearer " + credential_);
        auto res = client.Post(url_.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
        } else if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
        } else if (res->status >= 400) {
            throw Error(ErrorCode::ProviderFailure, name_ + " provider rejected the request",
                        "HTTP " + std::to_string(res->status));
        } else {
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error&) {
                throw Error(ErrorCode::ProviderFailure, name_ + " provider returned malformed JSON");
            }
        }
        if (attempt < settings_.retries) std::this_thread::sleep_for(std::chrono::milliseconds(50 << attempt));
    }
    throw Error(ErrorCode::ProviderFailure, name_ + " provider request failed", last_error);
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* key, const char* who) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::ProviderFailure, std::string(who) + " response is missing a field", key);
    }
}

class LiveText : public TextProvider {
public:
    LiveText(const ProviderSettings& s, std::string cred) : ep_("text", s, std::move(cred)) {}

    std::string generate(const TextRequest& request) override {
        nlohmann::json body{{"messages", {{{"role", "user"}, {"content", request.text}}}}};
        if (!ep_.settings().model.empty()) body["model"] = ep_.settings().model;
        const auto res = ep_.post(body);
        try {
            return res.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw Error(ErrorCode::ProviderFailure, "text response has no choices[0].message.content");
        }
    }

private:
    JsonEndpoint ep_;
};

std::vector<FillSample> decode_images(const nlohmann::json& res, const char* who) {
    std::vector<FillSample> out;
    for (const auto& item : field<nlohmann::json>(res, "images", who)) {
        FillSample s{wire::image_from_base64_png(field<std::string>(item, "png_base64", who)), std::nullopt};
        if (item.contains("seed")) s.seed = item.at("seed").get<Seed>();
        out.push_back(std::move(s));
    }
    return out;
}

class LiveImage : public ImageProvider {
public:
    LiveImage(const ProviderSettings& s, std::string cred) : ep_("image", s, std::move(cred)) {}

    std::vector<Image> generate(const std::string& prompt, Seed seed, int count) override {
        nlohmann::json body{{"prompt", prompt}, {"seed", seed}, {"count", count}};
        if (!ep_.settings().model.empty()) body["model"] = ep_.settings().model;
        auto samples = guard_provider("image", [&] { return decode_images(ep_.post(body), "image"); });
        if (static_cast<int>(samples.size()) != count) {
            throw Error(ErrorCode::ProviderFailure, "image provider returned the wrong number of images");
        }
        std::vector<Image> out;
        for (auto& s : samples) out.push_back(std::move(s.image));
        return out;
    }

private:
    JsonEndpoint ep_;
};

class LiveInpaint : public InpaintProvider {
public:
    LiveInpaint(const ProviderSettings& s, std::string cred) : ep_("inpaint", s, std::move(cred)) {}

    std::vector<FillSample> fill(const Image& image, const Mask& mask, const std::string& region_prompt, Seed seed,
                                 int count) override {
        nlohmann::json body{{"image_png_base64", wire::image_to_base64_png(image)},
                            {"mask_rle", wire::to_json(encode_rle(mask))},
                            {"prompt", region_prompt},
                            {"seed", seed},
                            {"count", count}};
        if (!ep_.settings().model.empty()) body["model"] = ep_.settings().model;
        return guard_provider("inpaint", [&] { return decode_images(ep_.post(body), "inpaint"); });
    }

private:
    JsonEndpoint ep_;
};

class EncodedImageContext : public SegmentationContext {
public:
    std::string png_base64;
};

class LiveSegmentation : public SegmentationProvider {
public:
    LiveSegmentation(const ProviderSettings& s, std::string cred) : ep_("segmentation", s, std::move(cred)) {}

    std::shared_ptr<const SegmentationContext> prepare(const Image& image) override {
        auto ctx = std::make_shared<EncodedImageContext>();
        ctx->width = image.width();
        ctx->height = image.height();
        ctx->png_base64 = wire::image_to_base64_png(image);
        return ctx;
    }

    Mask segment(const SegmentationContext& context, const Image& image, const RegionSelection& selection) override {
        const auto* ctx = dynamic_cast<const EncodedImageContext*>(&context);
        nlohmann::json body{{"image_png_base64", ctx ? ctx->png_base64 : wire::image_to_base64_png(image)},
                            {"selection", wire::to_json(selection)}};
        const auto res = ep_.post(body);
        return guard_provider("segmentation", [&] {
            return decode_rle(wire::rle_from_json(field<nlohmann::json>(res, "mask_rle", "segmentation")));
        });
    }

private:
    JsonEndpoint ep_;
};

class LiveEmbedding : public EmbeddingProvider {
public:
    LiveEmbedding(const ProviderSettings& s, std::string cred)
        : ep_("embedding", s, std::move(cred)), dim_(s.options.value("dimension", std::size_t{0})) {}

    std::size_t dimension() const override { return dim_; }
    std::vector<float> embed_text(const std::string& text) override {
        return request({{"input", {{"text", text}}}});
    }
    std::vector<float> embed_image(const Image& image) override {
        return request({{"input", {{"image_png_base64", wire::image_to_base64_png(image)}}}});
    }

private:
    std::vector<float> request(nlohmann::json body) {
        if (!ep_.settings().model.empty()) body["model"] = ep_.settings().model;
        auto v = guard_provider("embedding",
                                [&] { return field<std::vector<float>>(ep_.post(body), "embedding", "embedding"); });
        if (v.size() != dim_) {
            throw Error(ErrorCode::ProviderFailure, "embedding has the wrong dimension", std::to_string(v.size()));
        }
        double n = 0.0;
        for (float x : v) n += double(x) * x;
        if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorCode::ProviderFailure, "embedding is zero or not finite");
        for (float& x : v) x = static_cast<float>(x / std::sqrt(n));
        return v;
    }

    JsonEndpoint ep_;
    std::size_t dim_;
};

class LiveCaption : public CaptionProvider {
public:
    LiveCaption(const ProviderSettings& s, std::string cred) : ep_("caption", s, std::move(cred)) {}

    std::string caption(const Image& image) override {
        nlohmann::json body{{"image_png_base64", wire::image_to_base64_png(image)}};
        if (!ep_.settings().model.empty()) body["model"] = ep_.settings().model;
        return field<std::string>(ep_.post(body), "caption", "caption");
    }

private:
    JsonEndpoint ep_;
};

} // namespace

std::shared_ptr<TextProvider> make_text(const ProviderSettings& s, std::string c) {
    return std::make_shared<LiveText>(s, std::move(c));
}
std::shared_ptr<ImageProvider> make_image(const ProviderSettings& s, std::string c) {
    return std::make_shared<LiveImage>(s, std::move(c));
}
std::shared_ptr<InpaintProvider> make_inpaint(const ProviderSettings& s, std::string c) {
    return std::make_shared<LiveInpaint>(s, std::move(c));
}
std::shared_ptr<SegmentationProvider> make_segmentation(const ProviderSettings& s, std::string c) {
    return std::make_shared<LiveSegmentation>(s, std::move(c));
}
std::shared_ptr<EmbeddingProvider> make_embedding(const ProviderSettings& s, std::string c) {
    return std::make_shared<LiveEmbedding>(s, std::move(c));
}
std::shared_ptr<CaptionProvider> make_caption(const ProviderSettings& s, std::string c) {
    return std::make_shared<LiveCaption>(s, std::move(c));
}

} // namespace tracetune::live
