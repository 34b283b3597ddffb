#include "tracetune/service.hpp"

#include "tracetune/kernels.hpp"
#include "tracetune/wire.hpp"

#include <httplib.h>

#include <functional>
#include <future>
#include <mutex>
#include <thread>

namespace tracetune {

using nlohmann::json;

std::string_view to_string(ApiErrorCode c) {
    switch (c) {
    case ApiErrorCode::BadRequest: return "bad_request";
    case ApiErrorCode::NotFound: return "not_found";
    case ApiErrorCode::ProviderFailure: return "provider_failure";
    case ApiErrorCode::Conflict: return "conflict";
    case ApiErrorCode::Internal: return "internal";
    }
    return "internal";
}

int ApiError::http_status() const {
    switch (code) {
    case ApiErrorCode::BadRequest: return 400;
    case ApiErrorCode::NotFound: return 404;
    case ApiErrorCode::ProviderFailure: return 502;
    case ApiErrorCode::Conflict: return 409;
    case ApiErrorCode::Internal: return 500;
    }
    return 500;
}

json ApiError::to_json() const {
    json j{{"code", std::string(tracetune::to_string(code))}, {"message", message}, {"detail", detail}};
    if (code == ApiErrorCode::ProviderFailure) j["retryable"] = retryable;
    return j;
}

ApiError to_api_error(const Error& e) {
    ApiError out;
    out.message = e.what();
    out.detail = e.detail();
    switch (e.code()) {
    case ErrorCode::UnknownNode:
    case ErrorCode::UnknownSession:
        out.code = ApiErrorCode::NotFound;
        break;
    case ErrorCode::Conflict:
        out.code = ApiErrorCode::Conflict;
        break;
    case ErrorCode::ProviderFailure:
    case ErrorCode::SchemaViolation:
    case ErrorCode::UnscriptedInput:
        out.code = ApiErrorCode::ProviderFailure;
        out.retryable = e.code() != ErrorCode::UnscriptedInput;
        out.message = std::string(to_string(e.code())) + ": a model provider did not produce a usable result";
        out.detail.clear();
        break;
    case ErrorCode::StorageFailure:
    case ErrorCode::MalformedConfig:
    case ErrorCode::MissingCredential:
    case ErrorCode::AssertionFailed:
        out.code = ApiErrorCode::Internal;
        break;
    default:
        out.code = ApiErrorCode::BadRequest;
        break;
    }
    return out;
}

namespace {

ApiError from_info(const ErrorInfo& info) {
    return to_api_error(Error(info.code, info.message, info.detail));
}

std::string image_url(const std::string& digest) {
    return "/images/" + digest + ".png";
}

std::string thumbnail_url(const std::string& digest) {
    return "/thumbnails/" + digest + ".png";
}

json node_json(const SessionNode& n) {
    return {{"node_id", n.node_id},
            {"parent_id", n.parent_id ? json(*n.parent_id) : json(nullptr)},
            {"image", n.image_digest},
            {"image_url", image_url(n.image_digest)},
            {"thumbnail_url", thumbnail_url(n.image_digest)},
            {"prompt", json::parse(serialize_structured_prompt(n.prompt))},
            {"seed", n.seed},
            {"method", std::string(to_string(n.method))},
            {"record", n.record ? record_to_json(*n.record) : json(nullptr)},
            {"created_at", n.created_at}};
}

json errors_json(const std::vector<ErrorInfo>& errors) {
    json out = json::array();
    for (const auto& e : errors) out.push_back(from_info(e).to_json());
    return out;
}

json session_summary(const Session& s) {
    return {{"session_id", s.session_id},
            {"initial_input", s.initial_input},
            {"active_node_id", s.active_node_id},
            {"node_count", s.nodes.size()}};
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) throw Error(ErrorCode::InvalidArgument, "request body is empty", "body");
    json body;
    try {
        body = json::parse(req.body);
    } catch (const json::parse_error&) {
        throw Error(ErrorCode::InvalidArgument, "request body is not JSON", "body");
    }
    if (!body.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object", "body");
    return body;
}

std::string required_string(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || !it->is_string()) {
        throw Error(ErrorCode::InvalidArgument, std::string("field '") + key + "' must be a string", key);
    }
    return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw Error(ErrorCode::InvalidArgument, std::string("field '") + key + "' must be a string", key);
    return it->get<std::string>();
}

void send_json(httplib::Response& res, int status, json body) {
    body["schema"] = kApiSchema;
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const ApiError& e) {
    send_json(res, e.http_status(), json{{"error", e.to_json()}});
}

struct BatchState {
    std::string batch_id;
    std::string session_id;
    std::string parent;
    RefineMode mode = RefineMode::Global;
    std::string state = "queued";
    std::optional<RefineOutcome> outcome;
    std::optional<ApiError> error;
};

} // namespace

struct Service::Impl {
    Studio& studio;
    ServiceOptions options;
    httplib::Server server;
    std::thread listener;
    int bound_port = -1;

    std::mutex batch_mutex;
    std::map<std::string, BatchState> batches;
    std::vector<std::future<void>> workers;
    std::size_t next_batch = 0;

    std::mutex thumb_mutex;
    std::map<std::string, std::string> thumbnails;

    Impl(Studio& s, ServiceOptions o) : studio(s), options(std::move(o)) { routes(); }

    template <typename Fn>
    httplib::Server::Handler guarded(Fn fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const Error& e) {
                send_error(res, to_api_error(e));
            } catch (const std::exception& e) {
                send_error(res, ApiError{ApiErrorCode::Internal, "internal error", {}, false});
            }
        };
    }

    json batch_json(const BatchState& b) {
        json j{{"batch_id", b.batch_id},
               {"session_id", b.session_id},
               {"parent_id", b.parent},
               {"mode", std::string(to_string(b.mode))},
               {"state", b.state}};
        if (b.error) j["error"] = b.error->to_json();
        if (b.outcome) {
            const auto& batch = b.outcome->batch;
            j["label"] = batch.label ? json(*batch.label) : json(nullptr);
            j["may_overwrite_inpaint"] = batch.may_overwrite_inpaint;
            if (batch.mask) j["mask"] = wire::to_json(encode_rle(*batch.mask));
            json items = json::array();
            for (std::size_t k = 0; k < batch.items.size(); ++k) {
                json item{{"slot", k}};
                const auto& id = b.outcome->child_ids[k];
                if (id) {
                    const SessionNode& n = b.outcome->session.node(*id);
                    item["node"] = node_json(n);
                    if (n.record && n.record->region_prompt) item["region_prompt"] = *n.record->region_prompt;
                } else {
                    item["error"] = from_info(*batch.items[k].error).to_json();
                }
                items.push_back(std::move(item));
            }
            j["items"] = std::move(items);
        }
        return j;
    }

    void routes() {
        server.set_payload_max_length(options.max_upload_bytes);
        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (!res.body.empty()) return;
            ApiError e{res.status == 404 ? ApiErrorCode::NotFound : ApiErrorCode::BadRequest, "no such resource", {}, false};
            if (res.status >= 500) e.code = ApiErrorCode::Internal;
            send_json(res, res.status, json{{"error", e.to_json()}});
        });

        server.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, {{"status", "ok"}});
        }));

        server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const json body = parse_body(req);
            const Session s = studio.create_session(required_string(body, "initial_input"));
            json nodes = json::array();
            for (const auto& [id, n] : s.nodes) nodes.push_back(node_json(n));
            send_json(res, 201, {{"session", session_summary(s)}, {"nodes", nodes}, {"errors", errors_json(s.errors)}});
        }));

        server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, {{"session", session_summary(studio.session(req.matches[1]))}});
        }));

        server.Get(R"(/sessions/([^/]+)/tree)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const Session s = studio.session(req.matches[1]);
            json nodes = json::array();
            for (const auto& [id, n] : s.nodes) {
                json j = node_json(n);
                j["children"] = s.children(id);
                nodes.push_back(std::move(j));
            }
            send_json(res, 200,
                      {{"session", session_summary(s)}, {"roots", s.roots()}, {"nodes", nodes}, {"errors", errors_json(s.errors)}});
        }));

        server.Post(R"(/sessions/([^/]+)/nodes/([^/]+)/resolve)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        if (!body.contains("selection")) throw Error(ErrorCode::InvalidArgument, "selection is required", "selection");
                        const ResolveResult r =
                            studio.resolve(req.matches[1], req.matches[2], wire::selection_from_json(body["selection"]));
                        json labels = json::array();
                        for (const auto& l : r.labels) labels.push_back({{"label", l.label}, {"score", l.score}});
                        json segment = nullptr;
                        if (r.segment) {
                            segment = {{"label", r.segment->element.label},
                                       {"description", r.segment->element.description},
                                       {"parent", r.segment->element.parent_label ? json(*r.segment->element.parent_label) : json(nullptr)},
                                       {"ancestors", r.segment->ancestors}};
                        }
                        send_json(res, 200,
                                  {{"labels", labels}, {"mask", wire::to_json(r.mask)}, {"bbox", wire::to_json(r.bbox)}, {"segment", segment}});
                    }));

        server.Post(R"(/sessions/([^/]+)/nodes/([^/]+)/refine)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) { refine(req, res); }));

        server.Get(R"(/batches/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(batch_mutex);
            auto it = batches.find(req.matches[1]);
            if (it == batches.end()) throw Error(ErrorCode::UnknownNode, "no such batch", req.matches[1]);
            send_json(res, 200, batch_json(it->second));
        }));

        server.Post(R"(/sessions/([^/]+)/select)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const json body = parse_body(req);
            const Session s = studio.select(req.matches[1], required_string(body, "node"));
            send_json(res, 200, {{"session", session_summary(s)}});
        }));

        server.Post("/suggestions", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const json body = parse_body(req);
            SuggestInput in;
            in.kind = suggestion_kind_from_string(required_string(body, "kind"));
            in.session_id = required_string(body, "session");
            in.node_id = required_string(body, "node");
            in.label = optional_string(body, "label");
            in.input = optional_string(body, "input");
            const SuggestionSet set = studio.suggest(in);
            json items = json::array();
            for (const auto& s : set.items) {
                json item{{"text", s.text}};
                if (!s.tag.empty()) item["tag"] = s.tag;
                items.push_back(std::move(item));
            }
            json prov{{"prompt_digest", set.provenance.prompt_digest}};
            if (set.provenance.label) prov["label"] = *set.provenance.label;
            if (set.provenance.user_input) prov["input"] = *set.provenance.user_input;
            send_json(res, 200, {{"kind", std::string(to_string(set.kind))}, {"items", items}, {"provenance", prov}});
        }));

        server.Post("/references", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::string bytes;
            if (req.is_multipart_form_data()) {
                if (!req.has_file("image")) throw Error(ErrorCode::InvalidArgument, "multipart field 'image' is required", "image");
                bytes = req.get_file_value("image").content;
            } else {
                bytes = req.body;
            }
            if (bytes.empty()) throw Error(ErrorCode::InvalidArgument, "no image uploaded", "image");
            const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
            const ReferenceUpload up = studio.add_reference({p, bytes.size()});
            send_json(res, 201, {{"digest", up.digest}, {"caption", up.caption.caption}, {"image_url", image_url(up.digest)}});
        }));

        server.Get(R"(/images/([0-9a-f]{64})\.png)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            serve_png(res, req.matches[1], [&](const std::string& d) {
                if (!studio.images().contains(d)) throw Error(ErrorCode::UnknownNode, "no such image", d);
                const auto bytes = studio.images().png(d);
                return std::string(bytes.begin(), bytes.end());
            });
        }));

        server.Get(R"(/thumbnails/([0-9a-f]{64})\.png)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            serve_png(res, req.matches[1], [&](const std::string& d) { return thumbnail(d); });
        }));
    }

    template <typename Load>
    void serve_png(httplib::Response& res, const std::string& digest, Load load) {
        const std::string body = load(digest);
        res.status = 200;
        res.set_header("Cache-Control", "public, max-age=31536000, immutable");
        res.set_header("ETag", "\"" + digest + "\"");
        res.set_content(body, "image/png");
    }

    std::string thumbnail(const std::string& digest) {
        {
            std::lock_guard lock(thumb_mutex);
            auto it = thumbnails.find(digest);
            if (it != thumbnails.end()) return it->second;
        }
        if (!studio.images().contains(digest)) throw Error(ErrorCode::UnknownNode, "no such image", digest);
        const Image small = kernels::omp::downscale(*studio.images().get(digest), options.thumbnail_side);
        const auto bytes = encode_png(small);
        std::string out(bytes.begin(), bytes.end());
        std::lock_guard lock(thumb_mutex);
        thumbnails.emplace(digest, out);
        return out;
    }

    void refine(const httplib::Request& req, httplib::Response& res) {
        const std::string session_id = req.matches[1];
        const std::string node_id = req.matches[2];
        const json body = parse_body(req);
        RefineInput in;
        in.mode = refine_mode_from_string(required_string(body, "mode"));
        in.instruction = optional_string(body, "instruction");
        in.reference_digest = optional_string(body, "reference");
        in.label = optional_string(body, "label");
        if (body.contains("selection") && !body["selection"].is_null()) in.selection = wire::selection_from_json(body["selection"]);
        if (body.contains("randomize_seed")) {
            if (!body["randomize_seed"].is_boolean()) {
                throw Error(ErrorCode::InvalidArgument, "field 'randomize_seed' must be a boolean", "randomize_seed");
            }
            in.randomize_seed = body["randomize_seed"].get<bool>();
        }
        studio.check_refine(session_id, node_id, in);
        auto lease = std::make_shared<RefineLease>(studio.acquire(session_id));

        std::string batch_id;
        {
            std::lock_guard lock(batch_mutex);
            char buf[16];
            std::snprintf(buf, sizeof buf, "b%06zu", ++next_batch);
            batch_id = buf;
            BatchState b;
            b.batch_id = batch_id;
            b.session_id = session_id;
            b.parent = node_id;
            b.mode = in.mode;
            batches.emplace(batch_id, std::move(b));
            workers.push_back(std::async(std::launch::async, [this, lease, batch_id, node_id, in]() mutable {
                set_state(batch_id, [](BatchState& b) { b.state = "running"; });
                std::function<void(BatchState&)> finish;
                try {
                    auto out = std::make_shared<RefineOutcome>(studio.refine(*lease, node_id, in));
                    finish = [out](BatchState& b) {
                        b.state = std::string(to_string(out->batch.status()));
                        b.outcome = std::move(*out);
                    };
                } catch (const Error& e) {
                    finish = [err = to_api_error(e)](BatchState& b) {
                        b.state = "failed";
                        b.error = err;
                    };
                } catch (const std::exception&) {
                    finish = [](BatchState& b) {
                        b.state = "failed";
                        b.error = ApiError{ApiErrorCode::Internal, "internal error", {}, false};
                    };
                }
                // a client that sees a terminal state may refine again at once
                lease.reset();
                set_state(batch_id, finish);
            }));
        }
        res.set_header("Location", "/batches/" + batch_id);
        send_json(res, 202, {{"batch_id", batch_id}, {"state", "queued"}, {"poll", "/batches/" + batch_id}});
    }

    template <typename Fn>
    void set_state(const std::string& id, Fn fn) {
        std::lock_guard lock(batch_mutex);
        fn(batches.at(id));
    }

    void drain() {
        std::vector<std::future<void>> pending;
        {
            std::lock_guard lock(batch_mutex);
            pending.swap(workers);
        }
        for (auto& f : pending) f.wait();
    }
};

Service::Service(Studio& studio, ServiceOptions options) : impl_(std::make_unique<Impl>(studio, std::move(options))) {}

Service::~Service() {
    stop();
    impl_->drain();
}

int Service::start() {
    if (impl_->options.port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(impl_->options.host);
    } else {
        impl_->bound_port = impl_->server.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
    }
    if (impl_->bound_port < 0) {
        throw Error(ErrorCode::MalformedConfig, "cannot bind", impl_->options.host + ":" + std::to_string(impl_->options.port));
    }
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->bound_port;
}

void Service::run() {
    if (!impl_->server.listen(impl_->options.host, impl_->options.port)) {
        throw Error(ErrorCode::MalformedConfig, "cannot bind", impl_->options.host + ":" + std::to_string(impl_->options.port));
    }
}

void Service::stop() {
    impl_->server.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
}

int Service::port() const {
    return impl_->bound_port;
}

void Service::drain() {
    impl_->drain();
}

} // namespace tracetune
