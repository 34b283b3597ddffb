#include "tracetune/studio.hpp"

#include <chrono>
#include <ctime>
#include <future>
#include <random>

namespace tracetune {

namespace {

bool blank(const std::optional<std::string>& s) {
    return !s || s->find_first_not_of(" \t\r\n") == std::string::npos;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace

RefineLease::RefineLease(RefineLease&& other) noexcept
    : owner_(std::exchange(other.owner_, nullptr)), session_id_(std::move(other.session_id_)) {}

RefineLease::~RefineLease() {
    if (owner_) owner_->release(session_id_);
}

Studio::Studio(Providers providers, StudioOptions options)
    : providers_(std::move(providers)),
      options_(std::move(options)),
      images_(options_.image_dir),
      sessions_(options_.session_db),
      seeds_(options_.rng_seed ? std::make_shared<SeedSource>(*options_.rng_seed) : std::make_shared<SeedSource>()),
      correspondence_(std::make_shared<CorrespondenceEngine>(providers_.segmentation, providers_.embedding,
                                                             options_.correspondence)),
      refiner_(std::make_unique<Refiner>(providers_, correspondence_, seeds_)),
      id_rng_(options_.rng_seed ? *options_.rng_seed ^ 0x5e55107a11ULL : std::random_device{}()) {}

std::string Studio::now() const {
    return options_.clock ? options_.clock() : utc_now();
}

std::string Studio::new_session_id() {
    std::lock_guard lock(id_mutex_);
    while (true) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "s%012llx",
                      static_cast<unsigned long long>(id_rng_() & 0xffffffffffffULL));
        if (!sessions_.contains(buf)) return buf;
    }
}

std::mutex& Studio::write_mutex(const std::string& session_id) {
    std::lock_guard lock(lease_mutex_);
    auto& m = write_mutexes_[session_id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
}

Session Studio::create_session(const std::string& initial_input) {
    if (blank(initial_input)) throw Error(ErrorCode::InvalidArgument, "initial input is empty", "initial_input");
    const StructuredPrompt prompt = refiner_->brainstorm(initial_input);

    std::vector<Seed> seeds;
    for (int k = 0; k < kBatchSize; ++k) seeds.push_back(seeds_->next());
    std::vector<std::future<std::vector<BatchItem>>> jobs;
    for (Seed s : seeds) {
        jobs.push_back(std::async(std::launch::async,
                                  [&, s] { return refiner_->generate_with_seed(prompt, s, 1, Method::Initial); }));
    }

    Session session;
    session.session_id = new_session_id();
    session.initial_input = initial_input;
    const std::string stamp = now();
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        BatchItem item = std::move(jobs[k].get().front());
        if (!item.ok()) {
            ErrorInfo e = *item.error;
            e.detail = "initial slot " + std::to_string(k) + (e.detail.empty() ? "" : ": " + e.detail);
            session.errors.push_back(std::move(e));
            continue;
        }
        SessionNode n;
        n.node_id = session.next_node_id();
        n.image_digest = images_.put(item.result->image);
        n.prompt = prompt;
        n.seed = item.result->seed;
        n.method = Method::Initial;
        n.created_at = stamp;
        session.nodes.emplace(n.node_id, std::move(n));
    }
    if (session.nodes.empty()) {
        const std::string detail = session.errors.empty() ? std::string() : session.errors.front().message;
        throw Error(ErrorCode::ProviderFailure, "no initial image could be generated", detail);
    }
    session.active_node_id = session.nodes.begin()->first;
    sessions_.save(session);
    return session;
}

Session Studio::session(const std::string& session_id) const {
    return sessions_.load(session_id);
}

ResolveResult Studio::resolve(const std::string& session_id, const std::string& node_id, const RegionSelection& sel) {
    const Session s = sessions_.load(session_id);
    const SessionNode& node = s.node(node_id);
    const auto image = images_.get(node.image_digest);
    const auto labels = node.prompt.labels();
    Resolution r = correspondence_->resolve(node.image_digest, node.image_digest, *image, sel, labels);
    ResolveResult out;
    out.labels = std::move(r.labels);
    out.mask = encode_rle(r.segmentation.mask);
    out.bbox = r.segmentation.bbox;
    if (!out.labels.empty()) out.segment = segment_for_label(node.prompt, out.labels.front().label);
    return out;
}

RefineLease Studio::acquire(const std::string& session_id) {
    if (!sessions_.contains(session_id)) throw Error(ErrorCode::UnknownSession, "no such session", session_id);
    std::lock_guard lock(lease_mutex_);
    if (!busy_.insert(session_id).second) {
        throw Error(ErrorCode::Conflict, "a refinement of this session is already running", session_id);
    }
    return RefineLease(this, session_id);
}

void Studio::release(const std::string& session_id) {
    std::lock_guard lock(lease_mutex_);
    busy_.erase(session_id);
}

void Studio::check_refine(const std::string& session_id, const std::string& node_id, const RefineInput& input) const {
    const Session s = sessions_.load(session_id);
    const SessionNode& node = s.node(node_id);
    RefinementRequest probe;
    probe.mode = input.mode;
    probe.instruction = input.instruction;
    if (input.reference_digest) {
        if (!images_.contains(*input.reference_digest)) {
            throw Error(ErrorCode::InvalidArgument, "reference image is not in the store", *input.reference_digest);
        }
        probe.reference = ReferenceCaption{"", *input.reference_digest};
    }
    if (input.selection) probe.selection = LabeledSelection{*input.selection, input.label.value_or("")};
    probe.base_image = std::make_shared<const Image>();
    probe.validate();
    if (input.label) segment_for_label(node.prompt, *input.label);
}

RefineOutcome Studio::refine(const std::string& session_id, const std::string& node_id, const RefineInput& input) {
    auto lease = acquire(session_id);
    return refine(lease, node_id, input);
}

RefineOutcome Studio::refine(const RefineLease& lease, const std::string& node_id, const RefineInput& input) {
    const std::string& session_id = lease.session_id();
    check_refine(session_id, node_id, input);
    const Session before = sessions_.load(session_id);
    const SessionNode& node = before.node(node_id);

    RefinementRequest req;
    req.mode = input.mode;
    req.instruction = input.instruction;
    req.base_image_id = node.image_digest;
    req.base_image_digest = node.image_digest;
    req.base_image = images_.get(node.image_digest);
    req.base_prompt = node.prompt;
    req.base_seed = node.seed;
    req.randomize_seed = input.randomize_seed;
    req.base_has_inpaint_edits = before.has_inpaint_lineage(node_id);
    if (input.reference_digest) req.reference = refiner_->caption_reference(*images_.get(*input.reference_digest));

    std::optional<std::string> label = input.label;
    if (input.selection) {
        if (!label) {
            const Resolution r = correspondence_->resolve(node.image_digest, node.image_digest, *req.base_image,
                                                          *input.selection, node.prompt.labels());
            label = r.labels.front().label;
            req.mask = r.segmentation.mask;
        }
        req.selection = LabeledSelection{*input.selection, *label};
    }

    RefineOutcome out;
    out.batch = refiner_->execute(req);

    RefinementRecord record;
    record.mode = input.mode;
    record.instruction = input.instruction.value_or("");
    record.label = out.batch.label;
    record.reference_digest = input.reference_digest;
    record.selection = input.selection;

    std::lock_guard wlock(write_mutex(session_id));
    Session latest = sessions_.load(session_id);
    out.session = attach_batch(std::move(latest), node_id, out.batch, images_, record, now(), &out.child_ids);
    sessions_.save(out.session);
    return out;
}

Session Studio::select(const std::string& session_id, const std::string& node_id) {
    std::lock_guard wlock(write_mutex(session_id));
    Session s = sessions_.load(session_id);
    if (s.active_node_id == node_id) return s;
    s = select_node(std::move(s), node_id);
    sessions_.save(s);
    return s;
}

SuggestionSet Studio::suggest(const SuggestInput& in) {
    const Session s = sessions_.load(in.session_id);
    const SessionNode& node = s.node(in.node_id);
    Suggester suggester(providers_.text, providers_.templates);
    switch (in.kind) {
    case SuggestionKind::Global:
        return suggester.suggest_global(node.prompt);
    case SuggestionKind::LabelBased:
        if (blank(in.label)) throw Error(ErrorCode::InvalidArgument, "label_based suggestions need a label", "label");
        return suggester.suggest_for_label(node.prompt, *in.label);
    case SuggestionKind::Expanded:
        return suggester.suggest_expanded(node.prompt, blank(in.label) ? std::nullopt : in.label, in.input.value_or(""));
    }
    throw Error(ErrorCode::InvalidArgument, "unknown suggestion kind");
}

ReferenceUpload Studio::add_reference(std::span<const std::uint8_t> png_bytes) {
    const Image img = decode_png(png_bytes);
    ReferenceUpload out;
    out.digest = images_.put(img);
    out.caption = refiner_->caption_reference(img);
    return out;
}

StructuredPrompt replay_prompt(Refiner& refiner, const ImageStore& images, const Session& s,
                               const std::string& node_id) {
    const auto chain = s.lineage(node_id);
    StructuredPrompt p = refiner.brainstorm(s.initial_input);
    for (std::size_t k = 1; k < chain.size(); ++k) {
        const SessionNode& n = s.node(chain[k]);
        if (!n.record) throw Error(ErrorCode::MalformedDocument, "non-root node has no refinement record", n.node_id);
        const RefinementRecord& r = *n.record;
        std::optional<ReferenceCaption> caption;
        if (r.reference_digest) caption = refiner.caption_reference(*images.get(*r.reference_digest));
        const std::optional<std::string> instruction =
            r.instruction.empty() ? std::nullopt : std::optional<std::string>(r.instruction);
        switch (n.method) {
        case Method::Global:
            p = refiner.refine_prompt_global(p, instruction, caption);
            break;
        case Method::Seed:
            p = refiner.refine_prompt_semantic(p, r.label.value_or(""), instruction, caption);
            break;
        case Method::Inpaint:
            if (!r.region_prompt) throw Error(ErrorCode::MalformedDocument, "inpaint node has no region prompt", n.node_id);
            p = refiner.merge_inpaint_into_prompt(p, *r.region_prompt);
            break;
        case Method::Initial:
            throw Error(ErrorCode::MalformedDocument, "initial node below the root", n.node_id);
        }
    }
    return p;
}

} // namespace tracetune
