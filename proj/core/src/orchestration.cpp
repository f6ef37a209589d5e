#include "dustmagnet/orchestration.hpp"

#include "dustmagnet/error.hpp"

#include <algorithm>

namespace dustmagnet {

namespace {

bool is_parse_failure(const Error& e) {
    return e.code() == ErrorCode::MissingMarker || e.code() == ErrorCode::EmptyGeneration ||
           e.code() == ErrorCode::MalformedRecognition;
}

} // namespace

Orchestrator::Orchestrator(WorldStore& store, std::shared_ptr<CompletionProvider> provider, ProviderConfig config,
                           const TemplateSet& templates, RetryPolicy retry)
    : store_(store), provider_(std::move(provider)), config_(std::move(config)), prompts_(templates),
      retry_(std::move(retry)) {
    config_.validate();
}

std::vector<std::unique_lock<std::mutex>> Orchestrator::lock_views(std::vector<ViewId> views) {
    std::sort(views.begin(), views.end());
    views.erase(std::unique(views.begin(), views.end()), views.end());
    std::vector<std::mutex*> mutexes;
    {
        std::lock_guard guard(view_locks_mutex_);
        for (const auto& v : views) {
            auto& slot = view_locks_[v];
            if (!slot) slot = std::make_unique<std::mutex>();
            mutexes.push_back(slot.get());
        }
    }
    // Sorted acquisition order keeps multi-view operations deadlock free.
    std::vector<std::unique_lock<std::mutex>> locks;
    for (auto* m : mutexes) locks.emplace_back(*m);
    return locks;
}

std::string Orchestrator::complete_generation(const PromptBundle& bundle) {
    for (int attempt = 0;; ++attempt) {
        const CompletionResult result = complete(*provider_, bundle, config_, retry_);
        try {
            return parse_generation(result.text);
        } catch (const Error& e) {
            if (!is_parse_failure(e) || attempt >= kParseRetries) throw;
        }
    }
}

ParsedRecognition Orchestrator::complete_recognition(const PromptBundle& bundle, std::size_t concepts) {
    for (int attempt = 0;; ++attempt) {
        const CompletionResult result = complete(*provider_, bundle, config_, retry_);
        try {
            return parse_recognition(result.text, concepts);
        } catch (const Error& e) {
            if (!is_parse_failure(e) || attempt >= kParseRetries) throw;
        }
    }
}

Placement Orchestrator::recognize_one(const ViewId& view_id, const ElementId& element_id, RecognizeMode mode,
                                      const std::optional<WeightVector>& steering_weights) {
    const World snapshot = store_.snapshot();
    const View& view = snapshot.view(view_id);
    snapshot.element(element_id);
    if (mode == RecognizeMode::keep_user_corrections) {
        if (const Placement* p = view.find_placement(element_id); p && p->provenance == Provenance::user_corrected) {
            return *p;
        }
    }
    const PromptBundle bundle = prompts_.build_recognition(snapshot, view_id, element_id);
    const std::size_t concepts = view.magnets.size();
    const int example_count = static_cast<int>(view.examples.size());
    const ParsedRecognition parsed = complete_recognition(bundle, concepts);

    return store_.mutate([&](World& w) {
        if (!w.has_element(element_id) || !w.has_view(view_id)) {
            throw Error(ErrorCode::NotFound, "recognition result dropped: its element or view was deleted");
        }
        if (w.view(view_id).magnets.size() != concepts) {
            throw Error(ErrorCode::InvalidWeightVector, "recognition result dropped: the view's magnets changed");
        }
        const Provenance provenance = steering_weights ? Provenance::steered : Provenance::auto_recognized;
        Placement placed = w.add_element_to_view(view_id, element_id, parsed.weights, provenance);
        w.append_log({.timestamp = w.now(),
                      .kind = LogKind::recognize,
                      .view_id = view_id,
                      .element_id = element_id,
                      .auto_weights = parsed.weights,
                      .steering_weights = steering_weights,
                      .example_count_at_time = example_count});
        return placed;
    });
}

GenerationOutcome Orchestrator::generate_element(const GenerationRequest& req) {
    World snapshot = store_.snapshot();
    if (req.context_selection) snapshot.set_selection(*req.context_selection);

    std::vector<WeightVector> steering_weights;
    for (const auto& vid : req.steering) {
        auto w = snapshot.view(vid).marker_weights();
        if (!w) throw Error(ErrorCode::SteeringUnset, "view '" + vid + "' has no steering marker");
        steering_weights.push_back(*w);
    }

    auto locks = lock_views(req.steering);
    const PromptBundle bundle = req.steering.empty()
                                    ? prompts_.build_plain_generation(snapshot, req.kind, req.user_prompt)
                                    : prompts_.build_steered_generation(snapshot, req.steering, req.kind, req.user_prompt);
    const std::string text = complete_generation(bundle);

    GenerationOutcome outcome;
    outcome.element = store_.mutate([&](World& w) {
        Element created = w.create_element(req.kind, text, CreatedBy::generated);
        InteractionLogEntry entry{.timestamp = w.now(), .kind = LogKind::generate, .element_id = created.id};
        if (req.steering.size() == 1) {
            entry.view_id = req.steering.front();
            entry.steering_weights = steering_weights.front();
            entry.example_count_at_time = static_cast<int>(w.view(entry.view_id).examples.size());
        }
        w.append_log(std::move(entry));
        return created;
    });

    for (std::size_t i = 0; i < req.steering.size(); ++i) {
        outcome.placements.push_back(
            recognize_one(req.steering[i], outcome.element.id, RecognizeMode::keep_user_corrections, steering_weights[i]));
    }
    return outcome;
}

Placement Orchestrator::recognize_and_place(const ViewId& view_id, const ElementId& element_id, RecognizeMode mode) {
    std::vector<ViewId> views{view_id};
    {
        const World snapshot = store_.snapshot();
        const View& v = snapshot.view(view_id);
        if (v.link && v.link->kind == LinkKind::crossed) views.push_back(v.link->other);
    }
    auto locks = lock_views(views);
    Placement result = recognize_one(view_id, element_id, mode, std::nullopt);
    for (std::size_t i = 1; i < views.size(); ++i) recognize_one(views[i], element_id, mode, std::nullopt);
    return result;
}

Element Orchestrator::rewrite_element(const ViewId& view_id, const ElementId& element_id, Point2D target_position) {
    std::vector<ViewId> containing;
    WeightVector target;
    WeightVector previous;
    {
        const World snapshot = store_.snapshot();
        const View& v = snapshot.view(view_id);
        const Placement* p = v.find_placement(element_id);
        if (!p) throw Error(ErrorCode::NotFound, "element '" + element_id + "' is not placed in view '" + view_id + "'");
        target = position_to_weights(v.layout(), target_position);
        previous = p->weights;
        for (const auto& other : snapshot.views()) {
            if (other.find_placement(element_id)) containing.push_back(other.id);
        }
    }

    auto locks = lock_views(containing);
    const World snapshot = store_.snapshot();
    const PromptBundle bundle = prompts_.build_rewrite(snapshot, view_id, element_id, target);
    const std::string text = complete_generation(bundle);

    Element updated = store_.mutate([&](World& w) {
        if (!w.has_element(element_id)) throw Error(ErrorCode::NotFound, "rewrite dropped: the element was deleted");
        w.edit_element_text(element_id, text);
        w.append_log({.timestamp = w.now(),
                      .kind = LogKind::rewrite,
                      .view_id = view_id,
                      .element_id = element_id,
                      .auto_weights = previous,
                      .steering_weights = target,
                      .example_count_at_time = w.has_view(view_id) ? static_cast<int>(w.view(view_id).examples.size()) : 0});
        return w.element(element_id);
    });

    for (const auto& vid : containing) {
        if (store_.read([&](const World& w) { return w.has_view(vid) && w.view(vid).find_placement(element_id); })) {
            recognize_one(vid, element_id, RecognizeMode::explicit_request, std::nullopt);
        }
    }
    return updated;
}

std::vector<Placement> Orchestrator::rerecognize_stale(const ViewId& view_id) {
    auto locks = lock_views({view_id});
    std::vector<ElementId> pending;
    {
        const World snapshot = store_.snapshot();
        const View& v = snapshot.view(view_id);
        for (const auto& e : snapshot.elements()) {
            if (const Placement* p = v.find_placement(e.id); p && p->stale) pending.push_back(e.id);
        }
    }
    std::vector<Placement> out;
    for (const auto& eid : pending) out.push_back(recognize_one(view_id, eid, RecognizeMode::explicit_request, std::nullopt));
    return out;
}

} // namespace dustmagnet
