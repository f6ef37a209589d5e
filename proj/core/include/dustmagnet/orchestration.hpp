#pragma once

#include "dustmagnet/llm.hpp"
#include "dustmagnet/prompting.hpp"
#include "dustmagnet/world.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dustmagnet {

struct GenerationRequest {
    ElementKind kind = ElementKind::character;
    std::optional<std::string> user_prompt;
    std::vector<ViewId> steering;             // views whose markers steer the generation
    std::optional<std::set<ElementId>> context_selection; // overrides the world's selection
};

struct GenerationOutcome {
    Element element;
    std::vector<Placement> placements; // one per steering view
};

enum class RecognizeMode {
    explicit_request,         // the user asked: overwrite whatever is there
    keep_user_corrections,    // automatic: leave user-corrected placements alone
};

// Runs the generate, recognize and rewrite loops. LLM calls happen outside
// the world's writer slot; results are applied as separate mutations and
// dropped if their target disappeared in the meantime. At most one
// LLM-backed operation runs per view.
class Orchestrator {
public:
    Orchestrator(WorldStore& store, std::shared_ptr<CompletionProvider> provider, ProviderConfig config,
                 const TemplateSet& templates = TemplateSet::builtin(), RetryPolicy retry = {});

    // Parse failures are retried this many times before surfacing.
    static constexpr int kParseRetries = 2;

    GenerationOutcome generate_element(const GenerationRequest& req);

    // For a crossed view both axis views are recognized; the placement of
    // the requested view is returned.
    Placement recognize_and_place(const ViewId& view, const ElementId& element,
                                  RecognizeMode mode = RecognizeMode::explicit_request);

    // Rewrites the element toward the weights at target_position in the
    // view, then re-recognizes it in every view that holds it.
    Element rewrite_element(const ViewId& view, const ElementId& element, Point2D target_position);

    // Re-recognizes stale placements of a view in element order.
    std::vector<Placement> rerecognize_stale(const ViewId& view);

    const ProviderConfig& config() const { return config_; }

private:
    // Recognition of one view without locking; returns the stored placement.
    Placement recognize_one(const ViewId& view, const ElementId& element, RecognizeMode mode,
                            const std::optional<WeightVector>& steering_weights);

    std::string complete_generation(const PromptBundle& bundle);
    ParsedRecognition complete_recognition(const PromptBundle& bundle, std::size_t concepts);

    std::vector<std::unique_lock<std::mutex>> lock_views(std::vector<ViewId> views);

    WorldStore& store_;
    std::shared_ptr<CompletionProvider> provider_;
    ProviderConfig config_;
    PromptBuilder prompts_;
    RetryPolicy retry_;

    std::mutex view_locks_mutex_;
    std::map<ViewId, std::unique_ptr<std::mutex>> view_locks_;
};

} // namespace dustmagnet
