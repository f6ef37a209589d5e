#pragma once

#include "dustmagnet/world.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dustmagnet {

enum class PromptFamily { plain_generation, steered_generation, recognition, rewrite };
enum class ExpectedFormat { freeform_after_marker, json_after_marker };

std::string_view to_string(PromptFamily f);
std::string_view to_string(ExpectedFormat f);

// Structured view of what a bundle asks for. Real providers only read the
// text; the offline mock answers from these fields.
struct PromptHints {
    ElementKind kind = ElementKind::note;
    std::vector<std::vector<std::string>> concepts; // per dimension (recognition: one)
    std::vector<WeightVector> targets;              // per dimension, generation and rewrite
    std::string subject_text;                       // element being recognized or rewritten
    std::string user_prompt;
};

struct PromptBundle {
    std::string system_preamble;
    std::string body;
    PromptFamily family = PromptFamily::plain_generation;
    ExpectedFormat expected_format = ExpectedFormat::freeform_after_marker;
    PromptHints hints;
};

struct PercentageWeights {
    std::vector<std::string> labels;
    std::vector<int> percents;
};

struct ParsedRecognition {
    std::string rationale;
    WeightVector weights;
};

// Placeholder template: literal text with {{name}} slots.
class Template {
public:
    explicit Template(std::string source);

    // Throws InvalidTemplate when a slot has no value.
    std::string render(const std::map<std::string, std::string, std::less<>>& values) const;

    const std::vector<std::string>& placeholders() const { return names_; }

private:
    struct Segment {
        bool is_slot;
        std::string text;
    };
    std::vector<Segment> segments_;
    std::vector<std::string> names_;
};

struct KindWording {
    std::string label;          // "Character", "Faction/Group"
    std::string noun;           // "character"
    std::string plural;         // "characters"
    std::string context_header; // section header in the story context
    std::string guidance;       // what a generated element should contain
};

// The complete set of prompt text. The compiled-in defaults are the files
// under core/templates; load_directory() reads an edited copy.
class TemplateSet {
public:
    static const TemplateSet& builtin();
    static TemplateSet load_directory(const std::filesystem::path& dir);

    const Template& get(std::string_view name) const;
    const KindWording& kind(ElementKind k) const;

    static const std::vector<std::string>& template_names();

private:
    std::map<std::string, Template, std::less<>> templates_;
    std::map<ElementKind, KindWording> kinds_;

    static TemplateSet from_sources(const std::map<std::string, std::string>& sources);
};

// Concept labels as used in generation prompts: "1-a", "1-b", ...
// `dimension` is 1-based, `index` 0-based.
std::string characteristic_label(std::size_t dimension, std::size_t index);
// Attribute keys as used in recognition prompts: "A", "B", ..., "Z", "AA", ...
std::string attribute_key(std::size_t index);

// Largest-remainder rounding to integers summing to 100; ties go to the
// lowest index.
PercentageWeights weights_to_percentages(const WeightVector& w, const std::vector<std::string>& labels = {});

// "48% of 1-a, 34% of 1-b, and 18% of 1-c"
std::string percentage_phrase(const PercentageWeights& p);

class PromptBuilder {
public:
    explicit PromptBuilder(const TemplateSet& templates = TemplateSet::builtin()) : templates_(&templates) {}

    std::string build_context(const World& world) const;

    PromptBundle build_plain_generation(const World& world, ElementKind kind,
                                        const std::optional<std::string>& user_prompt) const;

    // Throws SteeringUnset if a listed view holds no marker.
    PromptBundle build_steered_generation(const World& world, const std::vector<ViewId>& steering_views,
                                          ElementKind kind, const std::optional<std::string>& user_prompt) const;

    PromptBundle build_recognition(const World& world, const ViewId& view, const ElementId& element) const;

    // Throws NotFound if the element is not placed in the view.
    PromptBundle build_rewrite(const World& world, const ViewId& view, const ElementId& element,
                               const WeightVector& target) const;

private:
    std::string render_dimension(const World& world, const View& view, std::size_t index) const;
    std::string kind_slots(ElementKind kind, std::map<std::string, std::string, std::less<>>& slots) const;

    const TemplateSet* templates_;
};

// Everything after the last line carrying a run of at least four '='.
// Throws MissingMarker / EmptyGeneration.
std::string parse_generation(std::string_view raw);

// Reads keys A, B, ... (one per concept) from the first JSON object after
// the marker and normalizes the values to sum 1. Throws MissingMarker,
// EmptyGeneration or MalformedRecognition.
ParsedRecognition parse_recognition(std::string_view raw, std::size_t concept_count);

std::variant<std::string, ParsedRecognition> parse_marker_response(std::string_view raw, ExpectedFormat format,
                                                                   std::size_t concept_count = 0);

} // namespace dustmagnet
