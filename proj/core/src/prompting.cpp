#include "dustmagnet/prompting.hpp"

#include "dustmagnet/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dustmagnet {

// Generated at build time from core/templates.
const std::map<std::string, std::string>& embedded_template_sources();

namespace {

using Slots = std::map<std::string, std::string, std::less<>>;

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

// "a", "a and b", "a, b, and c"
std::string join_list(const std::vector<std::string>& parts) {
    if (parts.size() <= 1) return parts.empty() ? std::string{} : parts.front();
    if (parts.size() == 2) return parts[0] + " and " + parts[1];
    std::string out;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) out += parts[i] + ", ";
    return out + "and " + parts.back();
}

std::string dimension_name(std::size_t index) { return "dimension " + std::to_string(index); }

} // namespace

std::string_view to_string(PromptFamily f) {
    switch (f) {
    case PromptFamily::plain_generation: return "plain_generation";
    case PromptFamily::steered_generation: return "steered_generation";
    case PromptFamily::recognition: return "recognition";
    case PromptFamily::rewrite: return "rewrite";
    }
    return "unknown";
}

std::string_view to_string(ExpectedFormat f) {
    return f == ExpectedFormat::json_after_marker ? "json_after_marker" : "freeform_after_marker";
}

Template::Template(std::string source) {
    std::size_t pos = 0;
    std::string literal;
    while (pos < source.size()) {
        const auto open = source.find("{{", pos);
        if (open == std::string::npos) {
            literal += source.substr(pos);
            break;
        }
        literal += source.substr(pos, open - pos);
        const auto close = source.find("}}", open + 2);
        if (close == std::string::npos) throw Error(ErrorCode::InvalidTemplate, "unclosed placeholder");
        std::string name = source.substr(open + 2, close - open - 2);
        if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) { return (c >= 'a' && c <= 'z') || c == '_'; })) {
            throw Error(ErrorCode::InvalidTemplate, "bad placeholder name '" + name + "'");
        }
        if (!literal.empty()) segments_.push_back({false, std::move(literal)});
        literal.clear();
        if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.push_back(name);
        segments_.push_back({true, std::move(name)});
        pos = close + 2;
    }
    if (!literal.empty()) segments_.push_back({false, std::move(literal)});
}

std::string Template::render(const Slots& values) const {
    std::string out;
    for (const auto& seg : segments_) {
        if (!seg.is_slot) {
            out += seg.text;
            continue;
        }
        auto it = values.find(seg.text);
        if (it == values.end()) throw Error(ErrorCode::InvalidTemplate, "no value for placeholder '" + seg.text + "'");
        out += it->second;
    }
    return out;
}

const std::vector<std::string>& TemplateSet::template_names() {
    static const std::vector<std::string> names = {
        "system",           "context",           "context_section",     "plain_generation",
        "plain_instruction", "steered_generation", "dimension",         "dimension_examples",
        "dimension_example", "steered_instruction", "user_instruction", "rewrite",
        "rewrite_instruction", "recognition",     "recognition_examples", "recognition_example",
    };
    return names;
}

TemplateSet TemplateSet::from_sources(const std::map<std::string, std::string>& sources) {
    TemplateSet set;
    for (const auto& name : template_names()) {
        auto it = sources.find(name + ".tmpl");
        if (it == sources.end()) throw Error(ErrorCode::InvalidTemplate, "missing template '" + name + ".tmpl'");
        std::string text = it->second;
        // Editors end files with a newline; it is not part of the template.
        if (!text.empty() && text.back() == '\n') text.pop_back();
        set.templates_.emplace(name, Template(std::move(text)));
    }
    auto kinds = sources.find("kinds.json");
    if (kinds == sources.end()) throw Error(ErrorCode::InvalidTemplate, "missing kinds.json");
    nlohmann::json doc = nlohmann::json::parse(kinds->second, nullptr, false);
    if (!doc.is_object()) throw Error(ErrorCode::InvalidTemplate, "kinds.json is not a JSON object");
    for (ElementKind k : kAllElementKinds) {
        const std::string key(to_string(k));
        if (!doc.contains(key) || !doc[key].is_object()) {
            throw Error(ErrorCode::InvalidTemplate, "kinds.json has no entry for '" + key + "'");
        }
        const auto& entry = doc[key];
        KindWording w;
        for (auto [field, target] : {std::pair{"label", &w.label}, std::pair{"noun", &w.noun},
                                     std::pair{"plural", &w.plural}, std::pair{"context_header", &w.context_header},
                                     std::pair{"guidance", &w.guidance}}) {
            if (!entry.contains(field) || !entry[field].is_string()) {
                throw Error(ErrorCode::InvalidTemplate, "kinds.json/" + key + " lacks '" + field + "'");
            }
            *target = entry[field].get<std::string>();
        }
        set.kinds_.emplace(k, std::move(w));
    }
    return set;
}

const TemplateSet& TemplateSet::builtin() {
    static const TemplateSet set = from_sources(embedded_template_sources());
    return set;
}

TemplateSet TemplateSet::load_directory(const std::filesystem::path& dir) {
    std::map<std::string, std::string> sources;
    auto read = [&](const std::string& file) {
        std::ifstream in(dir / file, std::ios::binary);
        if (!in) throw Error(ErrorCode::InvalidTemplate, "cannot read " + (dir / file).string());
        std::ostringstream ss;
        ss << in.rdbuf();
        sources[file] = ss.str();
    };
    for (const auto& name : template_names()) read(name + ".tmpl");
    read("kinds.json");
    return from_sources(sources);
}

const Template& TemplateSet::get(std::string_view name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw Error(ErrorCode::InvalidTemplate, "unknown template '" + std::string(name) + "'");
    return it->second;
}

const KindWording& TemplateSet::kind(ElementKind k) const { return kinds_.at(k); }

std::string characteristic_label(std::size_t dimension, std::size_t index) {
    std::string letters;
    std::size_t i = index;
    do {
        letters.insert(letters.begin(), static_cast<char>('a' + i % 26));
        i = i / 26;
    } while (i-- > 0);
    return std::to_string(dimension) + "-" + letters;
}

std::string attribute_key(std::size_t index) {
    std::string letters;
    std::size_t i = index;
    do {
        letters.insert(letters.begin(), static_cast<char>('A' + i % 26));
        i = i / 26;
    } while (i-- > 0);
    return letters;
}

PercentageWeights weights_to_percentages(const WeightVector& w, const std::vector<std::string>& labels) {
    const std::size_t n = w.size();
    PercentageWeights out;
    out.labels = labels;
    if (out.labels.empty()) {
        for (std::size_t i = 0; i < n; ++i) out.labels.push_back(attribute_key(i));
    }
    std::vector<double> remainder(n);
    out.percents.resize(n);
    int assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double scaled = w[i] * 100.0;
        const double nearest = std::round(scaled);
        // 0.29 * 100 is 28.999999999999996.
        if (std::abs(scaled - nearest) < 1e-9) scaled = nearest;
        const double floor = std::floor(scaled);
        out.percents[i] = static_cast<int>(floor);
        remainder[i] = scaled - floor;
        assigned += out.percents[i];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    int deficit = 100 - assigned;
    for (std::size_t k = 0; deficit > 0; k = (k + 1) % n, --deficit) out.percents[order[k]] += 1;
    // Only reachable when the input sums slightly above 1.
    while (deficit < 0) {
        for (auto it = order.rbegin(); it != order.rend() && deficit < 0; ++it) {
            if (out.percents[*it] > 0) {
                out.percents[*it] -= 1;
                ++deficit;
            }
        }
    }
    return out;
}

std::string percentage_phrase(const PercentageWeights& p) {
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < p.percents.size(); ++i) {
        parts.push_back(std::to_string(p.percents[i]) + "% of " + p.labels[i]);
    }
    return join_list(parts);
}

std::string PromptBuilder::build_context(const World& world) const {
    const auto elements = world.context_elements();
    static constexpr ElementKind kSectionOrder[] = {ElementKind::note,    ElementKind::character, ElementKind::event,
                                                    ElementKind::faction, ElementKind::place,     ElementKind::prop};
    std::vector<std::string> sections;
    for (ElementKind kind : kSectionOrder) {
        std::vector<std::string> items;
        for (const Element* e : elements) {
            if (e->kind == kind) items.push_back("- " + e->text);
        }
        if (items.empty()) continue;
        sections.push_back(templates_->get("context_section")
                               .render({{"header", templates_->kind(kind).context_header}, {"items", join(items, "\n")}}));
    }
    std::string body = join(sections, "\n\n");
    if (!body.empty()) body += "\n";
    return templates_->get("context").render({{"sections", body}});
}

std::string PromptBuilder::kind_slots(ElementKind kind, Slots& slots) const {
    const KindWording& w = templates_->kind(kind);
    slots["kind"] = w.noun;
    slots["kind_plural"] = w.plural;
    slots["kind_label"] = w.label;
    slots["guidance"] = w.guidance;
    return w.noun;
}

std::string PromptBuilder::render_dimension(const World& world, const View& view, std::size_t index) const {
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < view.magnets.size(); ++i) {
        const Magnet& m = view.magnets[i];
        std::string text = m.definition_text;
        if (m.source && world.has_element(*m.source)) {
            text = templates_->kind(world.element(*m.source).kind).label + "- " + text;
        }
        lines.push_back(characteristic_label(index, i) + ": " + text);
    }
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < view.magnets.size(); ++i) labels.push_back(characteristic_label(index, i));

    std::string examples;
    const auto stored = world.prompt_examples(view.id);
    if (!stored.empty()) {
        std::vector<std::string> entries;
        for (const Example* ex : stored) {
            entries.push_back(templates_->get("dimension_example")
                                  .render({{"percentages", percentage_phrase(weights_to_percentages(ex->weights, labels))},
                                           {"kind_label", templates_->kind(ex->kind).label},
                                           {"text", ex->text}}));
        }
        examples = templates_->get("dimension_examples")
                       .render({{"index", std::to_string(index)}, {"entries", join(entries, "\n\n")}});
    }
    return templates_->get("dimension").render(
        {{"index", std::to_string(index)}, {"characteristics", join(lines, "\n")}, {"examples", examples}});
}

namespace {

struct TargetPhrases {
    std::string dimension_list;
    std::string targets;
    std::string targets_in_dimensions;
};

TargetPhrases target_phrases(const std::vector<std::vector<std::string>>& labels, const std::vector<WeightVector>& targets) {
    TargetPhrases out;
    std::vector<std::string> dims;
    std::vector<std::string> per_dim;
    for (std::size_t d = 0; d < targets.size(); ++d) {
        dims.push_back(dimension_name(d + 1));
        per_dim.push_back(percentage_phrase(weights_to_percentages(targets[d], labels[d])));
    }
    out.dimension_list = join_list(dims);
    if (targets.size() == 1) {
        out.targets = per_dim[0];
        out.targets_in_dimensions = per_dim[0] + " in " + dims[0];
    } else {
        std::vector<std::string> parts;
        for (std::size_t d = 0; d < targets.size(); ++d) parts.push_back(per_dim[d] + " in " + dims[d]);
        out.targets = join_list(parts);
        out.targets_in_dimensions = out.targets;
    }
    return out;
}

std::vector<std::string> magnet_texts(const View& v) {
    std::vector<std::string> out;
    for (const auto& m : v.magnets) out.push_back(m.definition_text);
    return out;
}

} // namespace

PromptBundle PromptBuilder::build_plain_generation(const World& world, ElementKind kind,
                                                   const std::optional<std::string>& user_prompt) const {
    Slots slots;
    kind_slots(kind, slots);
    const std::string prompt = user_prompt ? trim(*user_prompt) : std::string{};
    slots["user_instruction"] = prompt.empty() ? "" : templates_->get("user_instruction").render({{"prompt", prompt}});
    const std::string instruction = templates_->get("plain_instruction").render(slots);

    PromptBundle bundle;
    bundle.system_preamble = templates_->get("system").render({});
    bundle.body = templates_->get("plain_generation").render({{"context", build_context(world)}, {"instruction", instruction}});
    bundle.family = PromptFamily::plain_generation;
    bundle.expected_format = ExpectedFormat::freeform_after_marker;
    bundle.hints.kind = kind;
    bundle.hints.user_prompt = prompt;
    return bundle;
}

PromptBundle PromptBuilder::build_steered_generation(const World& world, const std::vector<ViewId>& steering_views,
                                                     ElementKind kind,
                                                     const std::optional<std::string>& user_prompt) const {
    if (steering_views.empty()) throw Error(ErrorCode::SteeringUnset, "no steering view given");
    PromptBundle bundle;
    std::vector<std::string> blocks;
    std::vector<std::vector<std::string>> labels;
    for (std::size_t d = 0; d < steering_views.size(); ++d) {
        const View& v = world.view(steering_views[d]);
        auto marker = v.marker_weights();
        if (!marker) throw Error(ErrorCode::SteeringUnset, "view '" + v.id + "' has no steering marker");
        blocks.push_back(render_dimension(world, v, d + 1));
        std::vector<std::string> l;
        for (std::size_t i = 0; i < v.magnets.size(); ++i) l.push_back(characteristic_label(d + 1, i));
        labels.push_back(std::move(l));
        bundle.hints.concepts.push_back(magnet_texts(v));
        bundle.hints.targets.push_back(*marker);
    }
    const TargetPhrases phrases = target_phrases(labels, bundle.hints.targets);

    Slots slots;
    kind_slots(kind, slots);
    const std::string prompt = user_prompt ? trim(*user_prompt) : std::string{};
    slots["user_instruction"] = prompt.empty() ? "" : templates_->get("user_instruction").render({{"prompt", prompt}});
    slots["dimension_list"] = phrases.dimension_list;
    slots["targets"] = phrases.targets;
    slots["targets_in_dimensions"] = phrases.targets_in_dimensions;
    const std::string instruction = templates_->get("steered_instruction").render(slots);

    bundle.system_preamble = templates_->get("system").render({});
    bundle.body = templates_->get("steered_generation")
                      .render({{"context", build_context(world)}, {"dimensions", join(blocks, "\n\n")}, {"instruction", instruction}});
    bundle.family = PromptFamily::steered_generation;
    bundle.expected_format = ExpectedFormat::freeform_after_marker;
    bundle.hints.kind = kind;
    bundle.hints.user_prompt = prompt;
    return bundle;
}

PromptBundle PromptBuilder::build_recognition(const World& world, const ViewId& view_id, const ElementId& element_id) const {
    const View& v = world.view(view_id);
    const Element& e = world.element(element_id);
    if (v.magnets.size() < 2) throw Error(ErrorCode::DegenerateLayout, "view '" + v.id + "' has fewer than two magnets");

    std::vector<std::string> attributes;
    std::vector<std::string> keys;
    for (std::size_t i = 0; i < v.magnets.size(); ++i) {
        keys.push_back(attribute_key(i));
        attributes.push_back(keys.back() + ": " + v.magnets[i].definition_text);
    }

    std::string examples;
    const auto stored = world.prompt_examples(v.id);
    if (!stored.empty()) {
        std::vector<std::string> entries;
        for (const Example* ex : stored) {
            const auto pct = weights_to_percentages(ex->weights, keys);
            std::vector<std::string> answer;
            for (std::size_t i = 0; i < keys.size(); ++i) answer.push_back(keys[i] + ": " + std::to_string(pct.percents[i]) + "%");
            entries.push_back(templates_->get("recognition_example").render({{"text", ex->text}, {"answer", join(answer, "\n")}}));
        }
        examples = templates_->get("recognition_examples").render({{"entries", join(entries, "\n\n")}});
    }

    PromptBundle bundle;
    bundle.system_preamble = templates_->get("system").render({});
    bundle.body = templates_->get("recognition").render({{"context", build_context(world)},
                                                          {"attributes", join(attributes, "\n")},
                                                          {"examples", examples},
                                                          {"element", e.text}});
    bundle.family = PromptFamily::recognition;
    bundle.expected_format = ExpectedFormat::json_after_marker;
    bundle.hints.kind = e.kind;
    bundle.hints.concepts.push_back(magnet_texts(v));
    bundle.hints.subject_text = e.text;
    return bundle;
}

PromptBundle PromptBuilder::build_rewrite(const World& world, const ViewId& view_id, const ElementId& element_id,
                                          const WeightVector& target) const {
    const View& v = world.view(view_id);
    const Element& e = world.element(element_id);
    if (!v.find_placement(element_id)) {
        throw Error(ErrorCode::NotFound, "element '" + element_id + "' is not placed in view '" + view_id + "'");
    }
    if (target.size() != v.magnets.size()) {
        throw Error(ErrorCode::InvalidWeightVector, "rewrite target does not match the view's magnets");
    }
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < v.magnets.size(); ++i) labels.push_back(characteristic_label(1, i));
    const TargetPhrases phrases = target_phrases({labels}, {target});

    Slots slots;
    kind_slots(e.kind, slots);
    slots["dimension_list"] = phrases.dimension_list;
    slots["targets"] = phrases.targets;
    slots["targets_in_dimensions"] = phrases.targets_in_dimensions;
    const std::string instruction = templates_->get("rewrite_instruction").render(slots);

    PromptBundle bundle;
    bundle.system_preamble = templates_->get("system").render({});
    bundle.body = templates_->get("rewrite").render({{"context", build_context(world)},
                                                      {"dimensions", render_dimension(world, v, 1)},
                                                      {"kind", slots["kind"]},
                                                      {"kind_label", slots["kind_label"]},
                                                      {"element", e.text},
                                                      {"instruction", instruction}});
    bundle.family = PromptFamily::rewrite;
    bundle.expected_format = ExpectedFormat::freeform_after_marker;
    bundle.hints.kind = e.kind;
    bundle.hints.concepts.push_back(magnet_texts(v));
    bundle.hints.targets.push_back(target);
    bundle.hints.subject_text = e.text;
    return bundle;
}

namespace {

struct MarkerSplit {
    std::string_view before;
    std::string_view after;
};

// The last line holding a run of four or more '=' splits reasoning from
// answer. Text after the run on that same line belongs to the answer.
MarkerSplit split_on_marker(std::string_view raw) {
    std::optional<MarkerSplit> found;
    std::size_t line_start = 0;
    while (line_start <= raw.size()) {
        std::size_t line_end = raw.find('\n', line_start);
        if (line_end == std::string_view::npos) line_end = raw.size();
        const std::string_view line = raw.substr(line_start, line_end - line_start);
        std::size_t run_end = std::string_view::npos;
        for (std::size_t i = 0; i < line.size();) {
            if (line[i] != '=') {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < line.size() && line[j] == '=') ++j;
            if (j - i >= 4) run_end = j;
            i = j;
        }
        if (run_end != std::string_view::npos) {
            found = MarkerSplit{raw.substr(0, line_start), raw.substr(line_start + run_end)};
        }
        if (line_end == raw.size()) break;
        line_start = line_end + 1;
    }
    if (!found) throw Error(ErrorCode::MissingMarker, "response has no \"====\" marker");
    return *found;
}

// First balanced {...} in s, honouring JSON string quoting.
std::optional<std::string_view> first_json_object(std::string_view s) {
    const auto open = s.find('{');
    if (open == std::string_view::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return s.substr(open, i - open + 1);
    }
    return std::nullopt;
}

std::optional<double> read_percent(const nlohmann::json& v) {
    if (v.is_number()) return v.get<double>();
    if (!v.is_string()) return std::nullopt;
    std::string s = trim(v.get<std::string>());
    if (!s.empty() && s.back() == '%') s.pop_back();
    s = trim(s);
    if (s.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const double d = std::stod(s, &used);
        if (used != s.size()) return std::nullopt;
        return d;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

} // namespace

std::string parse_generation(std::string_view raw) {
    const MarkerSplit split = split_on_marker(raw);
    std::string text = trim(split.after);
    if (text.empty()) throw Error(ErrorCode::EmptyGeneration, "nothing after the \"====\" marker");
    return text;
}

ParsedRecognition parse_recognition(std::string_view raw, std::size_t concept_count) {
    const MarkerSplit split = split_on_marker(raw);
    if (trim(split.after).empty()) throw Error(ErrorCode::EmptyGeneration, "nothing after the \"====\" marker");
    if (concept_count < 2) throw Error(ErrorCode::MalformedRecognition, "recognition needs at least two concepts");

    const auto object = first_json_object(split.after);
    if (!object) throw Error(ErrorCode::MalformedRecognition, "no JSON object after the marker");
    const nlohmann::json doc = nlohmann::json::parse(*object, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::MalformedRecognition, "answer is not valid JSON");

    std::vector<double> values;
    for (std::size_t i = 0; i < concept_count; ++i) {
        const std::string key = attribute_key(i);
        auto it = doc.find(key);
        if (it == doc.end()) {
            std::string lower = key;
            for (char& c : lower) c = static_cast<char>(c - 'A' + 'a');
            it = doc.find(lower);
        }
        if (it == doc.end()) throw Error(ErrorCode::MalformedRecognition, "answer lacks key '" + key + "'");
        const auto value = read_percent(*it);
        if (!value || !std::isfinite(*value)) throw Error(ErrorCode::MalformedRecognition, "key '" + key + "' is not a number");
        if (*value < 0.0) throw Error(ErrorCode::MalformedRecognition, "key '" + key + "' is negative");
        values.push_back(*value);
    }
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    if (!(total > 0.0) || !std::isfinite(total)) throw Error(ErrorCode::MalformedRecognition, "values sum to zero");
    for (double& v : values) v /= total;
    return {trim(split.before), WeightVector::normalized(std::move(values))};
}

std::variant<std::string, ParsedRecognition> parse_marker_response(std::string_view raw, ExpectedFormat format,
                                                                   std::size_t concept_count) {
    if (format == ExpectedFormat::freeform_after_marker) return parse_generation(raw);
    return parse_recognition(raw, concept_count);
}

} // namespace dustmagnet
