#include "dustmagnet/metrics.hpp"

#include "dustmagnet/error.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace dustmagnet {

std::string_view to_string(SampleKind kind) {
    return kind == SampleKind::recognition ? "recognition" : "steering";
}

double weight_distance(const WeightVector& a, const WeightVector& b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::InvalidWeightVector, "weight vectors differ in dimension (" + std::to_string(a.size()) +
                                                        " vs " + std::to_string(b.size()) + ")");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
    return std::min(1.0, 0.5 * sum);
}

namespace {

struct Episode {
    ViewId view_id;
    ElementId element_id;
    WeightVector auto_weights;
    std::optional<WeightVector> steering_weights;
    WeightVector final_weights;
    int example_count = 0;
    bool dropped = false;
};

std::vector<Episode> replay(std::span<const InteractionLogEntry> log) {
    std::vector<Episode> episodes;
    std::map<std::pair<ViewId, ElementId>, std::size_t> active;
    for (const auto& entry : log) {
        const auto key = std::make_pair(entry.view_id, entry.element_id);
        switch (entry.kind) {
        case LogKind::recognize:
            if (!entry.auto_weights) break;
            active[key] = episodes.size();
            episodes.push_back({entry.view_id, entry.element_id, *entry.auto_weights, entry.steering_weights,
                                *entry.auto_weights, entry.example_count_at_time});
            break;
        case LogKind::reposition:
            if (!entry.user_weights) break;
            if (auto it = active.find(key); it != active.end()) {
                Episode& ep = episodes[it->second];
                if (ep.final_weights.size() == entry.user_weights->size()) ep.final_weights = *entry.user_weights;
                else ep.dropped = true; // the view's magnets changed underneath
            }
            break;
        case LogKind::exclude:
            for (auto& ep : episodes) {
                if (ep.view_id == entry.view_id && ep.element_id == entry.element_id) ep.dropped = true;
            }
            active.erase(key);
            break;
        case LogKind::remove:
            for (auto& ep : episodes) {
                if (ep.element_id == entry.element_id) ep.dropped = true;
            }
            std::erase_if(active, [&](const auto& kv) { return kv.first.second == entry.element_id; });
            break;
        default:
            break;
        }
    }
    std::erase_if(episodes, [](const Episode& ep) { return ep.dropped; });
    return episodes;
}

} // namespace

std::vector<ErrorSample> recognition_errors(std::span<const InteractionLogEntry> log) {
    std::vector<ErrorSample> out;
    for (const auto& ep : replay(log)) {
        out.push_back({SampleKind::recognition, weight_distance(ep.auto_weights, ep.final_weights), ep.example_count,
                       ep.view_id, ep.element_id});
    }
    return out;
}

std::vector<ErrorSample> steering_errors(std::span<const InteractionLogEntry> log) {
    std::vector<ErrorSample> out;
    for (const auto& ep : replay(log)) {
        if (!ep.steering_weights || ep.steering_weights->size() != ep.final_weights.size()) continue;
        out.push_back({SampleKind::steering, weight_distance(*ep.steering_weights, ep.final_weights), ep.example_count,
                       ep.view_id, ep.element_id});
    }
    return out;
}

Regression examples_regression(std::span<const ErrorSample> samples) {
    const std::size_t n = samples.size();
    if (n < 3) throw Error(ErrorCode::InsufficientData, "regression needs at least 3 samples, got " + std::to_string(n));
    double mx = 0.0, my = 0.0;
    for (const auto& s : samples) {
        mx += s.example_count;
        my += s.error;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& s : samples) {
        const double dx = s.example_count - mx;
        const double dy = s.error - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) throw Error(ErrorCode::InsufficientData, "every sample has the same example count");

    Regression r;
    r.n = n;
    r.coeff = sxy / sxx;
    r.intercept = my - r.coeff * mx;
    double sse = 0.0;
    for (const auto& s : samples) {
        const double resid = s.error - (r.intercept + r.coeff * s.example_count);
        sse += resid * resid;
    }
    r.r2 = syy > 0.0 ? 1.0 - sse / syy : 0.0;
    const double df = static_cast<double>(n - 2);
    const double se = std::sqrt(sse / df / sxx);
    if (se == 0.0) {
        r.p = r.coeff == 0.0 ? 1.0 : 0.0;
    } else {
        const double t = r.coeff / se;
        boost::math::students_t dist(df);
        r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
    return r;
}

SampleSummary summarize(std::span<const ErrorSample> samples) {
    SampleSummary s;
    s.n = samples.size();
    if (s.n == 0) return s;
    double sum = 0.0;
    for (const auto& x : samples) sum += x.error;
    const double mean = sum / static_cast<double>(s.n);
    s.mean = mean;
    if (s.n < 2) return s;
    double ss = 0.0;
    for (const auto& x : samples) ss += (x.error - mean) * (x.error - mean);
    const double sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    boost::math::students_t dist(static_cast<double>(s.n - 1));
    const double half = boost::math::quantile(dist, 0.975) * sd / std::sqrt(static_cast<double>(s.n));
    s.ci_low = mean - half;
    s.ci_high = mean + half;
    return s;
}

MetricsReport metrics_report(std::span<const InteractionLogEntry> log) {
    MetricsReport r;
    r.recognition = recognition_errors(log);
    r.steering = steering_errors(log);
    r.recognition_summary = summarize(r.recognition);
    r.steering_summary = summarize(r.steering);
    auto try_regress = [](const std::vector<ErrorSample>& s) -> std::optional<Regression> {
        try {
            return examples_regression(s);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::InsufficientData) throw;
            return std::nullopt;
        }
    };
    r.recognition_regression = try_regress(r.recognition);
    r.steering_regression = try_regress(r.steering);
    return r;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json summary_json(const SampleSummary& s) {
    return {{"n", s.n}, {"mean", opt(s.mean)}, {"ci95_low", opt(s.ci_low)}, {"ci95_high", opt(s.ci_high)}};
}

nlohmann::json regression_json(const std::optional<Regression>& r) {
    if (!r) return nullptr;
    return {{"coeff", r->coeff}, {"intercept", r->intercept}, {"r2", r->r2}, {"p", r->p}, {"n", r->n}};
}

std::string fmt(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

void text_section(std::ostringstream& out, const char* title, const SampleSummary& s,
                  const std::optional<Regression>& r) {
    out << title << '\n';
    out << "  n                 " << s.n << '\n';
    out << "  mean error        " << fmt(s.mean) << '\n';
    out << "  95% CI            ";
    if (s.ci_low) out << '[' << fmt(s.ci_low) << ", " << fmt(s.ci_high) << "]\n";
    else out << "undefined\n";
    if (r) {
        out << "  coeff (examples)  " << fmt(r->coeff) << '\n';
        out << "  p                 " << fmt(r->p) << '\n';
        out << "  R^2               " << fmt(r->r2) << '\n';
    } else {
        out << "  regression        insufficient data\n";
    }
}

} // namespace

nlohmann::json to_json(const ErrorSample& s) {
    return {{"kind", to_string(s.kind)}, {"error", s.error}, {"example_count", s.example_count},
            {"view_id", s.view_id},      {"element_id", s.element_id}};
}

nlohmann::json to_json(const MetricsReport& report) {
    nlohmann::json rec = nlohmann::json::array();
    for (const auto& s : report.recognition) rec.push_back(to_json(s));
    nlohmann::json steer = nlohmann::json::array();
    for (const auto& s : report.steering) steer.push_back(to_json(s));
    return {{"recognition",
             {{"samples", rec},
              {"summary", summary_json(report.recognition_summary)},
              {"regression", regression_json(report.recognition_regression)}}},
            {"steering",
             {{"samples", steer},
              {"summary", summary_json(report.steering_summary)},
              {"regression", regression_json(report.steering_regression)}}}};
}

std::string to_text(const MetricsReport& report) {
    std::ostringstream out;
    text_section(out, "recognition error", report.recognition_summary, report.recognition_regression);
    text_section(out, "steering error", report.steering_summary, report.steering_regression);
    return out.str();
}

} // namespace dustmagnet
