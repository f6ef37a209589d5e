#pragma once

#include "dustmagnet/world.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dustmagnet {

enum class SampleKind { recognition, steering };
std::string_view to_string(SampleKind kind);

struct ErrorSample {
    SampleKind kind = SampleKind::recognition;
    double error = 0.0; // in [0,1]
    int example_count = 0;
    ViewId view_id;
    ElementId element_id;
};

// Total-variation distance, half the L1 distance. 0 for identical vectors,
// 1 for disjoint unit masses. Throws InvalidWeightVector on size mismatch.
double weight_distance(const WeightVector& a, const WeightVector& b);

// Replays a log. Every recognize entry opens an episode for its
// (view, element) pair; the episode's final weights are the last
// reposition before the pair is recognized again or the log ends. A pair
// excluded from its view drops all of its earlier episodes, and a deleted
// element drops every episode it had.
std::vector<ErrorSample> recognition_errors(std::span<const InteractionLogEntry> log);

// Same episodes, restricted to recognitions that followed a steered
// generation, measured from the steering weights.
std::vector<ErrorSample> steering_errors(std::span<const InteractionLogEntry> log);

struct Regression {
    double coeff = 0.0;     // slope of error on example_count
    double intercept = 0.0;
    double r2 = 0.0;
    double p = 1.0;         // two-sided t-test on the slope
    std::size_t n = 0;
};

// Ordinary least squares of error on example_count. Throws InsufficientData
// below 3 samples or when every sample has the same example_count.
Regression examples_regression(std::span<const ErrorSample> samples);

struct SampleSummary {
    std::size_t n = 0;
    std::optional<double> mean;    // undefined for n = 0
    std::optional<double> ci_low;  // 95% t interval, undefined for n < 2
    std::optional<double> ci_high;
};

SampleSummary summarize(std::span<const ErrorSample> samples);

struct MetricsReport {
    std::vector<ErrorSample> recognition;
    std::vector<ErrorSample> steering;
    SampleSummary recognition_summary;
    SampleSummary steering_summary;
    std::optional<Regression> recognition_regression;
    std::optional<Regression> steering_regression;
};

MetricsReport metrics_report(std::span<const InteractionLogEntry> log);

nlohmann::json to_json(const ErrorSample& s);
nlohmann::json to_json(const MetricsReport& report);
std::string to_text(const MetricsReport& report);

} // namespace dustmagnet
