#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dustmagnet {

// Every failure surfaced by the library carries one of these codes. The
// HTTP layer maps each code to exactly one status (see server.hpp).
enum class ErrorCode {
    InvalidWeightVector,
    DegenerateLayout,
    HeuristicFailure,
    InvalidElement,
    InvalidConcept,
    NotFound,
    IllegalCross,
    SteeringUnset,
    MissingMarker,
    EmptyGeneration,
    MalformedRecognition,
    ProviderUnavailable,
    ProviderRejected,
    InvalidConfig,
    InsufficientData,
    CorruptWorldFile,
    UnsupportedVersion,
    IoError,
    InvalidTemplate,
    BadRequest,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string field_path = {})
        : std::runtime_error(message), code_(code), field_path_(std::move(field_path)) {}

    ErrorCode code() const noexcept { return code_; }

    // JSON-pointer-like location of the offending field, when one applies.
    const std::string& field_path() const noexcept { return field_path_; }

private:
    ErrorCode code_;
    std::string field_path_;
};

} // namespace dustmagnet
