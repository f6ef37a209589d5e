#include "dustmagnet/error.hpp"

namespace dustmagnet {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidWeightVector: return "InvalidWeightVector";
    case ErrorCode::DegenerateLayout: return "DegenerateLayout";
    case ErrorCode::HeuristicFailure: return "HeuristicFailure";
    case ErrorCode::InvalidElement: return "InvalidElement";
    case ErrorCode::InvalidConcept: return "InvalidConcept";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::IllegalCross: return "IllegalCross";
    case ErrorCode::SteeringUnset: return "SteeringUnset";
    case ErrorCode::MissingMarker: return "MissingMarker";
    case ErrorCode::EmptyGeneration: return "EmptyGeneration";
    case ErrorCode::MalformedRecognition: return "MalformedRecognition";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::ProviderRejected: return "ProviderRejected";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::CorruptWorldFile: return "CorruptWorldFile";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidTemplate: return "InvalidTemplate";
    case ErrorCode::BadRequest: return "BadRequest";
    }
    return "Unknown";
}

} // namespace dustmagnet
