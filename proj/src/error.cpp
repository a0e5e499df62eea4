#include "isocaps/error.hpp"

namespace isocaps {

std::string_view error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MalformedFile: return "MalformedFile";
        case ErrorKind::AsymmetricMatrix: return "AsymmetricMatrix";
        case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorKind::InconsistentNodeCount: return "InconsistentNodeCount";
        case ErrorKind::IoFailure: return "IoFailure";
        case ErrorKind::BadSpec: return "BadSpec";
        case ErrorKind::KTooLarge: return "KTooLarge";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::NotSymmetric: return "NotSymmetric";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::GraphTooSmall: return "GraphTooSmall";
        case ErrorKind::BadGamma: return "BadGamma";
        case ErrorKind::BadIterations: return "BadIterations";
        case ErrorKind::EmptyBatch: return "EmptyBatch";
        case ErrorKind::StaleActivations: return "StaleActivations";
        case ErrorKind::EmptyEvalSet: return "EmptyEvalSet";
        case ErrorKind::ModelFormatError: return "ModelFormatError";
        case ErrorKind::UnknownGraphId: return "UnknownGraphId";
        case ErrorKind::BadConfig: return "BadConfig";
    }
    return "Unknown";
}

}  // namespace isocaps
