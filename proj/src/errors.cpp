#include "cirl/errors.hpp"

namespace cirl {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnresolvableSelector: return "UnresolvableSelector";
    case ErrorKind::CapacityExceeded: return "CapacityExceeded";
    case ErrorKind::InvalidScene: return "InvalidScene";
    case ErrorKind::InvalidScript: return "InvalidScript";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::DegenerateQuery: return "DegenerateQuery";
    case ErrorKind::ContextOverflow: return "ContextOverflow";
    case ErrorKind::DegenerateEmbedding: return "DegenerateEmbedding";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::ZeroEmbedding: return "ZeroEmbedding";
    case ErrorKind::MissingSubset: return "MissingSubset";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace cirl
