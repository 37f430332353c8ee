#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cirl {

enum class ErrorKind {
  UnresolvableSelector,
  CapacityExceeded,
  InvalidScene,
  InvalidScript,
  InvalidConfig,
  ShapeMismatch,
  EmptySequence,
  DegenerateQuery,
  ContextOverflow,
  DegenerateEmbedding,
  NonFiniteLoss,
  ZeroEmbedding,
  MissingSubset,
  CorruptCheckpoint,
  SchemaMismatch,
  ParseError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace cirl
