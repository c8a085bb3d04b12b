#pragma once

#include <stdexcept>
#include <string>

namespace duet {

enum class ErrorKind {
  FileNotFound,
  ParseError,
  EmptyDataset,
  InvalidSplit,
  NoWindows,
  ShapeMismatch,
  InvalidK,
  InvalidKernel,
  UnknownExtractor,
  AsymmetricDistance,
  SeriesTooShort,
  InvalidSpec,
  InvalidConfig,
  EmptySet,
  Divergence,
  ConfigMismatch,
  CorruptCheckpoint,
  DeadRow,
  NonDeterministicLoss,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace duet
