#pragma once

#include <stdexcept>
#include <string>

namespace dxlm {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN or Inf, or a gradient became non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Token id outside the vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Two evaluations of a supposedly pure function disagreed.
class DeterminismError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace dxlm
