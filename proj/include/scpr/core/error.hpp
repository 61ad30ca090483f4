#pragma once

#include <stdexcept>
#include <string>

namespace scpr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// NaN/inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (unknown key, k1 > k2, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (corpus, record file, quadruple file, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or other binary format violation.
class FormatError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

/// A derived object no longer matches the inputs it was derived from.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Operation requires a mode (e.g. seq2seq) the model was not built with.
class ModeError : public Error {
 public:
  using Error::Error;
};

}  // namespace scpr
