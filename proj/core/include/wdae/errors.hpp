#pragma once

#include <stdexcept>
#include <string>

namespace wdae {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map the category to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class LoadErrorKind {
  missing_file,
  bad_magic,
  bad_version,
  truncated,
  dimension_mismatch,
  non_finite,
  bad_metadata,
};

class LoadError : public Error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}

  [[nodiscard]] LoadErrorKind kind() const noexcept { return kind_; }

 private:
  LoadErrorKind kind_;
};

}  // namespace wdae
