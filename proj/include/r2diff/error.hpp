#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace r2diff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller passed arguments that violate an operation's preconditions.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// Some beta_n fell outside (0, 1).
class InvalidSchedule : public Error {
 public:
  using Error::Error;
};

class DegenerateRotation : public Error {
 public:
  using Error::Error;
};

/// The tuner target cannot be reached with the requested beta0 / N.
class UnreachableTarget : public Error {
 public:
  UnreachableTarget(const std::string& what, double suggested_beta0)
      : Error(what), suggested_beta0_(suggested_beta0) {}

  /// A beta0 for which the target would become reachable (0 if none helps).
  double suggested_beta0() const noexcept { return suggested_beta0_; }

 private:
  double suggested_beta0_;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step, double learning_rate)
      : Error(what), step_(step), learning_rate_(learning_rate) {}

  std::size_t step() const noexcept { return step_; }
  double learning_rate() const noexcept { return learning_rate_; }

 private:
  std::size_t step_;
  double learning_rate_;
};

class InferenceDiverged : public Error {
 public:
  using Error::Error;
};

/// A file or artifact could not be found or opened.
class NotFound : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents are malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace r2diff
