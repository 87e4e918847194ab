// Error taxonomy shared by every module. All failures surface as typed
// exceptions so callers (and the CLI) can map them to stable exit codes.
#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace smamba {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct SingularMatrixError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Iterative routine failed to converge; carries the best iterate so the
// caller can inspect how far it got.
struct NumericalFailureError : std::runtime_error {
  std::vector<std::complex<double>> best_iterate;
  NumericalFailureError(const std::string& msg,
                        std::vector<std::complex<double>> best)
      : std::runtime_error(msg), best_iterate(std::move(best)) {}
};

struct NotControllableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotObservableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct TrainingDivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File parsing failure with the 1-based line it happened on.
struct ParseError : std::runtime_error {
  int line;
  ParseError(int line_, const std::string& msg)
      : std::runtime_error("parse error at line " + std::to_string(line_) +
                           ": " + msg),
        line(line_) {}
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace smamba
