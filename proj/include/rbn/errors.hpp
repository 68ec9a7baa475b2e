#pragma once

#include <stdexcept>
#include <string>

namespace rbn {

// Error categories, kept coarse so they map cleanly onto process exit codes
// and the C API status values.
enum class ErrorCode {
  Validation,          // malformed or inconsistent model/input
  NotCnf,              // grammar/model not in the required normal form
  ContinuousVariable,  // operation requires an all-discrete model
  NotSimplex,          // probability vector fails simplex constraints
  BudgetExceeded,      // sampling or search exceeded its node/attempt budget
  LengthMismatch,      // sequence/tree length disagreement
  InvalidArgument,     // bad call-level argument
  Unsupported,         // model shape outside the supported family
  Io,                  // file read/write failure
  NotPositiveDefinite,  // covariance not PD after jitter policy
  NonConvergentCycle,   // unary-cycle elimination cannot converge
  NonFinite,            // non-finite value where a finite one is required
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

  // true for failures of numerical routines (as opposed to bad inputs)
  bool numeric() const {
    return code_ == ErrorCode::NotPositiveDefinite ||
           code_ == ErrorCode::NonConvergentCycle ||
           code_ == ErrorCode::NonFinite;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace rbn
