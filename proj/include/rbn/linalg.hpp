#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "rbn/errors.hpp"

namespace rbn {

// Continuous state dimension is capped so that all vectors/matrices in the
// inference hot path live on the stack (no heap traffic per chart cell).
inline constexpr int kMaxDim = 16;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline void symmetrize(Mat& m) { m = ((m + m.transpose()) * 0.5).eval(); }

// Streaming log(sum(exp(...))) accumulator with a running maximum, so the
// reduction order is fixed by call order and no term list is materialized.
class LogSumExp {
 public:
  void add(double log_term) {
    if (log_term == kNegInf) return;
    if (log_term <= max_) {
      sum_ += std::exp(log_term - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - log_term) + 1.0;
      max_ = log_term;
    }
  }

  double value() const {
    if (max_ == kNegInf) return kNegInf;
    return max_ + std::log(sum_);
  }

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
};

inline double log_sum_exp(const double* begin, const double* end) {
  LogSumExp acc;
  for (const double* p = begin; p != end; ++p) acc.add(*p);
  return acc.value();
}

}  // namespace rbn
