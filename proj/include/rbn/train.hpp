#pragma once

#include <string>
#include <vector>

#include "rbn/model.hpp"

namespace rbn {

enum class CovMode { Diagonal, Full };

// Unconstrained reparametrization of a spec's trainable numbers: covariances
// as log-diagonals (Diagonal) or log-Cholesky factors (Full), the
// termination probability through a logistic, shift weights and categorical
// rows through a softmax, the emission rate through an exponential, and the
// prior mean as-is. Any real vector decodes to a valid spec.
struct FreeParams {
  RbnSpec skeleton;  // fixed structure: variables, targets, flags, dimensions
  CovMode mode = CovMode::Diagonal;
  Eigen::VectorXd values;

  int size() const { return static_cast<int>(values.size()); }
};

// Diagonal mode requires diagonal covariances in `spec`; use CovMode::Full
// for anything else. decode_params(encode_params(s)) reproduces s to 1e-10.
// Decoded covariances are always finite and positive definite by
// construction; in full mode a plain Cholesky can certify that only while
// the factor's dynamic range fits double precision, so saturated values may
// still be rejected by downstream validation.
FreeParams encode_params(const RbnSpec& spec, CovMode mode = CovMode::Diagonal);
RbnSpec decode_params(const FreeParams& params);

// Data-driven starting point for a continuous skeleton: prior mean = dataset
// mean, every covariance diagonal = per-coordinate dataset variance,
// termination probability 1/2, uniform shift weights, rate = mean sequence
// length / 3.
FreeParams default_init(const RbnSpec& skeleton, const Dataset& data,
                        CovMode mode = CovMode::Diagonal);

// -sum_s log p(Y_s), charts evaluated per sequence. Sequences are scored
// concurrently (threads = 0 picks the hardware count) but reduced in dataset
// order, so the result is bit-stable across thread counts.
double dataset_nll(const RbnSpec& model, const Dataset& data, int threads = 0);

// Central finite differences of dataset_nll over the free coordinates.
Eigen::VectorXd nll_gradient(const FreeParams& params, const Dataset& data,
                             int threads = 0);

struct FitConfig {
  int max_iters = 100;
  double tol = 1e-6;        // relative NLL drop that counts as converged
  double step_size = 0.5;   // initial gradient step per iteration
  bool line_search = true;  // backtracking halving, up to 30 per iteration
  int threads = 0;
};

struct FitReport {
  FreeParams params;          // final point
  std::vector<double> trace;  // NLL per accepted iterate; trace[0] is the init
  bool converged = false;
  int iterations = 0;
  double seconds = 0.0;
};

// Gradient descent on dataset_nll. With line_search the trace is strictly
// decreasing and the run stops once no halving improves the objective or the
// relative drop falls under tol; without it steps are taken as-is.
FitReport fit(const FreeParams& init, const Dataset& data,
              const FitConfig& config = {});

// {"nll": [...], "converged": .., "iterations": .., "seconds": ..,
//  "model": <model JSON>}
std::string fit_report_to_json(const FitReport& report);

}  // namespace rbn
