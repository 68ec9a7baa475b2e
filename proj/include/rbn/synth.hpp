#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rbn/chart.hpp"
#include "rbn/model.hpp"

namespace rbn {

// Generator defaults for the segmentation benchmark: an isotropic model over
// a short vector of features whose left children may cyclically shift by one
// step, emitting runs of observations per leaf.
struct SynthConfig {
  int dim = 3;
  double prior_std = 1.0;   // Sigma_P = prior_std^2 I
  double branch_std = 0.1;  // Sigma_NL = Sigma_NR = branch_std^2 I
  double noise = 0.1;       // Sigma_T = noise^2 I
  double lambda = 5.0;      // leaves emit 1 + Poisson(lambda) observations
  double p_term = 0.6;
  int min_len = 50;
  int max_len = 55;
  // shift weights; empty means equal weight on shifts 0 and 1
  Eigen::VectorXd weights;
};

// Materializes the configured model; validates the configuration.
RbnSpec synth_model(const SynthConfig& config);

struct GeneratedSample {
  Sequence sequence;
  Tree tree;
};

// Rejection-samples `count` sequences whose lengths fall inside the window,
// keeping the generating trees. Deterministic per seed.
std::vector<GeneratedSample> generate_dataset(const SynthConfig& config, int count,
                                              std::uint64_t seed,
                                              int max_attempts = 100000);

// Sum of squared distances to the segment mean over [begin, end).
double l2_segment_cost(const std::vector<Vec>& series, int begin, int end);

// Penalized least-squares segmentation: returns the interior boundaries of
// the exact minimizer of  sum_segments cost + penalty * (#segments - 1),
// found by pruned dynamic programming with lowest-index tie-breaks.
std::vector<int> pelt_l2(const std::vector<Vec>& series, double penalty);

// Agglomerates the segments bounded by `change_points` into a binary tree,
// repeatedly merging the adjacent pair whose segment means (recomputed over
// merged spans) are closest in L2, lowest index on ties.
Tree bottom_up_hc(const std::vector<Vec>& series,
                  const std::vector<int>& change_points);

// Interior segment boundaries of a sampled tree's leaves, ascending.
std::vector<int> leaf_boundaries(const Tree& tree);

struct Metrics {
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Ratios with the zero-denominator convention: an empty denominator gives 0.
Metrics metrics_from_counts(double tp, double fp, double fn);

// Node-by-node comparison; nodes are identified by their spans only.
Metrics tree_metrics(const Tree& predicted, const Tree& truth);

// Soft counts from per-cell existence probabilities (clamped to [0, 1]):
// TP sums over the ground-truth spans, TP+FP over all spans, TP+FN counts
// the ground-truth nodes.
Metrics marginal_metrics(const std::vector<NodePosterior>& posteriors,
                         const Tree& truth);

// Change points matched one-to-one within `slack` indices (0 = exact).
Metrics change_point_metrics(const std::vector<int>& predicted,
                             const std::vector<int>& truth, int slack = 0);

// Percentile bootstrap interval (2.5th and 97.5th) for the mean of `values`,
// with linear interpolation between order statistics. Deterministic per seed.
std::pair<double, double> bootstrap_ci(const std::vector<double>& values,
                                       int resamples, std::uint64_t seed);

struct EvalConfig {
  SynthConfig synth;  // noise is overridden per level
  std::vector<double> noises = {0.01, 0.05, 0.1, 0.15, 0.2, 0.25};
  int baseline_train_count = 100;  // penalty selection split
  int rbn_train_count = 10;        // gradient-descent training split
  int test_count = 500;
  std::vector<double> penalty_grid;  // empty selects a built-in log grid
  int slack = 0;                     // change-point match tolerance
  int fit_iters = 15;
  double fit_step = 0.5;
  double fit_tol = 1e-4;
  int resamples = 1000;
  std::uint64_t seed = 1;
  int threads = 0;
};

struct EvalRow {
  double noise = 0.0;
  std::string method;  // "hc_cpd", "rbn_max", or "rbn_marginal"
  Metrics metrics;     // pooled counts over the test split
  double ci_low = 0.0;   // bootstrap interval over per-sequence f1
  double ci_high = 0.0;
  double penalty = 0.0;  // selected penalty (baseline rows only)
};

// Full benchmark at each noise level: selects the baseline penalty on the
// training split, trains the model on its own split, and scores the test
// split with all three methods. Three rows per noise level.
std::vector<EvalRow> run_eval(const EvalConfig& config);

// One line per row: noise, method, precision, recall, f1, ci_low, ci_high.
std::string eval_to_csv(const std::vector<EvalRow>& rows);

}  // namespace rbn
