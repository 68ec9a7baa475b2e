#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rbn/gaussian.hpp"
#include "rbn/model.hpp"

namespace rbn {

// Parameters of the canonical one-variable continuous model, pulled out of a
// spec once so the chart passes work with plain matrices.
struct GrbnParams {
  Vec mu_P;
  Mat sigma_P;
  Mat sigma_NL;
  Mat sigma_NR;
  Mat sigma_T;
  double p_term = 0.5;
  bool transpositions = false;
  Vec weights;  // over shifts tau in [0, D)
  bool multi = false;
  double lambda = 0.0;

  int dim() const { return static_cast<int>(mu_P.size()); }
};

// Extracts GrbnParams from a valid continuous spec. Chart inference needs
// both structural choices to be live, so p_term must lie strictly inside
// (0, 1) here even though degenerate values are fine for sampling.
GrbnParams grbn_params(const RbnSpec& spec);

// One chart cell's message: a log-probability vector over the concatenated
// non-terminal categories (discrete), or a single scaled Gaussian
// (continuous).
struct CellMessage {
  Eigen::VectorXd log_probs;
  LogWeightedGaussian gauss;
};

// Winning expansion of a cell, recorded while accumulating the inside
// mixture (before any reduction): either a split point with its shift, or
// direct emission of the whole span.
struct SplitRecord {
  int j = -1;
  int tau = 0;
  bool used_terminal = false;
  double score = kNegInf;
};

class Chart {
 public:
  Chart(int n, bool continuous)
      : n_(n),
        continuous_(continuous),
        inside_((n + 1) * (n + 1)),
        outside_((n + 1) * (n + 1)),
        splits_((n + 1) * (n + 1)) {}

  int size() const { return n_; }
  bool continuous() const { return continuous_; }
  bool has_outside() const { return has_outside_; }
  void mark_outside() { has_outside_ = true; }

  CellMessage& inside(int i, int k) { return inside_[idx(i, k)]; }
  const CellMessage& inside(int i, int k) const { return inside_[idx(i, k)]; }
  CellMessage& outside(int i, int k) { return outside_[idx(i, k)]; }
  const CellMessage& outside(int i, int k) const { return outside_[idx(i, k)]; }
  SplitRecord& split(int i, int k) { return splits_[idx(i, k)]; }
  const SplitRecord& split(int i, int k) const { return splits_[idx(i, k)]; }

 private:
  int idx(int i, int k) const { return i * (n_ + 1) + k; }

  int n_ = 0;
  bool continuous_ = false;
  bool has_outside_ = false;
  std::vector<CellMessage> inside_;
  std::vector<CellMessage> outside_;
  std::vector<SplitRecord> splits_;
};

// Bottom-up pass: fills every cell's inside message (exact sums for discrete
// models; per-cell moment-matched Gaussians for continuous ones) and records
// the best-scoring expansion per cell. Expansion scores within a 1e-9 band
// count as ties: by default the first candidate wins (terminal, then lowest
// split, lowest shift); with a tie stream, a uniformly random tied candidate.
Chart inside_pass(const RbnSpec& model, const Sequence& obs, Rng* tie_rng = nullptr);

// Top-down pass; requires the inside pass. The root's outside message is the
// prior; inner cells mix their generated-as-left-child and
// generated-as-right-child contexts.
void outside_pass(const RbnSpec& model, const Sequence& obs, Chart& chart);

// log p(observations): the root inside message integrated against the prior.
double marginal_likelihood(const RbnSpec& model, const Chart& chart);

struct NodePosterior {
  int i = 0;
  int k = 0;
  double existence = 0.0;  // probability that a node spans [i, k)
  CellMessage dist;        // value distribution given existence
};

// Per-cell posteriors from both passes, ordered by (i, k).
std::vector<NodePosterior> node_posteriors(const RbnSpec& model, const Chart& chart);

// Top-down unwind of the recorded best expansions. Node values are posterior
// means when the outside pass ran, inside means otherwise (discrete: highest-
// probability categories).
Tree best_tree(const RbnSpec& model, const Chart& chart);

// One row per cell: i, k, existence_prob, mean_1..mean_D, var_1..var_D,
// best_j, best_tau. Discrete models export the top category as the mean and
// its complementary posterior mass as the variance column.
std::string chart_to_csv(const RbnSpec& model, const Chart& chart);

// A value for every cell: continuous vectors, or categories in the
// concatenated non-terminal space. Cells are keyed by (i, k) like the chart.
struct LatentAssignment {
  int n = 0;
  std::vector<Vec> values;
  std::vector<int> categories;

  static LatentAssignment continuous(int n, int dim);
  static LatentAssignment discrete(int n);

  bool is_discrete() const { return !categories.empty(); }
  Vec& value(int i, int k) { return values[i * (n + 1) + k]; }
  const Vec& value(int i, int k) const { return values[i * (n + 1) + k]; }
  int& category(int i, int k) { return categories[i * (n + 1) + k]; }
  int category(int i, int k) const { return categories[i * (n + 1) + k]; }
};

// Every cell filled with the chart's inside means (or top categories), the
// natural start point for joint optimisation.
LatentAssignment inside_means(const Chart& chart);

struct JointResult {
  double log_joint = kNegInf;            // log p(X, Y), structure marginalized
  Eigen::MatrixXd existence;             // (i, k) -> node probability given X
};

// Joint of a full latent assignment with the data: only the tree structure is
// summed out, so the result is exact for both model kinds.
JointResult joint_inside_outside(const RbnSpec& model, const Sequence& obs,
                                 const LatentAssignment& x);

// Gradient ascent on log p(X, Y) over a continuous assignment: central
// finite-difference gradients with a backtracking line search, so the
// objective never decreases. The landscape is highly non-convex; results
// depend on the start point.
LatentAssignment map_estimate(const RbnSpec& model, const Sequence& obs,
                              const LatentAssignment& init, int steps,
                              double step_size);

// The tree structure maximizing p(structure, X, Y) for a fixed assignment.
// Discrete models may pass an empty assignment to also maximize over
// categories (classic Viterbi parsing).
Tree viterbi_structure(const RbnSpec& model, const Sequence& obs,
                       const LatentAssignment& x);

}  // namespace rbn
