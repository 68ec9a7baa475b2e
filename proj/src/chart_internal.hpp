// Shared pieces of the chart implementation.
#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "rbn/chart.hpp"
#include "rbn/model.hpp"

namespace rbn::detail {

// Normal-form transitions flattened into per-category rules over the
// concatenated non-terminal/terminal spaces, weights premultiplied by the
// structural probabilities.
struct BinaryRule {
  int a, b, c;  // a -> (b, c)
  double logw;
};

struct EmitRule {
  int a, t;  // a -> t
  double logw;
};

struct DiscreteRules {
  CategoryIndex nts;
  CategoryIndex ts;
  std::vector<BinaryRule> binary;
  std::vector<EmitRule> emit;
  Eigen::VectorXd log_prior;  // over non-terminal categories
};

DiscreteRules compile_rules(const RbnSpec& spec);

Eigen::VectorXd discrete_log_prior(const RbnSpec& spec, const CategoryIndex& nts);

// Symbols of a discrete sequence, checked against the terminal space.
std::vector<int> checked_symbols(const DiscreteRules& rules, const Sequence& obs);

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

double log_poisson(int count, double lambda);
double log_det_2pi(const Mat& cov);

// log weights over shifts; a single zero-shift entry when shifts are disabled
inline Vec shift_log_weights(const GrbnParams& params) {
  if (!params.transpositions) return Vec::Zero(1);
  Vec lw(params.dim());
  for (int tau = 0; tau < params.dim(); ++tau)
    lw[tau] = params.weights[tau] > 0 ? std::log(params.weights[tau]) : kNegInf;
  return lw;
}

inline constexpr double kTieBand = 1e-9;

// Best-expansion tracker. Strictly better scores (beyond the tie band) win;
// within the band the first candidate is kept, or a uniformly random tied one
// when a tie stream is provided (reservoir over the tie run).
class BestPick {
 public:
  explicit BestPick(Rng* rng) : rng_(rng) {}

  void offer(int j, int tau, bool used_terminal, double score) {
    if (score == kNegInf) return;
    if (score > rec_.score + kTieBand) {
      rec_ = {j, tau, used_terminal, score};
      ties_ = 1;
      return;
    }
    if (score >= rec_.score - kTieBand) {
      ++ties_;
      if (rng_ != nullptr && rng_->uniform() * ties_ < 1.0)
        rec_ = {j, tau, used_terminal, score};
    }
  }

  const SplitRecord& record() const { return rec_; }

 private:
  SplitRecord rec_;
  int ties_ = 0;
  Rng* rng_;
};

Chart discrete_inside(const DiscreteRules& rules, const std::vector<int>& symbols,
                      Rng* tie_rng);
void discrete_outside(const DiscreteRules& rules, Chart& chart);

Chart gaussian_inside(const GrbnParams& params, const Sequence& obs, Rng* tie_rng);
void gaussian_outside(const GrbnParams& params, Chart& chart);

}  // namespace rbn::detail
