#pragma once

#include <utility>
#include <vector>

#include "rbn/linalg.hpp"

namespace rbn {

// Multivariate normal in moment form.
struct Gaussian {
  Vec mean;
  Mat cov;

  int dim() const { return static_cast<int>(mean.size()); }
};

// Gaussian scaled by exp(log_c); the basic currency of chart messages.
struct LogWeightedGaussian {
  double log_c = 0.0;
  Gaussian g;
};

struct GaussianMixture {
  std::vector<LogWeightedGaussian> components;
};

// Cyclic dimension shift. As a matrix T, column j of the identity moves to
// column (j + tau) mod dim, so (T v)[c] = v[(c - tau) mod dim].
struct Transposition {
  int tau = 0;
  int dim = 1;

  Transposition inverse() const { return {(dim - tau) % dim, dim}; }

  Vec apply(const Vec& v) const;  // T v
};

// Cholesky factorization with an escalating diagonal jitter fallback:
// starting at 1e-12 * trace/dim and growing tenfold up to 1e-6 * trace/dim,
// after which NotPositiveDefinite is raised.
Eigen::LLT<Mat> cholesky_psd(const Mat& sigma);

// log N(x | mean, cov)
double log_density(const Gaussian& g, const Vec& x);

// Pointwise product of two densities over the same variable:
//   N(x|m1,S1) N(x|m2,S2) = N(m1|m2,S1+S2) N(x|m,S)
// returned as {log N(m1|m2,S1+S2), {m,S}}. Implemented with a single
// factorization of S1+S2 (S = S1 (S1+S2)^{-1} S2, no explicit inverses).
LogWeightedGaussian product(const Gaussian& a, const Gaussian& b);

// Rewrites a density over T x as a density over x:
//   N(T x | m, S) = N(x | T' m, T' S T)   (T orthonormal, T' its transpose)
Gaussian transform(const Gaussian& g, const Transposition& t);

// Collapses a mixture to the single Gaussian matching its total mass, mean,
// and covariance (the KL-optimal single-component approximation).
LogWeightedGaussian moment_match(const GaussianMixture& mixture);

// Maps a probability/count vector on the simplex to the mean and diagonal
// covariance of a log-normal approximation of its Dirichlet posterior:
//   var_l = ln(1/p_l + 1),  mean_l = ln p_l - var_l / 2
// after adding `smoothing` total pseudo-mass spread uniformly, then
// renormalizing. Returns (mean, variance diagonal).
std::pair<Vec, Vec> dirichlet_to_lognormal(const Vec& y, double smoothing = 0.01);

}  // namespace rbn
