#include "rbn/gaussian.hpp"

#include <cmath>

namespace rbn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_same_dim(const Gaussian& a, const Gaussian& b, const char* op) {
  if (a.dim() != b.dim())
    fail(ErrorCode::InvalidArgument,
         std::string(op) + ": dimension mismatch (" + std::to_string(a.dim()) +
             " vs " + std::to_string(b.dim()) + ")");
}

}  // namespace

Vec Transposition::apply(const Vec& v) const {
  Vec out(dim);
  for (int c = 0; c < dim; ++c) out[c] = v[((c - tau) % dim + dim) % dim];
  return out;
}

Eigen::LLT<Mat> cholesky_psd(const Mat& sigma) {
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() == Eigen::Success) return llt;

  const int d = static_cast<int>(sigma.rows());
  const double trace = sigma.trace();
  if (!(trace > 0.0))
    fail(ErrorCode::NotPositiveDefinite,
         "covariance has non-positive trace; cannot regularize");
  const double unit = trace / d;
  for (double eps = 1e-12 * unit; eps <= 1e-6 * unit * (1.0 + 1e-12); eps *= 10.0) {
    Mat jittered = sigma;
    jittered.diagonal().array() += eps;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) return llt;
  }
  fail(ErrorCode::NotPositiveDefinite,
       "covariance not positive definite after jitter up to 1e-6 * trace/dim");
}

double log_density(const Gaussian& g, const Vec& x) {
  if (x.size() != g.mean.size())
    fail(ErrorCode::InvalidArgument, "log_density: point dimension mismatch");
  const Eigen::LLT<Mat> llt = cholesky_psd(g.cov);
  const Mat& l = llt.matrixLLT();
  double log_det = 0.0;
  for (int i = 0; i < l.rows(); ++i) log_det += std::log(l(i, i));
  log_det *= 2.0;
  const Vec diff = x - g.mean;
  const Vec white = llt.matrixL().solve(diff);
  return -0.5 * (g.dim() * kLog2Pi + log_det + white.squaredNorm());
}

LogWeightedGaussian product(const Gaussian& a, const Gaussian& b) {
  check_same_dim(a, b, "product");
  const Mat total = a.cov + b.cov;
  const Eigen::LLT<Mat> llt = cholesky_psd(total);

  const Mat& l = llt.matrixLLT();
  double log_det = 0.0;
  for (int i = 0; i < l.rows(); ++i) log_det += std::log(l(i, i));
  log_det *= 2.0;
  const Vec diff = a.mean - b.mean;
  const Vec white = llt.matrixL().solve(diff);
  const double log_scale =
      -0.5 * (a.dim() * kLog2Pi + log_det + white.squaredNorm());

  LogWeightedGaussian out;
  out.log_c = log_scale;
  // S1 (S1+S2)^{-1} S2 and the matching mean, with one factorization total
  out.g.cov = a.cov * llt.solve(b.cov);
  symmetrize(out.g.cov);
  out.g.mean = b.cov * llt.solve(a.mean) + a.cov * llt.solve(b.mean);
  return out;
}

Gaussian transform(const Gaussian& g, const Transposition& t) {
  if (t.dim != g.dim())
    fail(ErrorCode::InvalidArgument, "transform: transposition dimension mismatch");
  if (t.tau < 0 || t.tau >= t.dim)
    fail(ErrorCode::InvalidArgument, "transform: shift index out of range");
  const int d = t.dim;
  const int tau = t.tau;
  Gaussian out;
  out.mean.resize(d);
  out.cov.resize(d, d);
  for (int r = 0; r < d; ++r) {
    out.mean[r] = g.mean[(r + tau) % d];
    for (int c = 0; c < d; ++c) out.cov(r, c) = g.cov((r + tau) % d, (c + tau) % d);
  }
  return out;
}

LogWeightedGaussian moment_match(const GaussianMixture& mixture) {
  const auto& parts = mixture.components;
  if (parts.empty())
    fail(ErrorCode::InvalidArgument, "moment_match: empty mixture");
  const int d = parts.front().g.dim();
  for (const auto& p : parts)
    if (p.g.dim() != d)
      fail(ErrorCode::InvalidArgument, "moment_match: mixed component dimensions");
  if (parts.size() == 1) return parts.front();

  LogSumExp total;
  for (const auto& p : parts) total.add(p.log_c);
  const double log_total = total.value();

  LogWeightedGaussian out;
  out.log_c = log_total;
  if (log_total == kNegInf) {
    out.g = parts.front().g;
    return out;
  }

  Vec mean = Vec::Zero(d);
  for (const auto& p : parts) {
    const double w = std::exp(p.log_c - log_total);
    mean += w * p.g.mean;
  }
  Mat cov = Mat::Zero(d, d);
  for (const auto& p : parts) {
    const double w = std::exp(p.log_c - log_total);
    const Vec dm = p.g.mean - mean;
    cov += w * (p.g.cov + dm * dm.transpose());
  }
  symmetrize(cov);
  out.g.mean = std::move(mean);
  out.g.cov = std::move(cov);
  return out;
}

std::pair<Vec, Vec> dirichlet_to_lognormal(const Vec& y, double smoothing) {
  const int d = static_cast<int>(y.size());
  if (d == 0) fail(ErrorCode::InvalidArgument, "dirichlet_to_lognormal: empty vector");
  if (smoothing < 0.0)
    fail(ErrorCode::InvalidArgument, "dirichlet_to_lognormal: negative smoothing");
  double sum = 0.0;
  for (int i = 0; i < d; ++i) {
    if (!(y[i] >= -1e-12))
      fail(ErrorCode::NotSimplex, "dirichlet_to_lognormal: negative entry");
    sum += y[i];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    fail(ErrorCode::NotSimplex, "dirichlet_to_lognormal: entries must sum to 1");

  Vec mean(d), var(d);
  for (int i = 0; i < d; ++i) {
    const double p = (y[i] + smoothing / d) / (1.0 + smoothing);
    var[i] = std::log(1.0 / p + 1.0);
    mean[i] = std::log(p) - 0.5 * var[i];
    if (!std::isfinite(mean[i]) || !std::isfinite(var[i]))
      fail(ErrorCode::NonFinite,
           "dirichlet_to_lognormal: non-finite output; entry 0 or 1 with zero smoothing");
  }
  return {mean, var};
}

}  // namespace rbn
