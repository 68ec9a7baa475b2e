#include "rbn/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <variant>
#include <vector>

#include "json.hpp"
#include "rbn/chart.hpp"
#include "rbn/gaussian.hpp"

namespace rbn {

namespace {

constexpr double kLogFloor = -30.0;  // zero weights/rates encode to this
constexpr double kExpClamp = 300.0;  // keeps decoded scales finite and positive

double clamped_log(double p) { return std::log(std::max(p, std::exp(kLogFloor))); }

double clamped_exp(double v) {
  return std::exp(std::clamp(v, -kExpClamp, kExpClamp));
}

int cov_span(int d, CovMode mode) {
  return mode == CovMode::Diagonal ? d : d * (d + 1) / 2;
}

void push_cov(std::vector<double>& out, const Mat& s, CovMode mode,
              const std::string& what) {
  const int d = static_cast<int>(s.rows());
  if (mode == CovMode::Diagonal) {
    double off = 0.0;
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c)
        if (r != c) off = std::max(off, std::abs(s(r, c)));
    if (off > 1e-12 * (1.0 + s.diagonal().cwiseAbs().maxCoeff()))
      fail(ErrorCode::Validation,
           what + " is not diagonal; encode with CovMode::Full");
    for (int r = 0; r < d; ++r) {
      if (!(s(r, r) > 0.0))
        fail(ErrorCode::NotPositiveDefinite, what + " has a non-positive diagonal");
      out.push_back(std::log(s(r, r)));
    }
    return;
  }
  Eigen::LLT<Mat> llt(s);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::NotPositiveDefinite, what + " is not positive definite");
  const Mat l = llt.matrixL();
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < r; ++c) out.push_back(l(r, c));
    out.push_back(std::log(l(r, r)));
  }
}

Mat read_cov(const Eigen::VectorXd& values, int& at, int d, CovMode mode) {
  Mat s = Mat::Zero(d, d);
  if (mode == CovMode::Diagonal) {
    for (int r = 0; r < d; ++r) s(r, r) = clamped_exp(values[at++]);
    return s;
  }
  // factor entries are squared below, so clamp at half the exponent budget
  Mat l = Mat::Zero(d, d);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < r; ++c)
      l(r, c) = std::clamp(values[at++], -1e130, 1e130);
    l(r, r) = std::exp(std::clamp(values[at++], -kExpClamp / 2, kExpClamp / 2));
  }
  s = l * l.transpose();
  return s;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
  const double top = v.maxCoeff();
  Eigen::VectorXd w = (v.array() - top).exp();
  return w / w.sum();
}

bool is_categorical(const RbnSpec& spec) { return spec.kind == ModelKind::Discrete; }

FreeParams encode_categorical(const RbnSpec& spec, CovMode mode) {
  FreeParams out;
  out.skeleton = spec;
  out.mode = mode;
  std::vector<double> values;
  for (Eigen::Index i = 0; i < spec.prior.weights.size(); ++i)
    values.push_back(clamped_log(spec.prior.weights[i]));
  for (const Transition& t : spec.transitions) {
    const auto* kernel = std::get_if<CategoricalKernel>(&t.kernel);
    if (kernel == nullptr)
      fail(ErrorCode::Unsupported,
           "free parameters need categorical kernels in a discrete model");
    for (Eigen::Index r = 0; r < kernel->table.rows(); ++r)
      for (Eigen::Index c = 0; c < kernel->table.cols(); ++c)
        values.push_back(clamped_log(kernel->table(r, c)));
  }
  for (const StructuralDistribution& s : spec.structural)
    for (Eigen::Index r = 0; r < s.table.rows(); ++r)
      for (Eigen::Index c = 0; c < s.table.cols(); ++c)
        values.push_back(clamped_log(s.table(r, c)));
  out.values = Eigen::Map<Eigen::VectorXd>(values.data(), values.size());
  return out;
}

RbnSpec decode_categorical(const FreeParams& params) {
  RbnSpec spec = params.skeleton;
  int at = 0;
  auto take_row = [&](Eigen::Index n) {
    Eigen::VectorXd row(n);
    for (Eigen::Index i = 0; i < n; ++i) row[i] = params.values[at++];
    return softmax(row);
  };
  spec.prior.weights = take_row(spec.prior.weights.size());
  for (Transition& t : spec.transitions) {
    auto& table = std::get<CategoricalKernel>(t.kernel).table;
    for (Eigen::Index r = 0; r < table.rows(); ++r)
      table.row(r) = take_row(table.cols()).transpose();
  }
  for (StructuralDistribution& s : spec.structural)
    for (Eigen::Index r = 0; r < s.table.rows(); ++r)
      s.table.row(r) = take_row(s.table.cols()).transpose();
  return spec;
}

}  // namespace

FreeParams encode_params(const RbnSpec& spec, CovMode mode) {
  if (is_categorical(spec)) return encode_categorical(spec, mode);

  const GrbnParams p = grbn_params(spec);  // also validates the chart shape
  FreeParams out;
  out.skeleton = spec;
  out.mode = mode;
  std::vector<double> values;
  for (int i = 0; i < p.dim(); ++i) values.push_back(p.mu_P[i]);
  push_cov(values, p.sigma_P, mode, "prior covariance");
  push_cov(values, p.sigma_NL, mode, "left branch covariance");
  push_cov(values, p.sigma_NR, mode, "right branch covariance");
  push_cov(values, p.sigma_T, mode, "emission covariance");
  values.push_back(std::log(p.p_term) - std::log1p(-p.p_term));
  if (p.transpositions)
    for (int i = 0; i < p.dim(); ++i) values.push_back(clamped_log(p.weights[i]));
  if (p.multi) values.push_back(clamped_log(p.lambda));
  out.values = Eigen::Map<Eigen::VectorXd>(values.data(), values.size());
  return out;
}

RbnSpec decode_params(const FreeParams& params) {
  if (is_categorical(params.skeleton)) return decode_categorical(params);

  RbnSpec spec = params.skeleton;
  const int d = static_cast<int>(spec.prior.mean.size());
  int at = 0;
  Vec mu(d);
  for (int i = 0; i < d; ++i) mu[i] = params.values[at++];
  const Mat sigma_p = read_cov(params.values, at, d, params.mode);
  const Mat sigma_nl = read_cov(params.values, at, d, params.mode);
  const Mat sigma_nr = read_cov(params.values, at, d, params.mode);
  const Mat sigma_t = read_cov(params.values, at, d, params.mode);
  const double raw = params.values[at++];
  const double p_term =
      std::clamp(1.0 / (1.0 + std::exp(-raw)), 1e-12, 1.0 - 1e-12);

  spec.prior.mean = mu;
  spec.prior.cov = sigma_p;
  BranchKernel* branch = nullptr;
  EmissionKernel* emission = nullptr;
  for (Transition& t : spec.transitions) {
    if (auto* b = std::get_if<BranchKernel>(&t.kernel)) branch = b;
    if (auto* e = std::get_if<EmissionKernel>(&t.kernel)) emission = e;
  }
  branch->sigma_left = sigma_nl;
  branch->sigma_right = sigma_nr;
  if (branch->transpositions) {
    Eigen::VectorXd w(d);
    for (int i = 0; i < d; ++i) w[i] = params.values[at++];
    branch->weights = softmax(w);
  }
  emission->sigma = sigma_t;
  if (emission->multi) emission->lambda = clamped_exp(params.values[at++]);
  StructuralDistribution& structural = spec.structural[0];
  int col = 0;
  for (const Transition& t : spec.transitions) {
    if (t.source != structural.owner) continue;
    const bool emits = std::holds_alternative<EmissionKernel>(t.kernel);
    structural.table(0, col++) = emits ? p_term : 1.0 - p_term;
  }
  return spec;
}

FreeParams default_init(const RbnSpec& skeleton, const Dataset& data, CovMode mode) {
  if (is_categorical(skeleton))
    fail(ErrorCode::Unsupported,
         "default initialization is defined for continuous models");
  const GrbnParams shape = grbn_params(skeleton);
  if (data.sequences.empty())
    fail(ErrorCode::InvalidArgument, "default initialization needs data");

  const int d = shape.dim();
  Vec mean = Vec::Zero(d);
  long long count = 0;
  double length_total = 0.0;
  for (const Sequence& s : data.sequences) {
    length_total += s.size();
    for (const Vec& y : s.obs) {
      if (y.size() != d)
        fail(ErrorCode::InvalidArgument, "observation dimension mismatch");
      mean += y;
      ++count;
    }
  }
  if (count == 0) fail(ErrorCode::InvalidArgument, "default initialization needs data");
  mean /= static_cast<double>(count);
  Vec var = Vec::Zero(d);
  for (const Sequence& s : data.sequences)
    for (const Vec& y : s.obs) var += (y - mean).cwiseAbs2();
  var /= static_cast<double>(count);
  for (int i = 0; i < d; ++i) var[i] = std::max(var[i], 1e-4);

  RbnSpec init = skeleton;
  init.prior.mean = mean;
  init.prior.cov = Mat(var.asDiagonal());
  for (Transition& t : init.transitions) {
    if (auto* branch = std::get_if<BranchKernel>(&t.kernel)) {
      branch->sigma_left = Mat(var.asDiagonal());
      branch->sigma_right = Mat(var.asDiagonal());
      if (branch->transpositions)
        branch->weights = Vec::Constant(d, 1.0 / d);
    } else if (auto* emission = std::get_if<EmissionKernel>(&t.kernel)) {
      emission->sigma = Mat(var.asDiagonal());
      if (emission->multi)
        emission->lambda =
            std::max(length_total / data.sequences.size() / 3.0, 1e-3);
    }
  }
  StructuralDistribution& structural = init.structural[0];
  for (Eigen::Index c = 0; c < structural.table.cols(); ++c)
    structural.table(0, c) = 0.5;
  return encode_params(init, mode);
}

double dataset_nll(const RbnSpec& model, const Dataset& data, int threads) {
  const int n = static_cast<int>(data.sequences.size());
  if (n == 0) return 0.0;

  std::vector<double> terms(n, 0.0);
  auto score = [&](int i) {
    terms[i] = marginal_likelihood(model, inside_pass(model, data.sequences[i]));
  };

  int workers = threads > 0
                    ? threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) score(i);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_lock;
    auto run = [&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          score(i);
        } catch (...) {
          std::scoped_lock hold(error_lock);
          if (!first_error) first_error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  double nll = 0.0;
  for (int i = 0; i < n; ++i) nll -= terms[i];
  return nll;
}

Eigen::VectorXd nll_gradient(const FreeParams& params, const Dataset& data,
                             int threads) {
  const int dim = params.size();
  // one task per one-sided probe; assembled pairwise afterwards, so the
  // result does not depend on scheduling
  std::vector<double> probes(2 * dim, 0.0);
  auto evaluate = [&](int task) {
    const int i = task / 2;
    const double v = params.values[i];
    const double h = 1e-5 * (1.0 + std::abs(v));
    FreeParams probe = params;
    probe.values[i] = task % 2 == 0 ? v + h : v - h;
    probes[task] = dataset_nll(decode_params(probe), data, 1);
  };

  int workers = threads > 0
                    ? threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, 2 * dim);
  if (workers == 1) {
    for (int task = 0; task < 2 * dim; ++task) evaluate(task);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_lock;
    auto run = [&] {
      for (int t = next.fetch_add(1); t < 2 * dim; t = next.fetch_add(1)) {
        try {
          evaluate(t);
        } catch (...) {
          std::scoped_lock hold(error_lock);
          if (!first_error) first_error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  Eigen::VectorXd grad(dim);
  for (int i = 0; i < dim; ++i) {
    const double h = 1e-5 * (1.0 + std::abs(params.values[i]));
    grad[i] = (probes[2 * i] - probes[2 * i + 1]) / (2.0 * h);
  }
  return grad;
}

FitReport fit(const FreeParams& init, const Dataset& data, const FitConfig& config) {
  if (config.max_iters < 0)
    fail(ErrorCode::InvalidArgument, "fit needs a nonnegative iteration count");
  if (!(config.step_size > 0.0))
    fail(ErrorCode::InvalidArgument, "fit needs a positive step size");
  if (!(config.tol >= 0.0))
    fail(ErrorCode::InvalidArgument, "fit needs a nonnegative tolerance");

  if (!init.values.allFinite())
    fail(ErrorCode::NonFinite, "initial parameters are not finite");

  const auto started = std::chrono::steady_clock::now();
  FitReport report;
  report.params = init;
  double nll = dataset_nll(decode_params(init), data, config.threads);
  if (!std::isfinite(nll))
    fail(ErrorCode::NonFinite, "objective is not finite at the initial parameters");
  report.trace.push_back(nll);

  for (int iter = 0; iter < config.max_iters; ++iter) {
    const Eigen::VectorXd grad = nll_gradient(report.params, data, config.threads);
    if (!grad.allFinite()) break;

    // a candidate whose decode or evaluation fails counts as infinitely bad
    auto try_step = [&](const FreeParams& p) {
      try {
        return dataset_nll(decode_params(p), data, config.threads);
      } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
      }
    };

    FreeParams cand = report.params;
    double cand_nll = nll;
    bool accepted = false;
    double step = config.step_size;
    if (config.line_search) {
      for (int halving = 0; halving <= 30; ++halving) {
        cand.values = report.params.values - step * grad;
        const double trial = try_step(cand);
        if (std::isfinite(trial) && trial < nll) {
          cand_nll = trial;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
    } else {
      cand.values = report.params.values - step * grad;
      const double trial = try_step(cand);
      if (std::isfinite(trial)) {
        cand_nll = trial;
        accepted = true;
      }
    }
    if (!accepted) {
      report.converged = true;  // no resolvable descent direction remains
      break;
    }

    const double drop = nll - cand_nll;
    report.params = std::move(cand);
    nll = cand_nll;
    report.trace.push_back(nll);
    report.iterations = iter + 1;
    if (std::abs(drop) < config.tol * std::abs(nll)) {
      report.converged = true;
      break;
    }
  }

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return report;
}

std::string fit_report_to_json(const FitReport& report) {
  nlohmann::json j;
  j["nll"] = report.trace;
  j["converged"] = report.converged;
  j["iterations"] = report.iterations;
  j["seconds"] = report.seconds;
  j["model"] = nlohmann::json::parse(model_to_json(decode_params(report.params)));
  return j.dump(2);
}

}  // namespace rbn
