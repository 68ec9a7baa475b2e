#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "chart_internal.hpp"
#include "internal.hpp"

namespace rbn {

namespace detail {

double log_poisson(int count, double lambda) {
  if (lambda == 0.0) return count == 0 ? 0.0 : kNegInf;
  return count * std::log(lambda) - lambda - std::lgamma(count + 1.0);
}

double log_det_2pi(const Mat& cov) {
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  const Eigen::LLT<Mat> llt = cholesky_psd(cov);
  double half_logdet = 0.0;
  for (int i = 0; i < cov.rows(); ++i) half_logdet += std::log(llt.matrixL()(i, i));
  return 2.0 * half_logdet + cov.rows() * kLog2Pi;
}

}  // namespace detail

GrbnParams grbn_params(const RbnSpec& spec) {
  require_valid(spec);
  if (spec.kind != ModelKind::Gaussian)
    fail(ErrorCode::InvalidArgument, "continuous parameters require a continuous model");

  GrbnParams params;
  params.mu_P = spec.prior.mean;
  params.sigma_P = spec.prior.cov;

  const SpecIndex index = index_spec(spec);
  for (int ti = 0; ti < static_cast<int>(spec.transitions.size()); ++ti) {
    const Transition& t = spec.transitions[ti];
    if (const auto* b = std::get_if<BranchKernel>(&t.kernel)) {
      params.sigma_NL = b->sigma_left;
      params.sigma_NR = b->sigma_right;
      params.transpositions = b->transpositions;
      if (b->transpositions) params.weights = b->weights;
    } else if (const auto* e = std::get_if<EmissionKernel>(&t.kernel)) {
      params.sigma_T = e->sigma;
      params.multi = e->multi;
      params.lambda = e->lambda;
      params.p_term = detail::structural_weight(spec, index, t.source, 0, ti);
    }
  }
  if (!params.transpositions) {
    params.weights = Vec::Zero(params.dim());
    params.weights[0] = 1.0;
  }
  if (!(params.p_term > 0.0 && params.p_term < 1.0))
    fail(ErrorCode::Validation,
         "chart inference requires a termination probability strictly inside (0, 1)");
  return params;
}

Chart inside_pass(const RbnSpec& model, const Sequence& obs, Rng* tie_rng) {
  if (obs.size() < 1) fail(ErrorCode::InvalidArgument, "cannot parse an empty sequence");
  if (model.kind == ModelKind::Discrete) {
    const detail::DiscreteRules rules = detail::compile_rules(model);
    return detail::discrete_inside(rules, detail::checked_symbols(rules, obs), tie_rng);
  }
  const GrbnParams params = grbn_params(model);
  for (const Vec& y : obs.obs)
    if (y.size() != params.dim())
      fail(ErrorCode::InvalidArgument, "observation dimension mismatch");
  return detail::gaussian_inside(params, obs, tie_rng);
}

void outside_pass(const RbnSpec& model, const Sequence& obs, Chart& chart) {
  if (obs.size() != chart.size())
    fail(ErrorCode::LengthMismatch, "chart length differs from the sequence");
  if (chart.continuous() != (model.kind == ModelKind::Gaussian))
    fail(ErrorCode::InvalidArgument, "chart/model kind mismatch");
  if (model.kind == ModelKind::Discrete) {
    detail::discrete_outside(detail::compile_rules(model), chart);
  } else {
    detail::gaussian_outside(grbn_params(model), chart);
  }
}

double marginal_likelihood(const RbnSpec& model, const Chart& chart) {
  const int n = chart.size();
  if (chart.continuous() != (model.kind == ModelKind::Gaussian))
    fail(ErrorCode::InvalidArgument, "chart/model kind mismatch");
  if (model.kind == ModelKind::Discrete) {
    const CategoryIndex nts = nonterminal_index(model);
    const Eigen::VectorXd lp = detail::discrete_log_prior(model, nts);
    const auto& beta = chart.inside(0, n).log_probs;
    LogSumExp acc;
    for (int a = 0; a < nts.total; ++a)
      if (lp[a] > kNegInf && beta[a] > kNegInf) acc.add(lp[a] + beta[a]);
    return acc.value();
  }
  const GrbnParams params = grbn_params(model);
  const auto& root = chart.inside(0, n).gauss;
  return root.log_c +
         log_density(Gaussian{params.mu_P, params.sigma_P + root.g.cov}, root.g.mean);
}

std::vector<NodePosterior> node_posteriors(const RbnSpec& model, const Chart& chart) {
  if (!chart.has_outside())
    fail(ErrorCode::InvalidArgument, "node posteriors need the outside pass");
  const double log_py = marginal_likelihood(model, chart);
  const int n = chart.size();
  std::vector<NodePosterior> out;
  out.reserve(n * (n + 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int k = i + 1; k <= n; ++k) {
      NodePosterior post;
      post.i = i;
      post.k = k;
      if (!chart.continuous()) {
        Eigen::VectorXd joint =
            chart.inside(i, k).log_probs + chart.outside(i, k).log_probs;
        const double total = log_sum_exp(joint.data(), joint.data() + joint.size());
        if (total > kNegInf) {
          post.existence = std::exp(total - log_py);
          joint.array() -= total;
        }
        post.dist.log_probs = std::move(joint);
      } else {
        const auto& in = chart.inside(i, k).gauss;
        const auto& outm = chart.outside(i, k).gauss;
        const LogWeightedGaussian prod = product(in.g, outm.g);
        post.existence = std::exp(in.log_c + outm.log_c + prod.log_c - log_py);
        post.dist.gauss = {0.0, prod.g};
      }
      out.push_back(std::move(post));
    }
  }
  return out;
}

Tree best_tree(const RbnSpec& model, const Chart& chart) {
  const int n = chart.size();
  Tree tree;
  tree.length = n;
  CategoryIndex nts;
  if (!chart.continuous()) nts = nonterminal_index(model);

  auto label = [&](TreeNode& node, int i, int k) {
    if (!chart.continuous()) {
      Eigen::VectorXd scores = chart.inside(i, k).log_probs;
      if (chart.has_outside()) scores += chart.outside(i, k).log_probs;
      Eigen::Index arg = 0;
      scores.maxCoeff(&arg);
      if (scores[arg] > kNegInf) {
        node.variable = model.variables[nts.var_of[arg]].id;
        node.category = nts.value_of[arg];
      }
    } else if (chart.has_outside()) {
      node.value =
          product(chart.inside(i, k).gauss.g, chart.outside(i, k).gauss.g).g.mean;
    } else {
      node.value = chart.inside(i, k).gauss.g.mean;
    }
  };

  auto build = [&](auto&& self, int i, int k) -> int {
    const int idx = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[idx].begin = i;
    tree.nodes[idx].end = k;
    label(tree.nodes[idx], i, k);
    const SplitRecord rec = chart.split(i, k);
    if (!rec.used_terminal) {
      const int left = self(self, i, rec.j);
      const int right = self(self, rec.j, k);
      tree.nodes[left].tau = rec.tau;
      tree.nodes[idx].children = {left, right};
    }
    return idx;
  };
  tree.root = build(build, 0, n);
  return tree;
}

std::string chart_to_csv(const RbnSpec& model, const Chart& chart) {
  const std::vector<NodePosterior> posts = node_posteriors(model, chart);
  const int dim = chart.continuous() ? grbn_params(model).dim() : 1;

  std::string out = "i,k,existence_prob";
  for (int d = 1; d <= dim; ++d) out += ",mean_" + std::to_string(d);
  for (int d = 1; d <= dim; ++d) out += ",var_" + std::to_string(d);
  out += ",best_j,best_tau\n";

  for (const NodePosterior& p : posts) {
    out += std::to_string(p.i) + "," + std::to_string(p.k) + "," +
           format_double(p.existence);
    if (chart.continuous()) {
      const Gaussian& g = p.dist.gauss.g;
      for (int d = 0; d < dim; ++d) out += "," + format_double(g.mean[d]);
      for (int d = 0; d < dim; ++d) out += "," + format_double(g.cov(d, d));
    } else {
      Eigen::Index arg = 0;
      p.dist.log_probs.maxCoeff(&arg);
      const double top = std::exp(p.dist.log_probs[arg]);
      out += "," + format_double(static_cast<double>(arg));
      out += "," + format_double(1.0 - top);
    }
    const SplitRecord& rec = chart.split(p.i, p.k);
    out += "," + std::to_string(rec.j) + "," + std::to_string(rec.tau) + "\n";
  }
  return out;
}

LatentAssignment LatentAssignment::continuous(int n, int dim) {
  LatentAssignment x;
  x.n = n;
  x.values.assign((n + 1) * (n + 1), Vec::Zero(dim));
  return x;
}

LatentAssignment LatentAssignment::discrete(int n) {
  LatentAssignment x;
  x.n = n;
  x.categories.assign((n + 1) * (n + 1), 0);
  return x;
}

LatentAssignment inside_means(const Chart& chart) {
  const int n = chart.size();
  if (chart.continuous()) {
    LatentAssignment x = LatentAssignment::continuous(
        n, static_cast<int>(chart.inside(0, n).gauss.g.mean.size()));
    for (int i = 0; i < n; ++i)
      for (int k = i + 1; k <= n; ++k) x.value(i, k) = chart.inside(i, k).gauss.g.mean;
    return x;
  }
  LatentAssignment x = LatentAssignment::discrete(n);
  for (int i = 0; i < n; ++i) {
    for (int k = i + 1; k <= n; ++k) {
      Eigen::Index arg = 0;
      chart.inside(i, k).log_probs.maxCoeff(&arg);
      x.category(i, k) = static_cast<int>(arg);
    }
  }
  return x;
}

}  // namespace rbn
