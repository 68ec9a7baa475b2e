#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "chart_internal.hpp"

namespace rbn {

namespace {

using detail::log_add;

void check_discrete_assignment(const detail::DiscreteRules& rules,
                               const LatentAssignment& x) {
  if (!x.is_discrete() ||
      static_cast<int>(x.categories.size()) != (x.n + 1) * (x.n + 1))
    fail(ErrorCode::InvalidArgument, "discrete model needs a full category assignment");
  for (int i = 0; i < x.n; ++i)
    for (int k = i + 1; k <= x.n; ++k)
      if (x.category(i, k) < 0 || x.category(i, k) >= rules.nts.total)
        fail(ErrorCode::InvalidArgument, "category outside the non-terminal space");
}

void check_continuous_assignment(const GrbnParams& params, const LatentAssignment& x) {
  if (x.is_discrete() || static_cast<int>(x.values.size()) != (x.n + 1) * (x.n + 1))
    fail(ErrorCode::InvalidArgument, "continuous model needs a full value assignment");
  for (int i = 0; i < x.n; ++i)
    for (int k = i + 1; k <= x.n; ++k)
      if (x.value(i, k).size() != params.dim())
        fail(ErrorCode::InvalidArgument, "assignment dimension mismatch");
}

void check_observation_dims(const GrbnParams& params, const Sequence& obs) {
  for (const Vec& y : obs.obs)
    if (y.size() != params.dim())
      fail(ErrorCode::InvalidArgument, "observation dimension mismatch");
}

void fill_existence(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& beta,
                    double log_joint, Eigen::MatrixXd* existence) {
  const int n = static_cast<int>(alpha.rows()) - 1;
  *existence = Eigen::MatrixXd::Zero(n + 1, n + 1);
  if (!(log_joint > kNegInf)) return;
  for (int i = 0; i < n; ++i) {
    for (int k = i + 1; k <= n; ++k) {
      const double v = alpha(i, k) + beta(i, k);
      if (v > kNegInf) (*existence)(i, k) = std::exp(v - log_joint);
    }
  }
}

double discrete_log_joint(const detail::DiscreteRules& rules,
                          const std::vector<int>& symbols, const LatentAssignment& x,
                          Eigen::MatrixXd* existence) {
  const int n = static_cast<int>(symbols.size());

  // total weight of expanding category a into the fixed child categories
  auto binary_weight = [&](int a, int b, int c) {
    double s = kNegInf;
    for (const detail::BinaryRule& r : rules.binary)
      if (r.a == a && r.b == b && r.c == c) s = log_add(s, r.logw);
    return s;
  };
  auto emit_weight = [&](int a, int t) {
    double s = kNegInf;
    for (const detail::EmitRule& r : rules.emit)
      if (r.a == a && r.t == t) s = log_add(s, r.logw);
    return s;
  };

  Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(n + 1, n + 1, kNegInf);
  for (int i = 0; i < n; ++i)
    beta(i, i + 1) = emit_weight(x.category(i, i + 1), symbols[i]);
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      double cell = kNegInf;
      for (int j = i + 1; j < k; ++j) {
        const double s =
            binary_weight(x.category(i, k), x.category(i, j), x.category(j, k));
        if (s > kNegInf)
          cell = log_add(cell, s + beta(i, j) + beta(j, k));
      }
      beta(i, k) = cell;
    }
  }

  const double prior = rules.log_prior[x.category(0, n)];
  const double log_joint = beta(0, n) + prior;

  if (existence != nullptr) {
    Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(n + 1, n + 1, kNegInf);
    alpha(0, n) = prior;
    for (int w = n - 1; w >= 1; --w) {
      for (int i = 0; i + w <= n; ++i) {
        const int k = i + w;
        double cell = kNegInf;
        for (int l = k + 1; l <= n; ++l) {  // left child of (i, l)
          const double s =
              binary_weight(x.category(i, l), x.category(i, k), x.category(k, l));
          if (s > kNegInf) cell = log_add(cell, alpha(i, l) + s + beta(k, l));
        }
        for (int h = 0; h < i; ++h) {  // right child of (h, k)
          const double s =
              binary_weight(x.category(h, k), x.category(h, i), x.category(i, k));
          if (s > kNegInf) cell = log_add(cell, alpha(h, k) + s + beta(h, i));
        }
        alpha(i, k) = cell;
      }
    }
    fill_existence(alpha, beta, log_joint, existence);
  }
  return log_joint;
}

double gaussian_log_joint(const GrbnParams& params, const Sequence& obs,
                          const LatentAssignment& x, Eigen::MatrixXd* existence) {
  const int n = obs.size();
  const int dim = params.dim();
  const double log_term = std::log(params.p_term);
  const double log_branch = std::log1p(-params.p_term);
  const Vec logw = detail::shift_log_weights(params);
  const int taus = static_cast<int>(logw.size());

  auto term_score = [&](int i, int k) {
    const int w = k - i;
    if (!params.multi && w != 1) return kNegInf;
    double s = log_term + (params.multi ? detail::log_poisson(w - 1, params.lambda) : 0.0);
    if (s == kNegInf) return kNegInf;
    for (int j = i; j < k; ++j)
      s += log_density(Gaussian{x.value(i, k), params.sigma_T}, obs.obs[j]);
    return s;
  };
  auto left_density = [&](const Vec& parent, const Vec& child, int tau) {
    return log_density(Gaussian{Transposition{tau, dim}.apply(parent), params.sigma_NL},
                       child);
  };
  auto right_density = [&](const Vec& parent, const Vec& child) {
    return log_density(Gaussian{parent, params.sigma_NR}, child);
  };

  Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(n + 1, n + 1, kNegInf);
  for (int w = 1; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      double cell = term_score(i, k);
      for (int j = i + 1; j < k; ++j) {
        for (int tau = 0; tau < taus; ++tau) {
          if (logw[tau] == kNegInf) continue;
          cell = log_add(cell, log_branch + logw[tau] +
                                   left_density(x.value(i, k), x.value(i, j), tau) +
                                   right_density(x.value(i, k), x.value(j, k)) +
                                   beta(i, j) + beta(j, k));
        }
      }
      beta(i, k) = cell;
    }
  }

  const double prior = log_density(Gaussian{params.mu_P, params.sigma_P}, x.value(0, n));
  const double log_joint = beta(0, n) + prior;

  if (existence != nullptr) {
    Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(n + 1, n + 1, kNegInf);
    alpha(0, n) = prior;
    for (int w = n - 1; w >= 1; --w) {
      for (int i = 0; i + w <= n; ++i) {
        const int k = i + w;
        double cell = kNegInf;
        for (int l = k + 1; l <= n; ++l) {  // left child of (i, l), sibling (k, l)
          for (int tau = 0; tau < taus; ++tau) {
            if (logw[tau] == kNegInf) continue;
            cell = log_add(cell, alpha(i, l) + log_branch + logw[tau] +
                                     left_density(x.value(i, l), x.value(i, k), tau) +
                                     right_density(x.value(i, l), x.value(k, l)) +
                                     beta(k, l));
          }
        }
        for (int h = 0; h < i; ++h) {  // right child of (h, k), sibling (h, i)
          for (int tau = 0; tau < taus; ++tau) {
            if (logw[tau] == kNegInf) continue;
            cell = log_add(cell, alpha(h, k) + log_branch + logw[tau] +
                                     left_density(x.value(h, k), x.value(h, i), tau) +
                                     right_density(x.value(h, k), x.value(i, k)) +
                                     beta(h, i));
          }
        }
        alpha(i, k) = cell;
      }
    }
    fill_existence(alpha, beta, log_joint, existence);
  }
  return log_joint;
}

struct BackChoice {
  int j = -1;
  int tau = 0;
  bool used_terminal = false;
  int left_cat = -1;
  int right_cat = -1;
};

Tree unwind(int n, const std::vector<BackChoice>& back,
            const std::function<void(TreeNode&, int, int, int)>& label, int root_cat) {
  Tree tree;
  tree.length = n;
  auto at = [n](int i, int k) { return i * (n + 1) + k; };
  auto build = [&](auto&& self, int i, int k, int cat) -> int {
    const int idx = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[idx].begin = i;
    tree.nodes[idx].end = k;
    label(tree.nodes[idx], i, k, cat);
    const BackChoice& bc = back[at(i, k)];
    if (!bc.used_terminal && k - i > 1) {
      const int left = self(self, i, bc.j, bc.left_cat);
      const int right = self(self, bc.j, k, bc.right_cat);
      tree.nodes[left].tau = bc.tau;
      tree.nodes[idx].children = {left, right};
    }
    return idx;
  };
  tree.root = build(build, 0, n, root_cat);
  return tree;
}

Tree discrete_viterbi_marginal(const RbnSpec& model, const detail::DiscreteRules& rules,
                               const std::vector<int>& symbols) {
  const int n = static_cast<int>(symbols.size());
  const int total = rules.nts.total;
  auto at = [n](int i, int k) { return i * (n + 1) + k; };
  std::vector<Eigen::VectorXd> delta((n + 1) * (n + 1));
  std::vector<std::vector<BackChoice>> back((n + 1) * (n + 1));

  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd d = Eigen::VectorXd::Constant(total, kNegInf);
    for (const detail::EmitRule& r : rules.emit)
      if (r.t == symbols[i] && r.logw > d[r.a]) d[r.a] = r.logw;
    delta[at(i, i + 1)] = std::move(d);
    back[at(i, i + 1)].assign(total, {-1, 0, true, -1, -1});
  }
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      Eigen::VectorXd d = Eigen::VectorXd::Constant(total, kNegInf);
      std::vector<BackChoice> b(total);
      for (int j = i + 1; j < k; ++j) {
        const auto& dl = delta[at(i, j)];
        const auto& dr = delta[at(j, k)];
        for (const detail::BinaryRule& r : rules.binary) {
          const double v = r.logw + dl[r.b] + dr[r.c];
          if (v > d[r.a]) {
            d[r.a] = v;
            b[r.a] = {j, 0, false, r.b, r.c};
          }
        }
      }
      delta[at(i, k)] = std::move(d);
      back[at(i, k)] = std::move(b);
    }
  }

  int best_cat = 0;
  double best = kNegInf;
  for (int a = 0; a < total; ++a) {
    const double v = rules.log_prior[a] + delta[at(0, n)][a];
    if (v > best) {
      best = v;
      best_cat = a;
    }
  }
  if (!(best > kNegInf))
    fail(ErrorCode::InvalidArgument, "observations have zero probability under the model");

  // one backpointer table per category: flatten at tree-building time
  std::vector<BackChoice> chosen((n + 1) * (n + 1));
  auto flatten = [&](auto&& self, int i, int k, int cat) -> void {
    const BackChoice& bc = back[at(i, k)][cat];
    chosen[at(i, k)] = bc;
    if (!bc.used_terminal && k - i > 1) {
      self(self, i, bc.j, bc.left_cat);
      self(self, bc.j, k, bc.right_cat);
    }
  };
  flatten(flatten, 0, n, best_cat);

  auto label = [&](TreeNode& node, int i, int k, int cat) {
    (void)i;
    (void)k;
    node.variable = model.variables[rules.nts.var_of[cat]].id;
    node.category = rules.nts.value_of[cat];
  };
  return unwind(n, chosen, label, best_cat);
}

Tree discrete_viterbi_fixed(const RbnSpec& model, const detail::DiscreteRules& rules,
                            const std::vector<int>& symbols, const LatentAssignment& x) {
  const int n = static_cast<int>(symbols.size());
  auto at = [n](int i, int k) { return i * (n + 1) + k; };

  auto binary_weight = [&](int a, int b, int c) {
    double s = kNegInf;
    for (const detail::BinaryRule& r : rules.binary)
      if (r.a == a && r.b == b && r.c == c) s = log_add(s, r.logw);
    return s;
  };

  Eigen::MatrixXd delta = Eigen::MatrixXd::Constant(n + 1, n + 1, kNegInf);
  std::vector<BackChoice> back((n + 1) * (n + 1));
  for (int i = 0; i < n; ++i) {
    double s = kNegInf;
    for (const detail::EmitRule& r : rules.emit)
      if (r.a == x.category(i, i + 1) && r.t == symbols[i]) s = log_add(s, r.logw);
    delta(i, i + 1) = s;
    back[at(i, i + 1)] = {-1, 0, true, -1, -1};
  }
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      for (int j = i + 1; j < k; ++j) {
        const double s =
            binary_weight(x.category(i, k), x.category(i, j), x.category(j, k));
        const double v = s + delta(i, j) + delta(j, k);
        if (v > delta(i, k)) {
          delta(i, k) = v;
          back[at(i, k)] = {j, 0, false, -1, -1};
        }
      }
      if (!(delta(i, k) > kNegInf)) back[at(i, k)].j = i + 1;
    }
  }
  if (!(delta(0, n) + rules.log_prior[x.category(0, n)] > kNegInf))
    fail(ErrorCode::InvalidArgument,
         "assignment has zero probability under the model");

  auto label = [&](TreeNode& node, int i, int k, int cat) {
    (void)cat;
    const int global = x.category(i, k);
    node.variable = model.variables[rules.nts.var_of[global]].id;
    node.category = rules.nts.value_of[global];
  };
  return unwind(n, back, label, -1);
}

Tree gaussian_viterbi(const RbnSpec& model, const GrbnParams& params,
                      const Sequence& obs, const LatentAssignment& x) {
  const int n = obs.size();
  const int dim = params.dim();
  const double log_term = std::log(params.p_term);
  const double log_branch = std::log1p(-params.p_term);
  const Vec logw = detail::shift_log_weights(params);
  const int taus = static_cast<int>(logw.size());
  auto at = [n](int i, int k) { return i * (n + 1) + k; };

  auto term_score = [&](int i, int k) {
    const int w = k - i;
    if (!params.multi && w != 1) return kNegInf;
    double s = log_term + (params.multi ? detail::log_poisson(w - 1, params.lambda) : 0.0);
    if (s == kNegInf) return kNegInf;
    for (int j = i; j < k; ++j)
      s += log_density(Gaussian{x.value(i, k), params.sigma_T}, obs.obs[j]);
    return s;
  };

  Eigen::MatrixXd delta = Eigen::MatrixXd::Constant(n + 1, n + 1, kNegInf);
  std::vector<BackChoice> back((n + 1) * (n + 1));
  for (int w = 1; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      double best = term_score(i, k);
      BackChoice bc{-1, 0, best > kNegInf, -1, -1};
      for (int j = i + 1; j < k; ++j) {
        for (int tau = 0; tau < taus; ++tau) {
          if (logw[tau] == kNegInf) continue;
          const double v =
              log_branch + logw[tau] +
              log_density(
                  Gaussian{Transposition{tau, dim}.apply(x.value(i, k)), params.sigma_NL},
                  x.value(i, j)) +
              log_density(Gaussian{x.value(i, k), params.sigma_NR}, x.value(j, k)) +
              delta(i, j) + delta(j, k);
          if (v > best) {
            best = v;
            bc = {j, tau, false, -1, -1};
          }
        }
      }
      delta(i, k) = best;
      back[at(i, k)] = bc;
    }
  }

  auto label = [&](TreeNode& node, int i, int k, int cat) {
    (void)cat;
    node.variable = model.prior.variable;
    node.value = x.value(i, k);
  };
  return unwind(n, back, label, -1);
}

}  // namespace

JointResult joint_inside_outside(const RbnSpec& model, const Sequence& obs,
                                 const LatentAssignment& x) {
  if (obs.size() < 1) fail(ErrorCode::InvalidArgument, "cannot score an empty sequence");
  if (x.n != obs.size())
    fail(ErrorCode::LengthMismatch, "assignment length differs from the sequence");
  JointResult result;
  if (model.kind == ModelKind::Discrete) {
    const detail::DiscreteRules rules = detail::compile_rules(model);
    check_discrete_assignment(rules, x);
    const std::vector<int> symbols = detail::checked_symbols(rules, obs);
    result.log_joint = discrete_log_joint(rules, symbols, x, &result.existence);
  } else {
    const GrbnParams params = grbn_params(model);
    check_observation_dims(params, obs);
    check_continuous_assignment(params, x);
    result.log_joint = gaussian_log_joint(params, obs, x, &result.existence);
  }
  return result;
}

LatentAssignment map_estimate(const RbnSpec& model, const Sequence& obs,
                              const LatentAssignment& init, int steps,
                              double step_size) {
  if (model.kind != ModelKind::Gaussian)
    fail(ErrorCode::Unsupported, "joint optimisation requires a continuous model");
  if (steps < 0 || !(step_size > 0))
    fail(ErrorCode::InvalidArgument, "need steps >= 0 and a positive step size");
  if (obs.size() < 1) fail(ErrorCode::InvalidArgument, "cannot score an empty sequence");
  if (init.n != obs.size())
    fail(ErrorCode::LengthMismatch, "assignment length differs from the sequence");
  const GrbnParams params = grbn_params(model);
  check_observation_dims(params, obs);
  check_continuous_assignment(params, init);

  const int n = obs.size();
  const int dim = params.dim();
  auto objective = [&](const LatentAssignment& a) {
    return gaussian_log_joint(params, obs, a, nullptr);
  };

  LatentAssignment x = init;
  double obj = objective(x);
  if (!std::isfinite(obj)) fail(ErrorCode::NonFinite, "objective is not finite");

  for (int step = 0; step < steps; ++step) {
    LatentAssignment grad = LatentAssignment::continuous(n, dim);
    LatentAssignment probe = x;
    for (int i = 0; i < n; ++i) {
      for (int k = i + 1; k <= n; ++k) {
        for (int d = 0; d < dim; ++d) {
          const double v = x.value(i, k)[d];
          const double h = 1e-5 * (1.0 + std::abs(v));
          probe.value(i, k)[d] = v + h;
          const double up = objective(probe);
          probe.value(i, k)[d] = v - h;
          const double down = objective(probe);
          probe.value(i, k)[d] = v;
          grad.value(i, k)[d] = (up - down) / (2.0 * h);
        }
      }
    }

    // backtracking line search; only strict improvements are taken
    double scale = step_size;
    bool improved = false;
    for (int halving = 0; halving < 30; ++halving) {
      LatentAssignment trial = x;
      for (int i = 0; i < n; ++i)
        for (int k = i + 1; k <= n; ++k)
          trial.value(i, k) += scale * grad.value(i, k);
      const double cand = objective(trial);
      if (std::isfinite(cand) && cand > obj) {
        x = std::move(trial);
        obj = cand;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
  }
  return x;
}

Tree viterbi_structure(const RbnSpec& model, const Sequence& obs,
                       const LatentAssignment& x) {
  if (obs.size() < 1) fail(ErrorCode::InvalidArgument, "cannot parse an empty sequence");
  if (model.kind == ModelKind::Discrete) {
    const detail::DiscreteRules rules = detail::compile_rules(model);
    const std::vector<int> symbols = detail::checked_symbols(rules, obs);
    if (x.n == 0) return discrete_viterbi_marginal(model, rules, symbols);
    if (x.n != obs.size())
      fail(ErrorCode::LengthMismatch, "assignment length differs from the sequence");
    check_discrete_assignment(rules, x);
    return discrete_viterbi_fixed(model, rules, symbols, x);
  }
  const GrbnParams params = grbn_params(model);
  check_observation_dims(params, obs);
  if (x.n != obs.size())
    fail(ErrorCode::LengthMismatch, "assignment length differs from the sequence");
  check_continuous_assignment(params, x);
  return gaussian_viterbi(model, params, obs, x);
}

}  // namespace rbn
