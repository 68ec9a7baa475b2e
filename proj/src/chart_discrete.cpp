#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "chart_internal.hpp"
#include "internal.hpp"

namespace rbn::detail {

Eigen::VectorXd discrete_log_prior(const RbnSpec& spec, const CategoryIndex& nts) {
  Eigen::VectorXd lp = Eigen::VectorXd::Constant(nts.total, kNegInf);
  for (int v = 0; v < spec.prior.weights.size(); ++v) {
    const double w = spec.prior.weights[v];
    if (w > 0) lp[nts.category(spec.prior.variable, v)] = std::log(w);
  }
  return lp;
}

DiscreteRules compile_rules(const RbnSpec& spec) {
  require_valid(spec);
  if (spec.kind != ModelKind::Discrete)
    fail(ErrorCode::InvalidArgument, "categorical rule view requires a discrete model");
  if (!is_cnf(spec))
    fail(ErrorCode::NotCnf, "chart inference requires a normal-form model");

  const SpecIndex index = index_spec(spec);
  DiscreteRules rules;
  rules.nts = nonterminal_index(spec);
  rules.ts = terminal_index(spec);

  for (int ti = 0; ti < static_cast<int>(spec.transitions.size()); ++ti) {
    const Transition& t = spec.transitions[ti];
    const auto& kernel = std::get<CategoricalKernel>(t.kernel);
    const int card = spec.variables[index.variable.at(t.source)].domain.size;
    if (t.targets.size() == 1) {
      for (int a = 0; a < card; ++a) {
        const double sw = structural_weight(spec, index, t.source, a, ti);
        for (int y = 0; y < kernel.table.cols(); ++y) {
          const double w = sw * kernel.table(a, y);
          if (w > 0)
            rules.emit.push_back({rules.nts.category(t.source, a),
                                  rules.ts.category(t.targets[0], y), std::log(w)});
        }
      }
    } else {
      const int card_c =
          spec.variables[index.variable.at(t.targets[1])].domain.size;
      for (int a = 0; a < card; ++a) {
        const double sw = structural_weight(spec, index, t.source, a, ti);
        for (int col = 0; col < kernel.table.cols(); ++col) {
          const double w = sw * kernel.table(a, col);
          if (w > 0)
            rules.binary.push_back({rules.nts.category(t.source, a),
                                    rules.nts.category(t.targets[0], col / card_c),
                                    rules.nts.category(t.targets[1], col % card_c),
                                    std::log(w)});
        }
      }
    }
  }
  rules.log_prior = discrete_log_prior(spec, rules.nts);
  return rules;
}

std::vector<int> checked_symbols(const DiscreteRules& rules, const Sequence& obs) {
  std::vector<int> symbols(obs.size());
  for (int i = 0; i < obs.size(); ++i) {
    symbols[i] = obs.symbol(i);
    if (symbols[i] >= rules.ts.total)
      fail(ErrorCode::InvalidArgument,
           "symbol " + std::to_string(symbols[i]) + " at position " +
               std::to_string(i) + " is outside the terminal space");
  }
  return symbols;
}

Chart discrete_inside(const DiscreteRules& rules, const std::vector<int>& symbols,
                      Rng* tie_rng) {
  const int n = static_cast<int>(symbols.size());
  Chart chart(n, false);

  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd beta = Eigen::VectorXd::Constant(rules.nts.total, kNegInf);
    LogSumExp mass;
    for (const EmitRule& r : rules.emit) {
      if (r.t != symbols[i]) continue;
      beta[r.a] = log_add(beta[r.a], r.logw);
      mass.add(r.logw);
    }
    chart.inside(i, i + 1).log_probs = std::move(beta);
    chart.split(i, i + 1) = {-1, 0, true, mass.value()};
  }

  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      Eigen::VectorXd beta = Eigen::VectorXd::Constant(rules.nts.total, kNegInf);
      BestPick best(tie_rng);
      for (int j = i + 1; j < k; ++j) {
        const auto& left = chart.inside(i, j).log_probs;
        const auto& right = chart.inside(j, k).log_probs;
        LogSumExp mass;
        for (const BinaryRule& r : rules.binary) {
          const double v = r.logw + left[r.b] + right[r.c];
          if (!(v > kNegInf)) continue;
          beta[r.a] = log_add(beta[r.a], v);
          mass.add(v);
        }
        best.offer(j, 0, false, mass.value());
      }
      SplitRecord rec = best.record();
      if (rec.j < 0) rec.j = i + 1;  // zero-probability span: keep a valid split
      chart.split(i, k) = rec;
      chart.inside(i, k).log_probs = std::move(beta);
    }
  }
  return chart;
}

void discrete_outside(const DiscreteRules& rules, Chart& chart) {
  const int n = chart.size();
  chart.outside(0, n).log_probs = rules.log_prior;

  for (int w = n - 1; w >= 1; --w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      Eigen::VectorXd alpha = Eigen::VectorXd::Constant(rules.nts.total, kNegInf);
      // generated as left child of (i, l), with sibling (k, l)
      for (int l = k + 1; l <= n; ++l) {
        const auto& parent = chart.outside(i, l).log_probs;
        const auto& sibling = chart.inside(k, l).log_probs;
        for (const BinaryRule& r : rules.binary) {
          const double v = parent[r.a] + r.logw + sibling[r.c];
          if (!(v > kNegInf)) continue;
          alpha[r.b] = log_add(alpha[r.b], v);
        }
      }
      // generated as right child of (h, k), with sibling (h, i)
      for (int h = 0; h < i; ++h) {
        const auto& parent = chart.outside(h, k).log_probs;
        const auto& sibling = chart.inside(h, i).log_probs;
        for (const BinaryRule& r : rules.binary) {
          const double v = parent[r.a] + r.logw + sibling[r.b];
          if (!(v > kNegInf)) continue;
          alpha[r.c] = log_add(alpha[r.c], v);
        }
      }
      chart.outside(i, k).log_probs = std::move(alpha);
    }
  }
  chart.mark_outside();
}

}  // namespace rbn::detail
