#include <algorithm>
#include <map>
#include <set>

#include "internal.hpp"
#include "rbn/model.hpp"

namespace rbn {

namespace {

void check_grammar(const Pcfg& grammar) {
  if (grammar.nonterminals.empty())
    fail(ErrorCode::Validation, "grammar has no nonterminals");
  std::set<std::string> nts(grammar.nonterminals.begin(), grammar.nonterminals.end());
  std::set<std::string> ts(grammar.terminals.begin(), grammar.terminals.end());
  if (nts.size() != grammar.nonterminals.size() || ts.size() != grammar.terminals.size())
    fail(ErrorCode::Validation, "grammar has duplicate symbols");
  if (!nts.count(grammar.start))
    fail(ErrorCode::Validation, "start symbol is not a nonterminal");
  for (const auto& r : grammar.rules) {
    if (!(r.weight > 0.0))
      fail(ErrorCode::Validation, "rule weights must be positive");
    if (!nts.count(r.lhs)) fail(ErrorCode::Validation, "rule from unknown nonterminal");
    switch (r.kind) {
      case PcfgRule::Kind::Binary:
        if (!nts.count(r.rhs1) || !nts.count(r.rhs2))
          fail(ErrorCode::Validation, "binary rule with unknown nonterminal");
        break;
      case PcfgRule::Kind::Emit:
        if (!ts.count(r.rhs1))
          fail(ErrorCode::Validation, "emission rule with unknown terminal");
        break;
      case PcfgRule::Kind::Unary:
        if (!nts.count(r.rhs1))
          fail(ErrorCode::Validation, "unary rule with unknown nonterminal");
        break;
    }
  }
}

}  // namespace

RbnSpec abstract_pcfg(const Pcfg& grammar) {
  check_grammar(grammar);

  // Unary rules are admissible only as a start-symbol prior: the start must
  // have exclusively unary rules and never occur on a right-hand side.
  bool start_on_rhs = false;
  bool start_has_unary = false;
  bool start_has_other = false;
  for (const auto& r : grammar.rules) {
    if (r.kind == PcfgRule::Kind::Unary && r.lhs != grammar.start)
      fail(ErrorCode::NotCnf, "unary rule from non-start symbol '" + r.lhs + "'");
    if (r.lhs == grammar.start)
      (r.kind == PcfgRule::Kind::Unary ? start_has_unary : start_has_other) = true;
    if (r.kind == PcfgRule::Kind::Binary &&
        (r.rhs1 == grammar.start || r.rhs2 == grammar.start))
      start_on_rhs = true;
    if (r.kind == PcfgRule::Kind::Unary && r.rhs1 == grammar.start)
      start_on_rhs = true;
  }
  const bool fold_start = start_has_unary;
  if (fold_start && (start_has_other || start_on_rhs))
    fail(ErrorCode::NotCnf,
         "start symbol with unary rules must have only unary rules and must not "
         "appear on a right-hand side");

  // value order: grammar nonterminal order (skipping a folded start) and
  // grammar terminal order
  std::vector<std::string> values;
  for (const auto& n : grammar.nonterminals)
    if (!(fold_start && n == grammar.start)) values.push_back(n);
  if (values.empty()) fail(ErrorCode::Validation, "no nonterminals besides the start");
  if (grammar.terminals.empty()) fail(ErrorCode::Validation, "grammar has no terminals");

  std::map<std::string, int> value_of;
  for (size_t i = 0; i < values.size(); ++i) value_of[values[i]] = static_cast<int>(i);
  std::map<std::string, int> term_of;
  for (size_t i = 0; i < grammar.terminals.size(); ++i)
    term_of[grammar.terminals[i]] = static_cast<int>(i);

  const int n = static_cast<int>(values.size());
  const int m = static_cast<int>(grammar.terminals.size());

  Eigen::MatrixXd branch = Eigen::MatrixXd::Zero(n, static_cast<long>(n) * n);
  Eigen::MatrixXd emit = Eigen::MatrixXd::Zero(n, m);
  Eigen::VectorXd prior = Eigen::VectorXd::Zero(n);
  for (const auto& r : grammar.rules) {
    switch (r.kind) {
      case PcfgRule::Kind::Binary:
        branch(value_of.at(r.lhs), value_of.at(r.rhs1) * n + value_of.at(r.rhs2)) +=
            r.weight;
        break;
      case PcfgRule::Kind::Emit:
        emit(value_of.at(r.lhs), term_of.at(r.rhs1)) += r.weight;
        break;
      case PcfgRule::Kind::Unary:
        prior[value_of.at(r.rhs1)] += r.weight;
        break;
    }
  }

  Eigen::MatrixXd structural(n, 2);
  for (int a = 0; a < n; ++a) {
    const double branch_mass = branch.row(a).sum();
    const double emit_mass = emit.row(a).sum();
    const double total = branch_mass + emit_mass;
    if (total > 0.0) {
      structural(a, 0) = branch_mass / total;
      structural(a, 1) = emit_mass / total;
    } else {
      // ruleless (necessarily unreachable) value: emit uniformly
      structural(a, 0) = 0.0;
      structural(a, 1) = 1.0;
    }
    if (branch_mass > 0.0)
      branch.row(a) /= branch_mass;
    else
      branch.row(a).setConstant(1.0 / branch.cols());
    if (emit_mass > 0.0)
      emit.row(a) /= emit_mass;
    else
      emit.row(a).setConstant(1.0 / emit.cols());
  }

  if (fold_start) {
    prior /= prior.sum();
  } else {
    prior.setZero();
    prior[value_of.at(grammar.start)] = 1.0;
  }

  RbnSpec spec;
  spec.kind = ModelKind::Discrete;
  spec.variables.push_back({"x", VarKind::NonTerminal, {true, n}});
  spec.variables.push_back({"y", VarKind::Terminal, {true, m}});
  Transition tb;
  tb.source = "x";
  tb.targets = {"x", "x"};
  tb.kernel = CategoricalKernel{std::move(branch)};
  spec.transitions.push_back(std::move(tb));
  Transition te;
  te.source = "x";
  te.targets = {"y"};
  te.kernel = CategoricalKernel{std::move(emit)};
  spec.transitions.push_back(std::move(te));
  spec.structural.push_back({"x", std::move(structural)});
  spec.prior.variable = "x";
  spec.prior.weights = std::move(prior);
  require_valid(spec);
  return spec;
}

Pcfg rbn_to_pcfg(const RbnSpec& spec) {
  if (spec.kind != ModelKind::Discrete)
    fail(ErrorCode::ContinuousVariable,
         "grammar expansion requires an all-discrete model");
  require_valid(spec);
  if (!is_cnf(spec))
    fail(ErrorCode::NotCnf, "grammar expansion requires a normal-form model");

  const SpecIndex index = index_spec(spec);
  const CategoryIndex nts = nonterminal_index(spec);
  const CategoryIndex ts = terminal_index(spec);

  Pcfg grammar;
  auto nt_name = [&](int category) {
    return spec.variables[nts.var_of[category]].id + ":" +
           std::to_string(nts.value_of[category]);
  };
  auto t_name = [&](int category) {
    return spec.variables[ts.var_of[category]].id + ":" +
           std::to_string(ts.value_of[category]);
  };
  for (int c = 0; c < nts.total; ++c) grammar.nonterminals.push_back(nt_name(c));
  for (int c = 0; c < ts.total; ++c) grammar.terminals.push_back(t_name(c));

  std::set<std::string> taken(grammar.nonterminals.begin(), grammar.nonterminals.end());
  std::string start = "S";
  while (taken.count(start)) start.insert(start.begin(), '_');
  grammar.start = start;
  grammar.nonterminals.push_back(start);

  for (const auto& [owner, owned] : index.transitions_of) {
    const auto& structural = spec.structural[index.structural_of.at(owner)];
    const int card = spec.variables[index.variable.at(owner)].domain.size;
    for (int a = 0; a < card; ++a) {
      const std::string lhs = owner + ":" + std::to_string(a);
      for (size_t col = 0; col < owned.size(); ++col) {
        const double s = structural.table(a, static_cast<int>(col));
        if (s == 0.0) continue;
        const Transition& t = spec.transitions[owned[col]];
        const auto& table = std::get<CategoricalKernel>(t.kernel).table;
        if (t.targets.size() == 2) {
          const int right_card =
              spec.variables[index.variable.at(t.targets[1])].domain.size;
          for (int col2 = 0; col2 < table.cols(); ++col2) {
            const double w = s * table(a, col2);
            if (w == 0.0) continue;
            PcfgRule rule;
            rule.kind = PcfgRule::Kind::Binary;
            rule.lhs = lhs;
            rule.rhs1 = t.targets[0] + ":" + std::to_string(col2 / right_card);
            rule.rhs2 = t.targets[1] + ":" + std::to_string(col2 % right_card);
            rule.weight = w;
            grammar.rules.push_back(std::move(rule));
          }
        } else {
          for (int col2 = 0; col2 < table.cols(); ++col2) {
            const double w = s * table(a, col2);
            if (w == 0.0) continue;
            PcfgRule rule;
            rule.kind = PcfgRule::Kind::Emit;
            rule.lhs = lhs;
            rule.rhs1 = t.targets[0] + ":" + std::to_string(col2);
            rule.weight = w;
            grammar.rules.push_back(std::move(rule));
          }
        }
      }
    }
  }

  for (int a = 0; a < spec.prior.weights.size(); ++a) {
    const double w = spec.prior.weights[a];
    if (w == 0.0) continue;
    PcfgRule rule;
    rule.kind = PcfgRule::Kind::Unary;
    rule.lhs = start;
    rule.rhs1 = spec.prior.variable + ":" + std::to_string(a);
    rule.weight = w;
    grammar.rules.push_back(std::move(rule));
  }
  return grammar;
}

}  // namespace rbn
