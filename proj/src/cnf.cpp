#include <algorithm>
#include <map>
#include <set>

#include "internal.hpp"
#include "rbn/model.hpp"

namespace rbn {

namespace {

// Working representation: transitions grouped per source variable, with the
// structural weights attached column-wise (one weight per source value), so
// rewrites keep weights and kernels aligned.
struct WorkTransition {
  std::vector<std::string> targets;
  Eigen::MatrixXd table;    // rows: source values, cols: joint target values
  Eigen::VectorXd weight;   // structural weight per source value
};

struct WorkVar {
  TemplateVariable var;
  std::vector<WorkTransition> outgoing;
};

struct WorkSpec {
  std::vector<WorkVar> vars;
  std::map<std::string, int> index;
  Prior prior;

  WorkVar& at(const std::string& id) { return vars[index.at(id)]; }
  const WorkVar& at(const std::string& id) const { return vars[index.at(id)]; }

  int add_var(TemplateVariable v) {
    index.emplace(v.id, static_cast<int>(vars.size()));
    vars.push_back({std::move(v), {}});
    return static_cast<int>(vars.size()) - 1;
  }

  bool used(const std::string& id) const { return index.count(id) > 0; }

  std::string fresh(const std::string& base) const {
    if (!used(base)) return base;
    for (int k = 2;; ++k) {
      std::string candidate = base + std::to_string(k);
      if (!used(candidate)) return candidate;
    }
  }

  int cardinality(const std::string& id) const { return at(id).var.domain.size; }
  bool is_terminal(const std::string& id) const {
    return at(id).var.kind == VarKind::Terminal;
  }
};

WorkSpec to_work(const RbnSpec& spec) {
  WorkSpec work;
  work.prior = spec.prior;
  for (const auto& v : spec.variables) work.add_var(v);
  const SpecIndex index = index_spec(spec);
  for (const auto& [owner, owned] : index.transitions_of) {
    const auto& structural = spec.structural[index.structural_of.at(owner)];
    WorkVar& wv = work.at(owner);
    for (size_t col = 0; col < owned.size(); ++col) {
      const Transition& t = spec.transitions[owned[col]];
      WorkTransition wt;
      wt.targets = t.targets;
      wt.table = std::get<CategoricalKernel>(t.kernel).table;
      wt.weight = structural.table.col(static_cast<int>(col));
      wv.outgoing.push_back(std::move(wt));
    }
  }
  return work;
}

RbnSpec from_work(const WorkSpec& work) {
  RbnSpec spec;
  spec.kind = ModelKind::Discrete;
  spec.prior = work.prior;
  for (const auto& wv : work.vars) spec.variables.push_back(wv.var);
  for (const auto& wv : work.vars) {
    if (wv.outgoing.empty()) continue;
    Eigen::MatrixXd table(wv.var.domain.size, wv.outgoing.size());
    for (size_t col = 0; col < wv.outgoing.size(); ++col) {
      table.col(static_cast<int>(col)) = wv.outgoing[col].weight;
      Transition t;
      t.source = wv.var.id;
      t.targets = wv.outgoing[col].targets;
      Eigen::MatrixXd kernel = wv.outgoing[col].table;
      // shed accumulated floating-point drift; anything worse is a real bug
      // and is left for validation to flag
      for (int r = 0; r < kernel.rows(); ++r) {
        const double sum = kernel.row(r).sum();
        if (std::abs(sum - 1.0) <= 1e-9 && sum > 0.0) kernel.row(r) /= sum;
      }
      t.kernel = CategoricalKernel{std::move(kernel)};
      spec.transitions.push_back(std::move(t));
    }
    for (int r = 0; r < table.rows(); ++r) {
      const double sum = table.row(r).sum();
      if (std::abs(sum - 1.0) <= 1e-9 && sum > 0.0) table.row(r) /= sum;
    }
    spec.structural.push_back({wv.var.id, std::move(table)});
  }
  return spec;
}

// Replace terminal targets of multi-target transitions with fresh
// non-terminals that re-emit the terminal deterministically.
void separate_terminals(WorkSpec& work) {
  std::map<std::string, std::string> lifted;  // terminal id -> fresh non-terminal
  const size_t var_count = work.vars.size();
  for (size_t vi = 0; vi < var_count; ++vi) {
    for (size_t ti = 0; ti < work.vars[vi].outgoing.size(); ++ti) {
      if (work.vars[vi].outgoing[ti].targets.size() < 2) continue;
      const size_t arity = work.vars[vi].outgoing[ti].targets.size();
      for (size_t k = 0; k < arity; ++k) {
        const std::string target = work.vars[vi].outgoing[ti].targets[k];
        if (!work.is_terminal(target)) continue;
        auto it = lifted.find(target);
        if (it == lifted.end()) {
          const int card = work.cardinality(target);
          TemplateVariable fresh;
          fresh.id = work.fresh(target + "__nt");
          fresh.kind = VarKind::NonTerminal;
          fresh.domain = {true, card};
          const int fi = work.add_var(fresh);
          WorkTransition emit;
          emit.targets = {target};
          emit.table = Eigen::MatrixXd::Identity(card, card);
          emit.weight = Eigen::VectorXd::Ones(card);
          work.vars[fi].outgoing.push_back(std::move(emit));
          it = lifted.emplace(target, fresh.id).first;
        }
        // cardinalities match, so the table is reused as-is
        work.vars[vi].outgoing[ti].targets[k] = it->second;
      }
    }
  }
}

// Split off the leading targets of every arity>2 transition into a packing
// variable over their joint values, expanded again by a deterministic unpack
// transition. The original table is reused with its columns reinterpreted as
// (packed value, last target value).
void reduce_arity(WorkSpec& work) {
  for (bool changed = true; changed;) {
    changed = false;
    const size_t var_count = work.vars.size();
    for (size_t vi = 0; vi < var_count && !changed; ++vi) {
      for (size_t ti = 0; ti < work.vars[vi].outgoing.size(); ++ti) {
        const std::vector<std::string> targets = work.vars[vi].outgoing[ti].targets;
        if (targets.size() <= 2) continue;
        long long packed = 1;
        for (size_t k = 0; k + 1 < targets.size(); ++k)
          packed *= work.cardinality(targets[k]);
        if (packed > (1 << 22))
          fail(ErrorCode::Validation, "arity reduction would exceed the table size cap");

        TemplateVariable fresh;
        fresh.id = work.fresh(work.vars[vi].var.id + "__pack");
        fresh.kind = VarKind::NonTerminal;
        fresh.domain = {true, static_cast<int>(packed)};
        const int fi = work.add_var(fresh);

        WorkTransition unpack;
        unpack.targets.assign(targets.begin(), targets.end() - 1);
        unpack.table = Eigen::MatrixXd::Identity(packed, packed);
        unpack.weight = Eigen::VectorXd::Ones(packed);
        work.vars[fi].outgoing.push_back(std::move(unpack));

        work.vars[vi].outgoing[ti].targets = {fresh.id, targets.back()};
        changed = true;
        break;
      }
    }
  }
}

bool is_unary_nonterminal(const WorkSpec& work, const WorkTransition& t) {
  return t.targets.size() == 1 && !work.is_terminal(t.targets[0]);
}

// Replace all self-loop transitions of `vi` by one unary transition into a
// fresh exit variable carrying the distribution over loop-exit values,
// computed by a doubling-accelerated truncated geometric sum.
void eliminate_self_loops(WorkSpec& work, int vi) {
  WorkVar& wv = work.vars[vi];
  const std::string id = wv.var.id;
  const int card = wv.var.domain.size;

  Eigen::MatrixXd flow = Eigen::MatrixXd::Zero(card, card);  // one loop step
  Eigen::VectorXd stay = Eigen::VectorXd::Zero(card);        // total loop mass
  for (const auto& t : wv.outgoing) {
    if (!(t.targets.size() == 1 && t.targets[0] == id)) continue;
    flow += t.weight.asDiagonal() * t.table;
    stay += t.weight;
  }
  for (int a = 0; a < card; ++a)
    if (stay[a] >= 1.0 - 1e-6)
      fail(ErrorCode::NonConvergentCycle,
           "unary cycle on '" + id + "' has continuation probability " +
               std::to_string(stay[a]) + " at value " + std::to_string(a));

  const Eigen::VectorXd exit_mass = (1.0 - stay.array()).matrix();

  // geometric tail: total = sum_{n>=1} flow^n, truncated once every row's
  // exit mass is within 1e-13 of its loop mass
  Eigen::MatrixXd power = flow;
  Eigen::MatrixXd total = flow;
  bool converged = false;
  for (int round = 0; round < 64; ++round) {
    double residual = 0.0;
    for (int a = 0; a < card; ++a)
      residual = std::max(residual, stay[a] - total.row(a).dot(exit_mass));
    if (residual < 1e-13) {
      converged = true;
      break;
    }
    total += power * total;
    power *= power;
  }
  if (!converged)
    fail(ErrorCode::NonConvergentCycle,
         "unary cycle on '" + id + "' did not converge");

  Eigen::MatrixXd exit_kernel(card, card);
  for (int a = 0; a < card; ++a) {
    if (stay[a] <= 0.0) {
      exit_kernel.row(a).setZero();
      exit_kernel(a, a) = 1.0;
      continue;
    }
    for (int b = 0; b < card; ++b)
      exit_kernel(a, b) = total(a, b) * exit_mass[b] / stay[a];
    exit_kernel.row(a) /= exit_kernel.row(a).sum();  // spread the truncated tail
  }

  TemplateVariable exit_var;
  exit_var.id = work.fresh(id + "__exit");
  exit_var.kind = VarKind::NonTerminal;
  exit_var.domain = {true, card};
  const int ei = work.add_var(exit_var);
  WorkVar& fresh = work.vars[ei];
  WorkVar& owner = work.vars[vi];  // re-fetch: add_var may reallocate

  // the exit variable behaves like the owner without its loops, renormalized
  std::vector<WorkTransition> kept;
  for (const auto& t : owner.outgoing) {
    if (t.targets.size() == 1 && t.targets[0] == id) continue;
    WorkTransition copy = t;
    for (int b = 0; b < card; ++b) copy.weight[b] = t.weight[b] / exit_mass[b];
    fresh.outgoing.push_back(std::move(copy));
    kept.push_back(t);
  }

  WorkTransition into_exit;
  into_exit.targets = {exit_var.id};
  into_exit.table = std::move(exit_kernel);
  into_exit.weight = stay;
  owner.outgoing.clear();
  owner.outgoing.push_back(std::move(into_exit));
  for (auto& t : kept) owner.outgoing.push_back(std::move(t));
}

// Marginalize the intermediate variable out of one unary transition: the
// source inherits each of the target's transitions, with the value-dependent
// structural choice folded into kernel and weight.
void eliminate_unary(WorkSpec& work, int vi, size_t ti) {
  WorkTransition unary = std::move(work.vars[vi].outgoing[ti]);
  work.vars[vi].outgoing.erase(work.vars[vi].outgoing.begin() + ti);
  const Eigen::MatrixXd& link = unary.table;
  const WorkVar& target = work.at(unary.targets[0]);
  const int rows = work.vars[vi].var.domain.size;

  std::vector<WorkTransition> inherited;
  for (const auto& t : target.outgoing) {
    WorkTransition nt;
    nt.targets = t.targets;
    nt.table = Eigen::MatrixXd::Zero(rows, t.table.cols());
    nt.weight = Eigen::VectorXd::Zero(rows);
    for (int a = 0; a < rows; ++a) {
      double norm = 0.0;
      for (int c = 0; c < link.cols(); ++c) {
        const double mass = link(a, c) * t.weight[c];
        if (mass == 0.0) continue;
        norm += mass;
        nt.table.row(a) += mass * t.table.row(c);
      }
      if (norm > 0.0) {
        nt.table.row(a) /= norm;
      } else {
        nt.table.row(a).setConstant(1.0 / t.table.cols());
      }
      nt.weight[a] = unary.weight[a] * norm;
    }
    inherited.push_back(std::move(nt));
  }
  work.vars[vi].outgoing.insert(work.vars[vi].outgoing.begin() + ti,
                                std::make_move_iterator(inherited.begin()),
                                std::make_move_iterator(inherited.end()));
}

void eliminate_unaries(WorkSpec& work) {
  size_t initial = work.vars.size();
  for (const auto& wv : work.vars) initial += wv.outgoing.size();
  const size_t cap = 10 * initial + 100;

  for (size_t iter = 0; iter < cap; ++iter) {
    // self-loops take priority; cross-variable elimination can create them
    int loop_var = -1;
    for (size_t vi = 0; vi < work.vars.size() && loop_var < 0; ++vi)
      for (const auto& t : work.vars[vi].outgoing)
        if (t.targets.size() == 1 && t.targets[0] == work.vars[vi].var.id) {
          loop_var = static_cast<int>(vi);
          break;
        }
    if (loop_var >= 0) {
      eliminate_self_loops(work, loop_var);
      continue;
    }

    int uvar = -1;
    size_t utrans = 0;
    for (size_t vi = 0; vi < work.vars.size() && uvar < 0; ++vi)
      for (size_t ti = 0; ti < work.vars[vi].outgoing.size(); ++ti)
        if (is_unary_nonterminal(work, work.vars[vi].outgoing[ti])) {
          uvar = static_cast<int>(vi);
          utrans = ti;
          break;
        }
    if (uvar < 0) return;
    eliminate_unary(work, uvar, utrans);
  }
  fail(ErrorCode::NonConvergentCycle,
       "unary elimination did not reach a fixed point");
}

void drop_unreachable(WorkSpec& work) {
  std::set<std::string> reached;
  std::vector<std::string> frontier{work.prior.variable};
  reached.insert(work.prior.variable);
  while (!frontier.empty()) {
    const std::string id = std::move(frontier.back());
    frontier.pop_back();
    if (work.is_terminal(id)) continue;
    for (const auto& t : work.at(id).outgoing)
      for (const auto& target : t.targets)
        if (reached.insert(target).second) frontier.push_back(target);
  }

  WorkSpec pruned;
  pruned.prior = work.prior;
  for (auto& wv : work.vars)
    if (reached.count(wv.var.id)) {
      const int ni = pruned.add_var(wv.var);
      pruned.vars[ni].outgoing = std::move(wv.outgoing);
    }
  work = std::move(pruned);
}

}  // namespace

RbnSpec to_cnf(const RbnSpec& spec) {
  require_valid(spec);
  if (spec.kind == ModelKind::Gaussian) return spec;

  WorkSpec work = to_work(spec);
  separate_terminals(work);
  reduce_arity(work);
  eliminate_unaries(work);
  drop_unreachable(work);

  RbnSpec out = from_work(work);
  require_valid(out);
  if (!is_cnf(out))
    fail(ErrorCode::NotCnf, "normal-form transform left a non-conforming transition");
  return out;
}

}  // namespace rbn
