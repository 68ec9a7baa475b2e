#include "rbn/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "internal.hpp"

namespace rbn {

namespace detail {

std::vector<int> target_dims(const RbnSpec& spec, const SpecIndex& index,
                             const Transition& t) {
  std::vector<int> dims;
  dims.reserve(t.targets.size());
  for (const auto& id : t.targets)
    dims.push_back(spec.variables[index.variable.at(id)].domain.size);
  return dims;
}

double structural_weight(const RbnSpec& spec, const SpecIndex& index,
                         const std::string& source, int source_value, int ti) {
  const auto& owned = index.transitions_of.at(source);
  const auto pos = std::find(owned.begin(), owned.end(), ti);
  const int col = static_cast<int>(pos - owned.begin());
  const auto& table = spec.structural[index.structural_of.at(source)].table;
  const int row = table.rows() == 1 ? 0 : source_value;
  return table(row, col);
}

std::string fresh_id(const RbnSpec& spec, const std::string& base) {
  std::set<std::string> used;
  for (const auto& v : spec.variables) used.insert(v.id);
  if (!used.count(base)) return base;
  for (int k = 2;; ++k) {
    std::string candidate = base + std::to_string(k);
    if (!used.count(candidate)) return candidate;
  }
}

}  // namespace detail

SpecIndex index_spec(const RbnSpec& spec) {
  SpecIndex index;
  for (size_t i = 0; i < spec.variables.size(); ++i)
    index.variable.emplace(spec.variables[i].id, static_cast<int>(i));
  for (size_t i = 0; i < spec.transitions.size(); ++i)
    index.transitions_of[spec.transitions[i].source].push_back(static_cast<int>(i));
  for (size_t i = 0; i < spec.structural.size(); ++i)
    index.structural_of.emplace(spec.structural[i].owner, static_cast<int>(i));
  return index;
}

namespace {

constexpr double kProbTol = 1e-12;

bool rows_are_distributions(const Eigen::MatrixXd& m, std::string* why) {
  for (int r = 0; r < m.rows(); ++r) {
    double sum = 0.0;
    for (int c = 0; c < m.cols(); ++c) {
      if (!(m(r, c) >= 0.0) || m(r, c) > 1.0 + kProbTol) {
        *why = "row " + std::to_string(r) + " has entry outside [0,1]";
        return false;
      }
      sum += m(r, c);
    }
    if (std::abs(sum - 1.0) > kProbTol) {
      *why = "row " + std::to_string(r) + " sums to " + std::to_string(sum);
      return false;
    }
  }
  return true;
}

bool is_valid_covariance(const Mat& sigma, int dim, std::string* why) {
  if (sigma.rows() != dim || sigma.cols() != dim) {
    *why = "expected " + std::to_string(dim) + "x" + std::to_string(dim);
    return false;
  }
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    *why = "not symmetric";
    return false;
  }
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) {
    *why = "not positive definite";
    return false;
  }
  return true;
}

}  // namespace

ValidationReport validate_spec(const RbnSpec& spec) {
  ValidationReport report;
  auto flag = [&](const std::string& code, const std::string& message,
                  const std::string& where) {
    report.violations.push_back({code, message, where});
  };

  // variables
  std::set<std::string> ids;
  for (const auto& v : spec.variables) {
    if (v.id.empty()) flag("empty-id", "variable with empty id", v.id);
    if (!ids.insert(v.id).second) flag("duplicate-id", "duplicate variable id", v.id);
    if (v.domain.size < 1) flag("bad-domain", "domain size must be >= 1", v.id);
    if (!v.domain.categorical && v.domain.size > kMaxDim)
      flag("bad-domain",
           "continuous dimension exceeds the supported maximum of " +
               std::to_string(kMaxDim),
           v.id);
    const bool want_categorical = spec.kind == ModelKind::Discrete;
    if (v.domain.categorical != want_categorical)
      flag("kind-mismatch",
           spec.kind == ModelKind::Discrete
               ? "discrete model requires categorical domains"
               : "gaussian model requires continuous domains",
           v.id);
  }
  if (!report.violations.empty()) return report;  // ids unreliable below

  const SpecIndex index = index_spec(spec);
  auto var_of = [&](const std::string& id) -> const TemplateVariable* {
    auto it = index.variable.find(id);
    return it == index.variable.end() ? nullptr : &spec.variables[it->second];
  };

  // transitions
  for (size_t i = 0; i < spec.transitions.size(); ++i) {
    const auto& t = spec.transitions[i];
    const std::string where = "transition " + std::to_string(i);
    const TemplateVariable* src = var_of(t.source);
    if (!src) {
      flag("unknown-id", "unknown source variable '" + t.source + "'", where);
      continue;
    }
    if (src->kind != VarKind::NonTerminal) {
      flag("bad-source", "transitions must start at a non-terminal", where);
      continue;
    }
    if (t.targets.empty()) {
      flag("bad-arity", "transition has no targets", where);
      continue;
    }
    bool targets_ok = true;
    int terminal_targets = 0;
    for (const auto& id : t.targets) {
      const TemplateVariable* tv = var_of(id);
      if (!tv) {
        flag("unknown-id", "unknown target variable '" + id + "'", where);
        targets_ok = false;
      } else if (tv->kind == VarKind::Terminal) {
        ++terminal_targets;
      }
    }
    if (!targets_ok) continue;

    if (spec.kind == ModelKind::Discrete) {
      const auto* kernel = std::get_if<CategoricalKernel>(&t.kernel);
      if (!kernel) {
        flag("bad-kernel", "discrete transition requires a categorical kernel", where);
        continue;
      }
      const auto dims = detail::target_dims(spec, index, t);
      long long cols = 1;
      for (int d : dims) cols *= d;
      if (cols > (1 << 22)) {
        flag("bad-kernel", "joint target space too large", where);
        continue;
      }
      if (kernel->table.rows() != src->domain.size || kernel->table.cols() != cols) {
        flag("bad-kernel",
             "kernel table must be " + std::to_string(src->domain.size) + "x" +
                 std::to_string(cols),
             where);
        continue;
      }
      std::string why;
      if (!rows_are_distributions(kernel->table, &why))
        flag("bad-kernel", "kernel " + why, where);
    } else {
      const int dim = src->domain.size;
      if (const auto* branch = std::get_if<BranchKernel>(&t.kernel)) {
        if (t.targets.size() != 2 || terminal_targets != 0) {
          flag("bad-kernel", "branch kernel requires two non-terminal targets", where);
          continue;
        }
        for (const auto& id : t.targets)
          if (var_of(id)->domain.size != dim)
            flag("bad-kernel", "branch target dimension mismatch", where);
        std::string why;
        if (!is_valid_covariance(branch->sigma_left, dim, &why))
          flag("bad-kernel", "left covariance " + why, where);
        if (!is_valid_covariance(branch->sigma_right, dim, &why))
          flag("bad-kernel", "right covariance " + why, where);
        if (branch->transpositions) {
          if (branch->weights.size() != dim) {
            flag("bad-kernel", "shift weights must have one entry per dimension", where);
          } else {
            double sum = 0.0;
            bool nonneg = true;
            for (int k = 0; k < dim; ++k) {
              sum += branch->weights[k];
              nonneg = nonneg && branch->weights[k] >= 0.0;
            }
            if (!nonneg || std::abs(sum - 1.0) > kProbTol)
              flag("bad-kernel", "shift weights must form a distribution", where);
          }
        }
      } else if (const auto* emission = std::get_if<EmissionKernel>(&t.kernel)) {
        if (t.targets.size() != 1 || terminal_targets != 1) {
          flag("bad-kernel", "emission kernel requires one terminal target", where);
          continue;
        }
        if (var_of(t.targets[0])->domain.size != dim)
          flag("bad-kernel", "emission target dimension mismatch", where);
        std::string why;
        if (!is_valid_covariance(emission->sigma, dim, &why))
          flag("bad-kernel", "emission covariance " + why, where);
        if (emission->lambda < 0.0)
          flag("bad-kernel", "negative emission rate", where);
        if (!emission->multi && emission->lambda != 0.0)
          flag("bad-kernel", "emission rate set without multi-observation mode", where);
      } else {
        flag("bad-kernel", "gaussian transition requires a branch or emission kernel",
             where);
      }
    }
  }

  // structural distributions
  std::set<std::string> owners;
  for (size_t i = 0; i < spec.structural.size(); ++i) {
    const auto& s = spec.structural[i];
    const std::string where = "structural " + std::to_string(i);
    const TemplateVariable* owner = var_of(s.owner);
    if (!owner) {
      flag("unknown-id", "unknown owner variable '" + s.owner + "'", where);
      continue;
    }
    if (owner->kind != VarKind::NonTerminal) {
      flag("bad-owner", "structural owner must be a non-terminal", where);
      continue;
    }
    if (!owners.insert(s.owner).second) {
      flag("duplicate-structural", "second structural distribution for owner", where);
      continue;
    }
    const auto it = index.transitions_of.find(s.owner);
    const int count = it == index.transitions_of.end()
                          ? 0
                          : static_cast<int>(it->second.size());
    const int rows = owner->domain.categorical ? owner->domain.size : 1;
    if (s.table.rows() != rows || s.table.cols() != count) {
      flag("bad-structural",
           "table must be " + std::to_string(rows) + "x" + std::to_string(count),
           where);
      continue;
    }
    std::string why;
    if (!rows_are_distributions(s.table, &why))
      flag("bad-structural", "structural " + why, where);
  }
  for (const auto& v : spec.variables) {
    if (v.kind != VarKind::NonTerminal) continue;
    const auto it = index.transitions_of.find(v.id);
    if (it == index.transitions_of.end() || it->second.empty())
      flag("unexpandable", "non-terminal has no outgoing transitions", v.id);
    else if (!owners.count(v.id))
      flag("missing-structural", "non-terminal has no structural distribution", v.id);
  }

  // prior
  {
    const TemplateVariable* pv = var_of(spec.prior.variable);
    if (!pv) {
      flag("unknown-id", "unknown prior variable '" + spec.prior.variable + "'",
           "prior");
    } else if (pv->kind != VarKind::NonTerminal) {
      flag("bad-prior", "prior variable must be a non-terminal", "prior");
    } else if (spec.kind == ModelKind::Discrete) {
      if (spec.prior.weights.size() != pv->domain.size) {
        flag("bad-prior", "prior weights must cover every value", "prior");
      } else {
        std::string why;
        Eigen::MatrixXd row = spec.prior.weights.transpose();
        if (!rows_are_distributions(row, &why)) flag("bad-prior", "prior " + why, "prior");
      }
    } else {
      if (spec.prior.mean.size() != pv->domain.size)
        flag("bad-prior", "prior mean dimension mismatch", "prior");
      std::string why;
      if (!is_valid_covariance(spec.prior.cov, pv->domain.size, &why))
        flag("bad-prior", "prior covariance " + why, "prior");
    }
  }

  // the gaussian engine supports exactly the canonical one-variable family
  if (spec.kind == ModelKind::Gaussian && report.violations.empty()) {
    int nonterminals = 0, terminals = 0, branches = 0, emissions = 0;
    for (const auto& v : spec.variables)
      (v.kind == VarKind::NonTerminal ? nonterminals : terminals) += 1;
    for (const auto& t : spec.transitions) {
      if (std::holds_alternative<BranchKernel>(t.kernel)) ++branches;
      if (std::holds_alternative<EmissionKernel>(t.kernel)) ++emissions;
    }
    if (nonterminals != 1 || terminals != 1 || branches != 1 || emissions != 1)
      flag("unsupported-shape",
           "gaussian models must have one non-terminal, one terminal, one branch "
           "transition, and one emission transition",
           "model");
  }

  return report;
}

void require_valid(const RbnSpec& spec) {
  const ValidationReport report = validate_spec(spec);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    fail(ErrorCode::Validation,
         v.code + " at " + v.where + ": " + v.message +
             (report.violations.size() > 1
                  ? " (+" + std::to_string(report.violations.size() - 1) +
                        " more violations)"
                  : ""));
  }
}

namespace {

CategoryIndex build_index(const RbnSpec& spec, VarKind kind) {
  CategoryIndex index;
  for (size_t i = 0; i < spec.variables.size(); ++i) {
    const auto& v = spec.variables[i];
    if (v.kind != kind || !v.domain.categorical) continue;
    index.offset.emplace(v.id, index.total);
    for (int value = 0; value < v.domain.size; ++value) {
      index.var_of.push_back(static_cast<int>(i));
      index.value_of.push_back(value);
    }
    index.total += v.domain.size;
  }
  return index;
}

}  // namespace

CategoryIndex nonterminal_index(const RbnSpec& spec) {
  return build_index(spec, VarKind::NonTerminal);
}

CategoryIndex terminal_index(const RbnSpec& spec) {
  return build_index(spec, VarKind::Terminal);
}

bool is_cnf(const RbnSpec& spec) {
  const SpecIndex index = index_spec(spec);
  for (const auto& t : spec.transitions) {
    std::vector<VarKind> kinds;
    for (const auto& id : t.targets) {
      auto it = index.variable.find(id);
      if (it == index.variable.end()) return false;
      kinds.push_back(spec.variables[it->second].kind);
    }
    const bool emission = kinds.size() == 1 && kinds[0] == VarKind::Terminal;
    const bool branch = kinds.size() == 2 && kinds[0] == VarKind::NonTerminal &&
                        kinds[1] == VarKind::NonTerminal;
    if (!emission && !branch) return false;
  }
  return true;
}

int Sequence::symbol(int i) const {
  const Vec& x = obs.at(i);
  if (x.size() != 1)
    fail(ErrorCode::InvalidArgument, "discrete observation must have one column");
  const double rounded = std::round(x[0]);
  if (std::abs(x[0] - rounded) > 1e-9 || rounded < 0)
    fail(ErrorCode::InvalidArgument, "discrete observation must be a non-negative integer");
  return static_cast<int>(rounded);
}

std::string Tree::bracketed() const {
  if (root < 0) return "()";
  std::ostringstream out;
  auto render = [&](auto&& self, int idx) -> void {
    const TreeNode& node = nodes[idx];
    out << '(' << node.begin << ':' << node.end;
    if (node.tau != 0) out << '@' << node.tau;
    for (int child : node.children) {
      out << ' ';
      self(self, child);
    }
    out << ')';
  };
  render(render, root);
  return out.str();
}

double Rng::uniform() {
  return (engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

int Rng::categorical(const double* w, int n) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += w[i];
  if (!(total > 0.0))
    fail(ErrorCode::InvalidArgument, "categorical draw from all-zero weights");
  double u = uniform() * total;
  for (int i = 0; i < n; ++i) {
    u -= w[i];
    if (u < 0.0) return i;
  }
  // numerical tail: return the last positive-weight index
  for (int i = n - 1; i >= 0; --i)
    if (w[i] > 0.0) return i;
  return n - 1;
}

int Rng::poisson(double lambda) {
  if (lambda < 0.0) fail(ErrorCode::InvalidArgument, "negative poisson rate");
  if (lambda == 0.0) return 0;
  // inversion by sequential search; fine for the moderate rates used here
  const double u = uniform();
  double p = std::exp(-lambda);
  double cum = p;
  int k = 0;
  const int cap = static_cast<int>(20.0 * lambda + 200.0);
  while (u > cum && k < cap) {
    ++k;
    p *= lambda / k;
    cum += p;
  }
  return k;
}

}  // namespace rbn
