#include <limits>
#include <variant>

#include "internal.hpp"
#include "rbn/model.hpp"

namespace rbn {

namespace {

struct WorkItem {
  // either expand a tree node, or append an already-drawn observation that
  // belongs to tree node `owner`
  bool emit = false;
  int node = -1;
  int owner = -1;
  Vec value;
};

Vec draw_gaussian(Rng& rng, const Vec& mean, const Eigen::LLT<Mat>& chol) {
  const int d = static_cast<int>(mean.size());
  Vec z(d);
  for (int i = 0; i < d; ++i) z[i] = rng.normal();
  return mean + chol.matrixL() * z;
}

SampleResult sample_impl(const RbnSpec& spec, const SpecIndex& index, Rng& rng,
                         int max_nodes) {
  const CategoryIndex terminals = terminal_index(spec);
  SampleResult out;
  auto& nodes = out.tree.nodes;
  auto& seq = out.sequence;

  // factor emission/branch covariances once
  std::vector<Eigen::LLT<Mat>> chol_left(spec.transitions.size());
  std::vector<Eigen::LLT<Mat>> chol_right(spec.transitions.size());
  std::vector<Eigen::LLT<Mat>> chol_emit(spec.transitions.size());
  if (spec.kind == ModelKind::Gaussian) {
    for (size_t i = 0; i < spec.transitions.size(); ++i) {
      if (const auto* b = std::get_if<BranchKernel>(&spec.transitions[i].kernel)) {
        chol_left[i] = cholesky_psd(b->sigma_left);
        chol_right[i] = cholesky_psd(b->sigma_right);
      } else if (const auto* e = std::get_if<EmissionKernel>(&spec.transitions[i].kernel)) {
        chol_emit[i] = cholesky_psd(e->sigma);
      }
    }
  }

  auto new_node = [&](const std::string& variable, int category, const Vec& value,
                      int tau) {
    if (static_cast<int>(nodes.size()) >= max_nodes)
      fail(ErrorCode::BudgetExceeded,
           "sampling exceeded the node budget of " + std::to_string(max_nodes));
    TreeNode node;
    node.begin = std::numeric_limits<int>::max();
    node.end = -1;
    node.variable = variable;
    node.category = category;
    node.value = value;
    node.tau = tau;
    nodes.push_back(std::move(node));
    return static_cast<int>(nodes.size()) - 1;
  };

  // root from the prior
  int root;
  if (spec.kind == ModelKind::Discrete) {
    const int value = rng.categorical(spec.prior.weights);
    root = new_node(spec.prior.variable, value, Vec(), 0);
  } else {
    const Eigen::LLT<Mat> chol = cholesky_psd(spec.prior.cov);
    root = new_node(spec.prior.variable, -1, draw_gaussian(rng, spec.prior.mean, chol), 0);
  }
  out.tree.root = root;

  std::vector<WorkItem> stack;
  stack.push_back({false, root, -1, Vec()});

  while (!stack.empty()) {
    WorkItem item = std::move(stack.back());
    stack.pop_back();

    if (item.emit) {
      const int pos = seq.size();
      seq.obs.push_back(item.value);
      TreeNode& owner = nodes[item.owner];
      owner.begin = std::min(owner.begin, pos);
      owner.end = std::max(owner.end, pos + 1);
      continue;
    }

    const int node_idx = item.node;
    const std::string source = nodes[node_idx].variable;
    const auto& owned = index.transitions_of.at(source);
    const auto& structural = spec.structural[index.structural_of.at(source)];
    const int row = structural.table.rows() == 1 ? 0 : nodes[node_idx].category;
    Eigen::VectorXd weights = structural.table.row(row);
    const int choice = rng.categorical(weights);
    const int ti = owned[choice];
    const Transition& t = spec.transitions[ti];

    std::vector<WorkItem> pending;  // in target order

    if (const auto* kernel = std::get_if<CategoricalKernel>(&t.kernel)) {
      Eigen::VectorXd krow = kernel->table.row(nodes[node_idx].category);
      const long long joint = rng.categorical(krow);
      const auto dims = detail::target_dims(spec, index, t);
      const auto values = detail::unravel(joint, dims);
      for (size_t k = 0; k < t.targets.size(); ++k) {
        const auto& target_var = spec.variables[index.variable.at(t.targets[k])];
        if (target_var.kind == VarKind::NonTerminal) {
          const int child = new_node(t.targets[k], values[k], Vec(), 0);
          nodes[node_idx].children.push_back(child);
          pending.push_back({false, child, -1, Vec()});
        } else {
          Vec obs = Vec::Constant(1, terminals.category(t.targets[k], values[k]));
          pending.push_back({true, -1, node_idx, std::move(obs)});
        }
      }
    } else if (const auto* branch = std::get_if<BranchKernel>(&t.kernel)) {
      const Vec& x = nodes[node_idx].value;
      int tau = 0;
      if (branch->transpositions) {
        Eigen::VectorXd w = branch->weights;
        tau = rng.categorical(w);
      }
      const Transposition shift{tau, static_cast<int>(x.size())};
      const Vec left = draw_gaussian(rng, shift.apply(x), chol_left[ti]);
      const Vec right = draw_gaussian(rng, x, chol_right[ti]);
      const int left_child = new_node(t.source, -1, left, tau);
      nodes[node_idx].children.push_back(left_child);
      const int right_child = new_node(t.source, -1, right, 0);
      nodes[node_idx].children.push_back(right_child);
      pending.push_back({false, left_child, -1, Vec()});
      pending.push_back({false, right_child, -1, Vec()});
    } else {
      const auto& emission = std::get<EmissionKernel>(t.kernel);
      int count = 1;
      if (emission.multi) count += rng.poisson(emission.lambda);
      for (int k = 0; k < count; ++k)
        pending.push_back(
            {true, -1, node_idx, draw_gaussian(rng, nodes[node_idx].value, chol_emit[ti])});
    }

    for (size_t k = pending.size(); k-- > 0;) stack.push_back(std::move(pending[k]));
  }

  // spans: children were created after their parent, so one reverse sweep
  // propagates them bottom-up
  for (size_t i = nodes.size(); i-- > 0;) {
    for (int child : nodes[i].children) {
      nodes[i].begin = std::min(nodes[i].begin, nodes[child].begin);
      nodes[i].end = std::max(nodes[i].end, nodes[child].end);
    }
  }
  out.tree.length = seq.size();
  return out;
}

}  // namespace

SampleResult sample(const RbnSpec& spec, Rng& rng, int max_nodes) {
  require_valid(spec);
  return sample_impl(spec, index_spec(spec), rng, max_nodes);
}

SampleResult sample(const RbnSpec& spec, std::uint64_t seed, int max_nodes) {
  Rng rng(seed);
  return sample(spec, rng, max_nodes);
}

std::vector<SampleResult> sample_many(const RbnSpec& spec, int count,
                                      std::uint64_t seed, int max_nodes) {
  require_valid(spec);
  const SpecIndex index = index_spec(spec);
  Rng rng(seed);
  std::vector<SampleResult> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(sample_impl(spec, index, rng, max_nodes));
  return out;
}

SampleResult sample_in_window(const RbnSpec& spec, Rng& rng, int min_len,
                              int max_len, int max_nodes, int max_attempts) {
  require_valid(spec);
  if (min_len > max_len || min_len < 1)
    fail(ErrorCode::InvalidArgument, "bad length window");
  const SpecIndex index = index_spec(spec);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    SampleResult r;
    try {
      r = sample_impl(spec, index, rng, max_nodes);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BudgetExceeded) continue;  // oversize: reject
      throw;
    }
    const int len = r.sequence.size();
    if (len >= min_len && len <= max_len) return r;
  }
  fail(ErrorCode::BudgetExceeded,
       "no sample landed in the length window after " +
           std::to_string(max_attempts) + " attempts");
}

}  // namespace rbn
