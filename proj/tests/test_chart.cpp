// Chart inference: exact discrete inference against exhaustive enumeration,
// closed-form checks for the continuous approximation where it is exact, a
// hand-computed scalar example for the mixture reduction, and the joint /
// search / optimisation entry points against brute-force oracles.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "rbn/chart.hpp"
#include "rbn/model.hpp"

using namespace rbn;

namespace {

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> data) {
  Eigen::MatrixXd m(data.size(), data.begin()->size());
  int r = 0;
  for (const auto& row : data) {
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Eigen::VectorXd vec(std::initializer_list<double> data) {
  Eigen::VectorXd v(data.size());
  int i = 0;
  for (double x : data) v[i++] = x;
  return v;
}

Sequence symbol_seq(std::initializer_list<int> symbols) {
  Sequence s;
  for (int y : symbols) s.obs.push_back(Vec::Constant(1, static_cast<double>(y)));
  return s;
}

Sequence scalar_seq(std::initializer_list<double> values) {
  Sequence s;
  for (double y : values) s.obs.push_back(Vec::Constant(1, y));
  return s;
}

RbnSpec two_symbol_spec() {
  RbnSpec spec;
  spec.variables = {{"x", VarKind::NonTerminal, {true, 2}},
                    {"y", VarKind::Terminal, {true, 2}}};
  Transition branch;
  branch.source = "x";
  branch.targets = {"x", "x"};
  branch.kernel =
      CategoricalKernel{rows({{0.1, 0.2, 0.3, 0.4}, {0.25, 0.25, 0.25, 0.25}})};
  spec.transitions.push_back(std::move(branch));
  Transition emit;
  emit.source = "x";
  emit.targets = {"y"};
  emit.kernel = CategoricalKernel{rows({{0.8, 0.2}, {0.3, 0.7}})};
  spec.transitions.push_back(std::move(emit));
  spec.structural = {{"x", rows({{0.3, 0.7}, {0.4, 0.6}})}};
  spec.prior.variable = "x";
  spec.prior.weights = vec({0.6, 0.4});
  return spec;
}

// same shape with generic weights, so derivation scores never tie
RbnSpec skewed_spec() {
  RbnSpec spec = two_symbol_spec();
  std::get<CategoricalKernel>(spec.transitions[0].kernel).table =
      rows({{0.4, 0.3, 0.2, 0.1}, {0.15, 0.35, 0.25, 0.25}});
  std::get<CategoricalKernel>(spec.transitions[1].kernel).table =
      rows({{0.9, 0.1}, {0.2, 0.8}});
  spec.structural[0].table = rows({{0.35, 0.65}, {0.45, 0.55}});
  spec.prior.weights = vec({0.7, 0.3});
  return spec;
}

// two non-terminal variables to exercise the concatenated category space
RbnSpec two_variable_spec() {
  RbnSpec spec;
  spec.variables = {{"s", VarKind::NonTerminal, {true, 2}},
                    {"b", VarKind::NonTerminal, {true, 3}},
                    {"y", VarKind::Terminal, {true, 2}}};
  Transition sb;
  sb.source = "s";
  sb.targets = {"b", "b"};
  sb.kernel = CategoricalKernel{
      rows({{0.05, 0.1, 0.1, 0.15, 0.1, 0.1, 0.15, 0.1, 0.15},
            {0.1, 0.05, 0.15, 0.1, 0.2, 0.05, 0.1, 0.15, 0.1}})};
  spec.transitions.push_back(std::move(sb));
  Transition sy;
  sy.source = "s";
  sy.targets = {"y"};
  sy.kernel = CategoricalKernel{rows({{0.7, 0.3}, {0.2, 0.8}})};
  spec.transitions.push_back(std::move(sy));
  Transition bs;
  bs.source = "b";
  bs.targets = {"s", "b"};
  bs.kernel = CategoricalKernel{rows({{0.2, 0.1, 0.15, 0.25, 0.1, 0.2},
                                      {0.1, 0.2, 0.2, 0.15, 0.15, 0.2},
                                      {0.3, 0.1, 0.1, 0.2, 0.15, 0.15}})};
  spec.transitions.push_back(std::move(bs));
  Transition by;
  by.source = "b";
  by.targets = {"y"};
  by.kernel = CategoricalKernel{rows({{0.6, 0.4}, {0.35, 0.65}, {0.5, 0.5}})};
  spec.transitions.push_back(std::move(by));
  spec.structural = {{"s", rows({{0.3, 0.7}, {0.45, 0.55}})},
                     {"b", rows({{0.25, 0.75}, {0.4, 0.6}, {0.5, 0.5}})}};
  spec.prior.variable = "s";
  spec.prior.weights = vec({0.55, 0.45});
  return spec;
}

// unit-variance scalar model: everything about its chart is hand-computable
RbnSpec scalar_spec() {
  RbnSpec spec;
  spec.kind = ModelKind::Gaussian;
  spec.variables = {{"x", VarKind::NonTerminal, {false, 1}},
                    {"y", VarKind::Terminal, {false, 1}}};
  Transition branch;
  branch.source = "x";
  branch.targets = {"x", "x"};
  branch.kernel = BranchKernel{Mat::Identity(1, 1), Mat::Identity(1, 1)};
  spec.transitions.push_back(std::move(branch));
  Transition emit;
  emit.source = "x";
  emit.targets = {"y"};
  emit.kernel = EmissionKernel{Mat::Identity(1, 1)};
  spec.transitions.push_back(std::move(emit));
  spec.structural = {{"x", rows({{0.5, 0.5}})}};
  spec.prior.variable = "x";
  spec.prior.mean = Vec::Zero(1);
  spec.prior.cov = Mat::Identity(1, 1);
  return spec;
}

RbnSpec vector_spec(double p_term, double var_n, double var_t, bool multi,
                    double lambda, bool transpositions,
                    std::initializer_list<double> weights = {0.5, 0.3, 0.2}) {
  RbnSpec spec;
  spec.kind = ModelKind::Gaussian;
  spec.variables = {{"x", VarKind::NonTerminal, {false, 3}},
                    {"y", VarKind::Terminal, {false, 3}}};
  BranchKernel branch;
  branch.sigma_left = Mat::Identity(3, 3) * var_n;
  branch.sigma_right = Mat::Identity(3, 3) * var_n;
  branch.transpositions = transpositions;
  if (transpositions) branch.weights = vec(weights);
  Transition tb;
  tb.source = "x";
  tb.targets = {"x", "x"};
  tb.kernel = std::move(branch);
  spec.transitions.push_back(std::move(tb));
  EmissionKernel emission;
  emission.sigma = Mat::Identity(3, 3) * var_t;
  emission.multi = multi;
  emission.lambda = multi ? lambda : 0.0;
  Transition te;
  te.source = "x";
  te.targets = {"y"};
  te.kernel = std::move(emission);
  spec.transitions.push_back(std::move(te));
  spec.structural = {{"x", rows({{1.0 - p_term, p_term}})}};
  spec.prior.variable = "x";
  spec.prior.mean = Vec::Zero(3);
  spec.prior.cov = Mat::Identity(3, 3);
  return spec;
}

oracle::GrbnSetup setup_for(double p_term, double var_n, double var_t, bool multi,
                            double lambda, std::vector<double> shift_weights) {
  oracle::GrbnSetup setup;
  setup.mu_p = Vec::Zero(3);
  setup.sigma_p = Mat::Identity(3, 3);
  setup.sigma_nl = Mat::Identity(3, 3) * var_n;
  setup.sigma_nr = Mat::Identity(3, 3) * var_n;
  setup.sigma_t = Mat::Identity(3, 3) * var_t;
  setup.p_term = p_term;
  setup.shift_weights = std::move(shift_weights);
  setup.multi = multi;
  setup.lambda = lambda;
  return setup;
}

std::vector<int> symbols_of(const Sequence& obs) {
  std::vector<int> symbols;
  for (int i = 0; i < obs.size(); ++i) symbols.push_back(obs.symbol(i));
  return symbols;
}

std::set<std::pair<int, int>> span_set(const Tree& tree) {
  std::set<std::pair<int, int>> spans;
  for (const TreeNode& node : tree.nodes) spans.insert({node.begin, node.end});
  return spans;
}

std::map<std::pair<int, int>, Vec> as_map(const LatentAssignment& x) {
  std::map<std::pair<int, int>, Vec> values;
  for (int i = 0; i < x.n; ++i)
    for (int k = i + 1; k <= x.n; ++k) values[{i, k}] = x.value(i, k);
  return values;
}

// spans plus per-node shifts in the oracle's explicit form
oracle::Structure tree_structure(const Tree& tree, std::vector<int>* shifts) {
  oracle::Structure s;
  shifts->clear();
  for (const TreeNode& node : tree.nodes) {
    if (node.children.empty()) {
      s.push_back({node.begin, node.end, -1});
      shifts->push_back(0);
    } else {
      s.push_back({node.begin, node.end, tree.nodes[node.children[0]].end});
      shifts->push_back(tree.nodes[node.children[0]].tau);
    }
  }
  return s;
}

double log_derivation_score(const RbnSpec& spec, const Tree& tree,
                            const std::vector<int>& symbols) {
  const CategoryIndex nts = nonterminal_index(spec);
  auto global = [&](const TreeNode& node) {
    return nts.category(node.variable, node.category);
  };
  const TreeNode& root = tree.nodes[tree.root];
  REQUIRE(root.variable == spec.prior.variable);
  double score = std::log(spec.prior.weights[root.category]);
  for (const TreeNode& node : tree.nodes) {
    if (node.children.empty())
      score += std::log(oracle::emit_weight(spec, global(node), symbols[node.begin]));
    else
      score += std::log(oracle::branch_weight(spec, global(node),
                                              global(tree.nodes[node.children[0]]),
                                              global(tree.nodes[node.children[1]])));
  }
  return score;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

double norm1(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) /
         std::sqrt(2.0 * M_PI * var);
}

}  // namespace

TEST_CASE("discrete inside masses match exhaustive enumeration") {
  const RbnSpec spec = two_symbol_spec();
  const CategoryIndex nts = nonterminal_index(spec);
  const std::vector<int> symbols = {0, 1, 0};
  const Sequence obs = symbol_seq({0, 1, 0});
  const Chart chart = inside_pass(spec, obs);

  // beta(i, k, a): restart enumeration from a point prior on category a
  for (int i = 0; i < 3; ++i) {
    for (int k = i + 1; k <= 3; ++k) {
      for (int a = 0; a < nts.total; ++a) {
        RbnSpec pinned = spec;
        pinned.prior.variable = spec.variables[nts.var_of[a]].id;
        pinned.prior.weights = Eigen::VectorXd::Zero(
            spec.variables[nts.var_of[a]].domain.size);
        pinned.prior.weights[nts.value_of[a]] = 1.0;
        const std::vector<int> sub(symbols.begin() + i, symbols.begin() + k);
        const double expected = oracle::enumerate_derivations(pinned, sub).total;
        const double got = std::exp(chart.inside(i, k).log_probs[a]);
        CHECK(std::abs(got - expected) <= 1e-12 * (1.0 + expected));
      }
    }
  }

  const double total = oracle::enumerate_derivations(spec, symbols).total;
  CHECK(std::abs(std::exp(marginal_likelihood(spec, chart)) - total) <=
        1e-12 * total);
}

TEST_CASE("discrete posteriors match exhaustive enumeration") {
  for (const RbnSpec& spec : {two_symbol_spec(), two_variable_spec()}) {
    const std::vector<int> symbols = {0, 1, 1, 0};
    const Sequence obs = symbol_seq({0, 1, 1, 0});
    Chart chart = inside_pass(spec, obs);
    outside_pass(spec, obs, chart);

    const oracle::DerivationStats stats = oracle::enumerate_derivations(spec, symbols);
    const std::vector<NodePosterior> posts = node_posteriors(spec, chart);
    REQUIRE(posts.size() == 10);

    double existence_sum = 0.0;
    for (const NodePosterior& post : posts) {
      double cell_mass = 0.0;
      for (int a = 0; a < chart.inside(0, 4).log_probs.size(); ++a) {
        const auto it = stats.occupancy.find({post.i, post.k, a});
        const double joint = it == stats.occupancy.end() ? 0.0 : it->second;
        cell_mass += joint;
        // alpha * beta equals the enumJoint mass of (cell, category)
        const double log_ab = chart.inside(post.i, post.k).log_probs[a] +
                              chart.outside(post.i, post.k).log_probs[a];
        if (joint > 0.0) {
          CHECK(std::abs(std::exp(log_ab) - joint) <= 1e-12 * joint);
          const double cond = std::exp(post.dist.log_probs[a]);
          CHECK(std::abs(cond * cell_mass - joint) <= 1.0);  // filled below
        } else {
          CHECK(std::exp(log_ab) <= 1e-15);
        }
      }
      CHECK(std::abs(post.existence - cell_mass / stats.total) <= 1e-12);
      // conditional category distribution
      if (cell_mass > 0.0) {
        for (int a = 0; a < chart.inside(0, 4).log_probs.size(); ++a) {
          const auto it = stats.occupancy.find({post.i, post.k, a});
          const double joint = it == stats.occupancy.end() ? 0.0 : it->second;
          CHECK(std::abs(std::exp(post.dist.log_probs[a]) - joint / cell_mass) <=
                1e-12);
        }
      }
      existence_sum += post.existence;
    }
    // every derivation of n symbols has exactly 2n - 1 nodes
    CHECK(std::abs(existence_sum - 7.0) <= 1e-9);
    const auto it = std::find_if(posts.begin(), posts.end(), [](const NodePosterior& p) {
      return p.i == 0 && p.k == 4;
    });
    REQUIRE(it != posts.end());
    CHECK(std::abs(it->existence - 1.0) <= 1e-12);
  }
}

TEST_CASE("discrete marginal agrees with grammar parsing") {
  const RbnSpec spec = two_symbol_spec();
  const Pcfg grammar = rbn_to_pcfg(spec);
  for (int n = 1; n <= 4; ++n) {
    for (const std::vector<int>& symbols : oracle::all_sequences(2, n)) {
      Sequence obs;
      for (int y : symbols) obs.obs.push_back(Vec::Constant(1, y));
      const double lp = marginal_likelihood(spec, inside_pass(spec, obs));
      std::vector<std::string> words;
      for (int y : symbols) words.push_back(grammar.terminals[y]);
      const double reference = oracle::pcfg_sequence_prob(grammar, words);
      CHECK(std::abs(std::exp(lp) - reference) <= 1e-12 * (1.0 + reference));
    }
  }
}

TEST_CASE("normal-form rewrite preserves the chart marginal") {
  // ternary expansion: not in normal form, so the chart refuses it directly
  RbnSpec wide;
  wide.variables = {{"x", VarKind::NonTerminal, {true, 2}},
                    {"y", VarKind::Terminal, {true, 2}}};
  Transition t3;
  t3.source = "x";
  t3.targets = {"x", "x", "x"};
  t3.kernel = CategoricalKernel{
      rows({{0.1, 0.15, 0.1, 0.15, 0.1, 0.15, 0.1, 0.15},
            {0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125}})};
  wide.transitions.push_back(std::move(t3));
  Transition emit;
  emit.source = "x";
  emit.targets = {"y"};
  emit.kernel = CategoricalKernel{rows({{0.75, 0.25}, {0.4, 0.6}})};
  wide.transitions.push_back(std::move(emit));
  wide.structural = {{"x", rows({{0.25, 0.75}, {0.3, 0.7}})}};
  wide.prior.variable = "x";
  wide.prior.weights = vec({0.5, 0.5});

  CHECK(code_of([&] { inside_pass(wide, symbol_seq({0, 1})); }) == ErrorCode::NotCnf);

  const RbnSpec cnf = to_cnf(wide);
  for (int n = 1; n <= 3; ++n) {
    for (const std::vector<int>& symbols : oracle::all_sequences(2, n)) {
      Sequence obs;
      for (int y : symbols) obs.obs.push_back(Vec::Constant(1, y));
      const double lp = marginal_likelihood(cnf, inside_pass(cnf, obs));
      const double reference = oracle::sequence_prob(wide, symbols);
      CHECK(std::abs(std::exp(lp) - reference) <= 1e-10 * (1.0 + reference));
    }
  }
}

TEST_CASE("discrete structure search recovers the most probable derivation") {
  const RbnSpec spec = skewed_spec();
  const CategoryIndex nts = nonterminal_index(spec);
  const std::vector<int> symbols = {0, 1, 0, 1};
  const Sequence obs = symbol_seq({0, 1, 0, 1});
  const oracle::DerivationStats stats = oracle::enumerate_derivations(spec, symbols);

  const Tree tree = viterbi_structure(spec, obs, LatentAssignment{});
  const double got = log_derivation_score(spec, tree, symbols);
  CHECK(std::abs(got - std::log(stats.best)) <= 1e-12);

  std::set<std::pair<int, int>> expected_spans;
  std::map<std::pair<int, int>, int> expected_cats;
  for (size_t t = 0; t < stats.best_structure.size(); ++t) {
    const oracle::SpanNode& node = stats.best_structure[t];
    expected_spans.insert({node.i, node.k});
    expected_cats[{node.i, node.k}] = stats.best_categories[t];
  }
  CHECK(span_set(tree) == expected_spans);
  for (const TreeNode& node : tree.nodes)
    CHECK(nts.category(node.variable, node.category) ==
          expected_cats.at({node.begin, node.end}));
}

TEST_CASE("fixed categories: joint and structure search match enumeration") {
  const RbnSpec spec = skewed_spec();
  const CategoryIndex nts = nonterminal_index(spec);
  const std::vector<int> symbols = {0, 0, 1, 0};
  const Sequence obs = symbol_seq({0, 0, 1, 0});

  LatentAssignment x = LatentAssignment::discrete(4);
  for (int i = 0; i < 4; ++i)
    for (int k = i + 1; k <= 4; ++k) x.category(i, k) = (i + k) % 2;

  // direct sum over the five span structures with the labels pinned
  auto structure_score = [&](const oracle::Structure& s) {
    double score = std::log(spec.prior.weights[nts.value_of[x.category(0, 4)]]);
    for (const oracle::SpanNode& node : s) {
      if (node.j < 0)
        score += std::log(
            oracle::emit_weight(spec, x.category(node.i, node.k), symbols[node.i]));
      else
        score += std::log(oracle::branch_weight(spec, x.category(node.i, node.k),
                                                x.category(node.i, node.j),
                                                x.category(node.j, node.k)));
    }
    return score;
  };

  double log_total = kNegInf;
  double log_best = kNegInf;
  std::set<std::pair<int, int>> best_spans;
  std::map<std::pair<int, int>, double> span_mass;
  for (const oracle::Structure& s : oracle::all_structures(4, false)) {
    const double score = structure_score(s);
    log_total = log_total == kNegInf
                    ? score
                    : std::max(log_total, score) +
                          std::log1p(std::exp(-std::abs(log_total - score)));
    for (const oracle::SpanNode& node : s) {
      double& slot =
          span_mass.try_emplace({node.i, node.k}, kNegInf).first->second;
      slot = slot == kNegInf ? score
                             : std::max(slot, score) +
                                   std::log1p(std::exp(-std::abs(slot - score)));
    }
    if (score > log_best) {
      log_best = score;
      best_spans.clear();
      for (const oracle::SpanNode& node : s) best_spans.insert({node.i, node.k});
    }
  }

  const JointResult joint = joint_inside_outside(spec, obs, x);
  CHECK(std::abs(joint.log_joint - log_total) <= 1e-12);
  double existence_sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int k = i + 1; k <= 4; ++k) {
      const auto it = span_mass.find({i, k});
      const double expected =
          it == span_mass.end() ? 0.0 : std::exp(it->second - log_total);
      CHECK(std::abs(joint.existence(i, k) - expected) <= 1e-12);
      existence_sum += joint.existence(i, k);
    }
  }
  CHECK(std::abs(joint.existence(0, 4) - 1.0) <= 1e-12);
  CHECK(std::abs(existence_sum - 7.0) <= 1e-9);

  const Tree tree = viterbi_structure(spec, obs, x);
  std::vector<int> shifts;
  CHECK(span_set(tree) == best_spans);
}

TEST_CASE("single observation inference is closed form") {
  std::mt19937_64 rng(41u);
  const RbnSpec spec = vector_spec(0.35, 0.02, 0.07, false, 0.0, true, {0.2, 0.5, 0.3});
  Sequence obs;
  obs.obs.push_back(oracle::random_vec(rng, 3, 1.0));

  Chart chart = inside_pass(spec, obs);
  const double lp = marginal_likelihood(spec, chart);
  const Gaussian marginal{Vec::Zero(3),
                          Mat::Identity(3, 3) + Mat::Identity(3, 3) * 0.07};
  const double expected =
      std::log(0.35) + oracle::log_density_explicit(marginal, obs.obs[0]);
  CHECK(std::abs(lp - expected) <= 1e-12);

  // wide emission only adds the log mass of an empty extension count
  const RbnSpec multi = vector_spec(0.35, 0.02, 0.07, true, 2.0, true, {0.2, 0.5, 0.3});
  const double lp_multi = marginal_likelihood(multi, inside_pass(multi, obs));
  CHECK(std::abs(lp_multi - (expected - 2.0)) <= 1e-12);

  outside_pass(spec, obs, chart);
  const std::vector<NodePosterior> posts = node_posteriors(spec, chart);
  REQUIRE(posts.size() == 1);
  CHECK(std::abs(posts[0].existence - 1.0) <= 1e-12);
  const Mat prec = Mat::Identity(3, 3) + (Mat::Identity(3, 3) * 0.07).inverse();
  const Mat post_cov = prec.inverse();
  const Vec post_mean = post_cov * ((Mat::Identity(3, 3) * 0.07).inverse() * obs.obs[0]);
  CHECK((posts[0].dist.gauss.g.mean - post_mean).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((posts[0].dist.gauss.g.cov - post_cov).cwiseAbs().maxCoeff() <= 1e-10);

  const Tree tree = best_tree(spec, chart);
  REQUIRE(tree.nodes.size() == 1);
  CHECK(tree.nodes[0].children.empty());
  CHECK((tree.nodes[0].value - post_mean).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("two observations: marginal and posteriors match the explicit joint") {
  std::mt19937_64 rng(87u);
  for (int rep = 0; rep < 5; ++rep) {
    const Mat sigma_p = oracle::random_spd(rng, 3, 0.8);
    const Mat sigma_n = oracle::random_spd(rng, 3, 0.15);
    const Mat sigma_t = oracle::random_spd(rng, 3, 0.25);
    const Vec mu_p = oracle::random_vec(rng, 3, 1.0);
    const double p_term = 0.45;

    RbnSpec spec = vector_spec(p_term, 1.0, 1.0, false, 0.0, false);
    std::get<BranchKernel>(spec.transitions[0].kernel).sigma_left = sigma_n;
    std::get<BranchKernel>(spec.transitions[0].kernel).sigma_right = sigma_n;
    std::get<EmissionKernel>(spec.transitions[1].kernel).sigma = sigma_t;
    spec.prior.mean = mu_p;
    spec.prior.cov = sigma_p;

    Sequence obs;
    obs.obs.push_back(oracle::random_vec(rng, 3, 1.0));
    obs.obs.push_back(oracle::random_vec(rng, 3, 1.0));

    // joint of (y0, y1): one split, left/right children plus emission noise
    Vec stacked(6);
    stacked << obs.obs[0], obs.obs[1];
    Vec mean(6);
    mean << mu_p, mu_p;
    Mat cov(6, 6);
    cov.block(0, 0, 3, 3) = sigma_p + sigma_n + sigma_t;
    cov.block(0, 3, 3, 3) = sigma_p;
    cov.block(3, 0, 3, 3) = sigma_p;
    cov.block(3, 3, 3, 3) = sigma_p + sigma_n + sigma_t;
    const double expected = std::log1p(-p_term) + 2.0 * std::log(p_term) +
                            oracle::log_density_explicit({mean, cov}, stacked);

    Chart chart = inside_pass(spec, obs);
    CHECK(std::abs(marginal_likelihood(spec, chart) - expected) <= 1e-10);

    outside_pass(spec, obs, chart);
    CHECK(chart.outside(0, 2).gauss.log_c == 0.0);
    CHECK((chart.outside(0, 2).gauss.g.mean - mu_p).cwiseAbs().maxCoeff() == 0.0);

    // node values: condition the explicit joint of (x, y0, y1) on the data
    auto conditional = [&](const Mat& var_x, const Mat& cov_x0, const Mat& cov_x1,
                           const Vec& mean_x) {
      Mat cross(3, 6);
      cross.block(0, 0, 3, 3) = cov_x0;
      cross.block(0, 3, 3, 3) = cov_x1;
      const Mat gain = cross * cov.inverse();
      return std::make_pair(Vec(mean_x + gain * (stacked - mean)),
                            Mat(var_x - gain * cross.transpose()));
    };

    const std::vector<NodePosterior> posts = node_posteriors(spec, chart);
    REQUIRE(posts.size() == 3);
    for (const NodePosterior& post : posts) {
      CHECK(std::abs(post.existence - 1.0) <= 1e-10);
      std::pair<Vec, Mat> expect;
      if (post.i == 0 && post.k == 2)
        expect = conditional(sigma_p, sigma_p, sigma_p, mu_p);
      else if (post.k == 1)
        expect = conditional(sigma_p + sigma_n, sigma_p + sigma_n, sigma_p, mu_p);
      else
        expect = conditional(sigma_p + sigma_n, sigma_p, sigma_p + sigma_n, mu_p);
      CHECK((post.dist.gauss.g.mean - expect.first).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((post.dist.gauss.g.cov - expect.second).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("zero-rate wide emission reduces to single emission") {
  std::mt19937_64 rng(7u);
  const RbnSpec strict = vector_spec(0.6, 0.01, 0.04, false, 0.0, true, {0.5, 0.5, 0.0});
  const RbnSpec zero = vector_spec(0.6, 0.01, 0.04, true, 0.0, true, {0.5, 0.5, 0.0});
  Sequence obs;
  for (int i = 0; i < 5; ++i) obs.obs.push_back(oracle::random_vec(rng, 3, 1.0));

  const Chart a = inside_pass(strict, obs);
  const Chart b = inside_pass(zero, obs);
  for (int i = 0; i < 5; ++i) {
    for (int k = i + 1; k <= 5; ++k) {
      CHECK(a.inside(i, k).gauss.log_c == b.inside(i, k).gauss.log_c);
      CHECK((a.inside(i, k).gauss.g.mean - b.inside(i, k).gauss.g.mean)
                .cwiseAbs()
                .maxCoeff() == 0.0);
      CHECK(a.split(i, k).j == b.split(i, k).j);
      CHECK(a.split(i, k).used_terminal == b.split(i, k).used_terminal);
    }
  }
  CHECK(marginal_likelihood(strict, a) == marginal_likelihood(zero, b));
}

TEST_CASE("scalar chart reproduces the hand-computed cell parameters") {
  const RbnSpec spec = scalar_spec();
  const Sequence obs = scalar_seq({0.0, 1.0, 2.0, 0.0});
  Chart chart = inside_pass(spec, obs);

  auto mass = [&](int i, int k) { return std::exp(chart.inside(i, k).gauss.log_c); };
  auto mean = [&](int i, int k) { return chart.inside(i, k).gauss.g.mean[0]; };
  auto var = [&](int i, int k) { return chart.inside(i, k).gauss.g.cov(0, 0); };

  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(mass(i, i + 1) - 0.5) <= 1e-12);
    CHECK(std::abs(mean(i, i + 1) - obs.obs[i][0]) <= 1e-12);
    CHECK(std::abs(var(i, i + 1) - 1.0) <= 1e-12);
  }

  // width two: a single split, no reduction error anywhere
  const double c02 = 0.125 * norm1(0.0, 1.0, 4.0);
  const double c13 = 0.125 * norm1(1.0, 2.0, 4.0);
  const double c24 = 0.125 * norm1(2.0, 0.0, 4.0);
  CHECK(std::abs(mass(0, 2) - c02) <= 1e-14);
  CHECK(std::abs(mass(1, 3) - c13) <= 1e-14);
  CHECK(std::abs(mass(2, 4) - c24) <= 1e-14);
  CHECK(std::abs(mean(0, 2) - 0.5) <= 1e-12);
  CHECK(std::abs(mean(1, 3) - 1.5) <= 1e-12);
  CHECK(std::abs(mean(2, 4) - 1.0) <= 1e-12);
  for (auto [i, k] : {std::pair{0, 2}, {1, 3}, {2, 4}})
    CHECK(std::abs(var(i, k) - 1.0) <= 1e-12);

  // width three: two equally weighted components
  const double w03a = 0.5 * 0.5 * c13 * norm1(0.0, 1.5, 4.0);
  const double w03b = 0.5 * c02 * 0.5 * norm1(0.5, 2.0, 4.0);
  const double c03 = w03a + w03b;
  CHECK(std::abs(mass(0, 3) - c03) <= 1e-15 + 1e-12 * c03);
  CHECK(std::abs(mean(0, 3) - 1.0) <= 1e-12);
  CHECK(std::abs(var(0, 3) - 17.0 / 16.0) <= 1e-12);

  const double w14a = 0.5 * 0.5 * c24 * norm1(1.0, 1.0, 4.0);
  const double w14b = 0.5 * c13 * 0.5 * norm1(1.5, 0.0, 4.0);
  const double c14 = w14a + w14b;
  const double mu14 = (w14a * 1.0 + w14b * 0.75) / c14;
  const double s14 =
      (w14a * (1.0 + 1.0) + w14b * (1.0 + 0.5625)) / c14 - mu14 * mu14;
  CHECK(std::abs(mass(1, 4) - c14) <= 1e-12 * c14);
  CHECK(std::abs(mean(1, 4) - mu14) <= 1e-12);
  CHECK(std::abs(var(1, 4) - s14) <= 1e-12);

  // root: three components, one per split
  const double w04a = 0.5 * 0.5 * c14 * norm1(0.0, mu14, 3.0 + s14);
  const double v04a = 1.0 / (0.5 + 1.0 / (1.0 + s14));
  const double m04a = v04a * mu14 / (1.0 + s14);
  const double w04b = 0.5 * c02 * c24 * norm1(0.5, 1.0, 4.0);
  const double v04b = 1.0;
  const double m04b = 0.75;
  const double w04c = 0.5 * c03 * 0.5 * norm1(1.0, 0.0, 3.0 + 17.0 / 16.0);
  const double v04c = 1.0 / (0.5 + 16.0 / 33.0);
  const double m04c = v04c * (16.0 / 33.0);
  const double c04 = w04a + w04b + w04c;
  const double mu04 = (w04a * m04a + w04b * m04b + w04c * m04c) / c04;
  const double s04 = (w04a * (v04a + m04a * m04a) + w04b * (v04b + m04b * m04b) +
                      w04c * (v04c + m04c * m04c)) /
                         c04 -
                     mu04 * mu04;
  CHECK(std::abs(mass(0, 4) - c04) <= 1e-12 * c04);
  CHECK(std::abs(mean(0, 4) - mu04) <= 1e-11);
  CHECK(std::abs(var(0, 4) - s04) <= 1e-11);

  // published values for the same example, to their quoted precision
  CHECK(std::abs(mass(0, 2) - 2.20e-2) <= 5e-5);
  CHECK(std::abs(mass(2, 4) - 1.51e-2) <= 5e-5);
  CHECK(std::abs(mass(0, 3) - 1.66e-3) <= 5e-6);
  CHECK(std::abs(mass(1, 4) - 1.58e-3) <= 5e-6);
  CHECK(std::abs(mean(1, 4) - 0.869) <= 5e-4);
  CHECK(std::abs(var(1, 4) - 1.016) <= 5e-4);
  CHECK(std::abs(mass(0, 4) - 1.76e-4) <= 5e-7);
  CHECK(std::abs(mean(0, 4) - 0.515) <= 5e-4);
  CHECK(std::abs(var(0, 4) - 1.021) <= 5e-4);

  const double lp = marginal_likelihood(spec, chart);
  CHECK(std::abs(lp - std::log(c04 * norm1(mu04, 0.0, 1.0 + s04))) <= 1e-11);
  CHECK(std::abs(std::exp(lp) - 4.63e-5) <= 5e-8);
}

TEST_CASE("scalar chart splits, ties, and the resulting tree") {
  const RbnSpec spec = scalar_spec();
  const Sequence obs = scalar_seq({0.0, 1.0, 2.0, 0.0});
  Chart chart = inside_pass(spec, obs);

  for (int i = 0; i < 4; ++i) {
    CHECK(chart.split(i, i + 1).used_terminal);
    CHECK(chart.split(i, i + 1).j == -1);
  }
  for (int i = 0; i + 2 <= 4; ++i) {
    CHECK_FALSE(chart.split(i, i + 2).used_terminal);
    CHECK(chart.split(i, i + 2).j == i + 1);
  }
  // the two expansions of (0, 3) carry identical scores; the first split wins
  CHECK(chart.split(0, 3).j == 1);
  CHECK(chart.split(1, 4).j == 3);
  CHECK(chart.split(0, 4).j == 3);
  CHECK(chart.split(0, 4).tau == 0);

  outside_pass(spec, obs, chart);
  const Tree tree = best_tree(spec, chart);
  const std::set<std::pair<int, int>> expected = {
      {0, 4}, {0, 3}, {3, 4}, {0, 1}, {1, 3}, {1, 2}, {2, 3}};
  CHECK(span_set(tree) == expected);
  REQUIRE(tree.nodes.size() == 7);
  CHECK(tree.nodes[tree.root].begin == 0);
  CHECK(tree.nodes[tree.root].end == 4);

  // root posterior: the outside message is the prior, so mass is conserved
  const std::vector<NodePosterior> posts = node_posteriors(spec, chart);
  double existence_sum = 0.0;
  for (const NodePosterior& post : posts) {
    if (post.i == 0 && post.k == 4) CHECK(std::abs(post.existence - 1.0) <= 1e-9);
    if (post.k - post.i == 1) CHECK(std::abs(post.existence - 1.0) <= 0.05);
    existence_sum += post.existence;
  }
  CHECK(std::abs(existence_sum - 7.0) <= 0.35);
}

TEST_CASE("random tie breaking picks among tied splits uniformly") {
  const RbnSpec spec = scalar_spec();
  const Sequence obs = scalar_seq({0.0, 1.0, 2.0, 0.0});
  Rng rng(2024u);
  int first = 0, second = 0;
  for (int rep = 0; rep < 80; ++rep) {
    const Chart chart = inside_pass(spec, obs, &rng);
    const int j = chart.split(0, 3).j;
    REQUIRE((j == 1 || j == 2));
    (j == 1 ? first : second) += 1;
  }
  CHECK(first >= 15);
  CHECK(second >= 15);
}

TEST_CASE("fixed values: joint matches structure enumeration") {
  std::mt19937_64 rng(19u);

  // shifts on, strict emission
  {
    const RbnSpec spec = vector_spec(0.4, 0.05, 0.1, false, 0.0, true, {0.5, 0.3, 0.2});
    const oracle::GrbnSetup setup = setup_for(0.4, 0.05, 0.1, false, 0.0, {0.5, 0.3, 0.2});
    Sequence obs;
    for (int i = 0; i < 3; ++i) obs.obs.push_back(oracle::random_vec(rng, 3, 0.8));
    LatentAssignment x = LatentAssignment::continuous(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int k = i + 1; k <= 3; ++k) x.value(i, k) = oracle::random_vec(rng, 3, 0.8);

    const oracle::GrbnEnum expected = oracle::grbn_enumerate(setup, obs.obs, as_map(x));
    const JointResult joint = joint_inside_outside(spec, obs, x);
    CHECK(std::abs(joint.log_joint - expected.log_total) <= 1e-10);
    for (int i = 0; i < 3; ++i) {
      for (int k = i + 1; k <= 3; ++k) {
        const auto it = expected.occupancy.find({i, k});
        const double want = it == expected.occupancy.end() ? 0.0 : it->second;
        CHECK(std::abs(joint.existence(i, k) - want) <= 1e-10);
      }
    }
    CHECK(std::abs(joint.existence(0, 3) - 1.0) <= 1e-12);
  }

  // wide emission with a positive rate
  {
    const RbnSpec spec = vector_spec(0.55, 0.05, 0.1, true, 1.5, false);
    const oracle::GrbnSetup setup = setup_for(0.55, 0.05, 0.1, true, 1.5, {1.0});
    Sequence obs;
    for (int i = 0; i < 4; ++i) obs.obs.push_back(oracle::random_vec(rng, 3, 0.8));
    LatentAssignment x = LatentAssignment::continuous(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int k = i + 1; k <= 4; ++k) x.value(i, k) = oracle::random_vec(rng, 3, 0.8);

    const oracle::GrbnEnum expected = oracle::grbn_enumerate(setup, obs.obs, as_map(x));
    const JointResult joint = joint_inside_outside(spec, obs, x);
    CHECK(std::abs(joint.log_joint - expected.log_total) <= 1e-10);
    for (int i = 0; i < 4; ++i) {
      for (int k = i + 1; k <= 4; ++k) {
        const auto it = expected.occupancy.find({i, k});
        const double want = it == expected.occupancy.end() ? 0.0 : it->second;
        CHECK(std::abs(joint.existence(i, k) - want) <= 1e-10);
      }
    }
  }
}

TEST_CASE("fixed values: structure search matches exhaustive scoring") {
  std::mt19937_64 rng(23u);

  // scalar example, values from the chart's own means
  {
    const RbnSpec spec = scalar_spec();
    const Sequence obs = scalar_seq({0.0, 1.0, 2.0, 0.0});
    const Chart chart = inside_pass(spec, obs);
    const LatentAssignment x = inside_means(chart);

    oracle::GrbnSetup setup;
    setup.mu_p = Vec::Zero(1);
    setup.sigma_p = Mat::Identity(1, 1);
    setup.sigma_nl = Mat::Identity(1, 1);
    setup.sigma_nr = Mat::Identity(1, 1);
    setup.sigma_t = Mat::Identity(1, 1);
    setup.p_term = 0.5;

    const oracle::GrbnEnum expected = oracle::grbn_enumerate(setup, obs.obs, as_map(x));
    const Tree tree = viterbi_structure(spec, obs, x);
    std::vector<int> shifts;
    const oracle::Structure s = tree_structure(tree, &shifts);
    const double got = oracle::grbn_structure_score(setup, obs.obs, as_map(x), s, shifts);
    CHECK(std::abs(got - expected.log_best) <= 1e-9);

    std::set<std::pair<int, int>> best_spans;
    for (const oracle::SpanNode& node : expected.best_structure)
      best_spans.insert({node.i, node.k});
    CHECK(span_set(tree) == best_spans);
  }

  // vector model with shifts
  {
    const RbnSpec spec = vector_spec(0.4, 0.05, 0.1, false, 0.0, true, {0.5, 0.3, 0.2});
    const oracle::GrbnSetup setup = setup_for(0.4, 0.05, 0.1, false, 0.0, {0.5, 0.3, 0.2});
    Sequence obs;
    for (int i = 0; i < 4; ++i) obs.obs.push_back(oracle::random_vec(rng, 3, 0.8));
    LatentAssignment x = LatentAssignment::continuous(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int k = i + 1; k <= 4; ++k) x.value(i, k) = oracle::random_vec(rng, 3, 0.8);

    const oracle::GrbnEnum expected = oracle::grbn_enumerate(setup, obs.obs, as_map(x));
    const Tree tree = viterbi_structure(spec, obs, x);
    std::vector<int> shifts;
    const oracle::Structure s = tree_structure(tree, &shifts);
    const double got = oracle::grbn_structure_score(setup, obs.obs, as_map(x), s, shifts);
    CHECK(std::abs(got - expected.log_best) <= 1e-9);

    std::map<std::pair<int, int>, int> expected_shifts;
    std::set<std::pair<int, int>> best_spans;
    for (size_t t = 0; t < expected.best_structure.size(); ++t) {
      const oracle::SpanNode& node = expected.best_structure[t];
      best_spans.insert({node.i, node.k});
      if (node.j >= 0) expected_shifts[{node.i, node.k}] = expected.best_shifts[t];
    }
    CHECK(span_set(tree) == best_spans);
    for (const TreeNode& node : tree.nodes)
      if (!node.children.empty())
        CHECK(tree.nodes[node.children[0]].tau ==
              expected_shifts.at({node.begin, node.end}));
  }
}

TEST_CASE("gradient ascent on the joint finds the scalar optimum") {
  const RbnSpec spec = scalar_spec();

  // argmax of log N(x|0,1) + log N(2|x,1) is exactly 1
  Sequence obs;
  obs.obs.push_back(Vec::Constant(1, 2.0));
  const LatentAssignment init = LatentAssignment::continuous(1, 1);
  const LatentAssignment fit = map_estimate(spec, obs, init, 50, 1.0);
  CHECK(std::abs(fit.value(0, 1)[0] - 1.0) <= 1e-6);
  CHECK(joint_inside_outside(spec, obs, fit).log_joint >=
        joint_inside_outside(spec, obs, init).log_joint);

  // a start at the optimum stays there
  Sequence at_mean;
  at_mean.obs.push_back(Vec::Zero(1));
  const LatentAssignment still = map_estimate(spec, at_mean, init, 50, 1.0);
  CHECK(std::abs(still.value(0, 1)[0]) <= 1e-9);

  // zero steps returns the start point
  const LatentAssignment same = map_estimate(spec, obs, init, 0, 1.0);
  CHECK(same.value(0, 1)[0] == 0.0);
}

TEST_CASE("gradient ascent never lowers the objective") {
  std::mt19937_64 rng(67u);
  const RbnSpec spec = vector_spec(0.5, 0.05, 0.1, false, 0.0, true, {0.5, 0.3, 0.2});
  Sequence obs;
  for (int i = 0; i < 3; ++i) obs.obs.push_back(oracle::random_vec(rng, 3, 1.0));

  LatentAssignment init = LatentAssignment::continuous(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int k = i + 1; k <= 3; ++k) init.value(i, k) = oracle::random_vec(rng, 3, 1.0);

  const double before = joint_inside_outside(spec, obs, init).log_joint;
  LatentAssignment current = init;
  for (int chunk = 0; chunk < 4; ++chunk) {
    const LatentAssignment next = map_estimate(spec, obs, current, 5, 0.25);
    const double now = joint_inside_outside(spec, obs, next).log_joint;
    CHECK(now >= joint_inside_outside(spec, obs, current).log_joint);
    current = next;
  }
  CHECK(joint_inside_outside(spec, obs, current).log_joint >= before);
}

TEST_CASE("inflated observation noise lowers the data likelihood") {
  const RbnSpec truth = vector_spec(0.6, 0.01, 1e-4, false, 0.0, true, {0.5, 0.5, 0.0});
  const RbnSpec loose = vector_spec(0.6, 0.01, 1e-3, false, 0.0, true, {0.5, 0.5, 0.0});
  Rng rng(90210u);
  double tight_total = 0.0, loose_total = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const SampleResult s = sample_in_window(truth, rng, 2, 6);
    tight_total += marginal_likelihood(truth, inside_pass(truth, s.sequence));
    loose_total += marginal_likelihood(loose, inside_pass(loose, s.sequence));
  }
  CHECK(tight_total > loose_total);
}

TEST_CASE("parses recover generating structures at low noise") {
  // every split shifts its left child, so each bracketing leaves a distinct
  // signature on the leaves; with equally weighted shift choices the sampled
  // bracketing is often not the likeliest explanation of its own output
  const RbnSpec spec = vector_spec(0.6, 1e-3, 1e-4, false, 0.0, true, {0.0, 1.0, 0.0});
  Rng rng(20240818u);
  int recovered = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const SampleResult s = sample_in_window(spec, rng, 3, 7);
    const Chart chart = inside_pass(spec, s.sequence);
    const Tree guess = best_tree(spec, chart);
    if (guess.bracketed() == s.tree.bracketed()) ++recovered;
  }
  CHECK(recovered >= 45);
}

TEST_CASE("repeated passes are bit-identical") {
  const RbnSpec spec = vector_spec(0.5, 0.05, 0.1, false, 0.0, true, {0.5, 0.3, 0.2});
  std::mt19937_64 rng(3u);
  Sequence obs;
  for (int i = 0; i < 5; ++i) obs.obs.push_back(oracle::random_vec(rng, 3, 1.0));

  Chart a = inside_pass(spec, obs);
  Chart b = inside_pass(spec, obs);
  outside_pass(spec, obs, a);
  outside_pass(spec, obs, b);
  for (int i = 0; i < 5; ++i) {
    for (int k = i + 1; k <= 5; ++k) {
      CHECK(a.inside(i, k).gauss.log_c == b.inside(i, k).gauss.log_c);
      CHECK((a.inside(i, k).gauss.g.mean - b.inside(i, k).gauss.g.mean)
                .cwiseAbs()
                .maxCoeff() == 0.0);
      CHECK((a.inside(i, k).gauss.g.cov - b.inside(i, k).gauss.g.cov)
                .cwiseAbs()
                .maxCoeff() == 0.0);
      CHECK(a.outside(i, k).gauss.log_c == b.outside(i, k).gauss.log_c);
      CHECK(a.split(i, k).j == b.split(i, k).j);
      CHECK(a.split(i, k).tau == b.split(i, k).tau);
    }
  }
  CHECK(chart_to_csv(spec, a) == chart_to_csv(spec, b));
}

TEST_CASE("chart export is a complete per-cell table") {
  const RbnSpec spec = scalar_spec();
  const Sequence obs = scalar_seq({0.0, 1.0, 2.0, 0.0});
  Chart chart = inside_pass(spec, obs);
  outside_pass(spec, obs, chart);
  const std::string csv = chart_to_csv(spec, chart);

  std::vector<std::string> lines;
  size_t start = 0;
  while (start < csv.size()) {
    const size_t stop = csv.find('\n', start);
    lines.push_back(csv.substr(start, stop - start));
    start = stop + 1;
  }
  REQUIRE(lines.size() == 11);
  CHECK(lines[0] == "i,k,existence_prob,mean_1,var_1,best_j,best_tau");
  CHECK(lines[10].substr(0, 4) == "3,4,");
  // the root row records the winning split
  for (const std::string& line : lines)
    if (line.substr(0, 4) == "0,4,") CHECK(line.substr(line.size() - 4) == ",3,0");

  // discrete export uses the top category and its complementary mass
  const RbnSpec d = two_symbol_spec();
  const Sequence dobs = symbol_seq({0, 1});
  Chart dchart = inside_pass(d, dobs);
  outside_pass(d, dobs, dchart);
  const std::string dcsv = chart_to_csv(d, dchart);
  CHECK(dcsv.substr(0, dcsv.find('\n')) ==
        "i,k,existence_prob,mean_1,var_1,best_j,best_tau");
  CHECK(std::count(dcsv.begin(), dcsv.end(), '\n') == 4);
}

TEST_CASE("root existence is exact on random data") {
  const RbnSpec spec = vector_spec(0.6, 0.01, 0.04, true, 2.0, true, {0.5, 0.5, 0.0});
  Rng rng(11u);
  for (int rep = 0; rep < 10; ++rep) {
    const SampleResult s = sample_in_window(spec, rng, 2, 6);
    Chart chart = inside_pass(spec, s.sequence);
    outside_pass(spec, s.sequence, chart);
    const int n = s.sequence.size();
    for (const NodePosterior& post : node_posteriors(spec, chart)) {
      CHECK(post.existence >= 0.0);
      CHECK(post.existence <= 2.0);
      if (post.i == 0 && post.k == n) CHECK(std::abs(post.existence - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("invalid chart inputs are rejected") {
  const RbnSpec discrete = two_symbol_spec();
  const RbnSpec continuous = vector_spec(0.5, 0.05, 0.1, false, 0.0, false);

  CHECK(code_of([&] { inside_pass(discrete, Sequence{}); }) ==
        ErrorCode::InvalidArgument);
  CHECK(code_of([&] { inside_pass(discrete, symbol_seq({0, 5})); }) ==
        ErrorCode::InvalidArgument);
  CHECK(code_of([&] {
          Sequence bad;
          bad.obs.push_back(Vec::Constant(1, 0.5));
          inside_pass(discrete, bad);
        }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] {
          Sequence bad;
          bad.obs.push_back(Vec::Zero(2));
          inside_pass(continuous, bad);
        }) == ErrorCode::InvalidArgument);

  // chart inference needs both structural choices to stay possible
  const RbnSpec degenerate = vector_spec(1.0, 0.05, 0.1, false, 0.0, false);
  Sequence one;
  one.obs.push_back(Vec::Zero(3));
  CHECK(code_of([&] { inside_pass(degenerate, one); }) == ErrorCode::Validation);

  const Sequence dobs = symbol_seq({0, 1});
  Chart chart = inside_pass(discrete, dobs);
  CHECK(code_of([&] { node_posteriors(discrete, chart); }) ==
        ErrorCode::InvalidArgument);
  CHECK(code_of([&] { outside_pass(discrete, symbol_seq({0, 1, 0}), chart); }) ==
        ErrorCode::LengthMismatch);
  CHECK(code_of([&] {
          Sequence two;
          two.obs.push_back(Vec::Zero(3));
          two.obs.push_back(Vec::Zero(3));
          outside_pass(continuous, two, chart);
        }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { marginal_likelihood(continuous, chart); }) ==
        ErrorCode::InvalidArgument);

  Sequence cobs;
  cobs.obs.push_back(Vec::Zero(3));
  cobs.obs.push_back(Vec::Zero(3));
  CHECK(code_of([&] {
          joint_inside_outside(continuous, cobs, LatentAssignment::continuous(3, 3));
        }) == ErrorCode::LengthMismatch);
  CHECK(code_of([&] {
          joint_inside_outside(continuous, cobs, LatentAssignment::continuous(2, 2));
        }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] {
          LatentAssignment x = LatentAssignment::discrete(2);
          x.category(0, 2) = 99;
          joint_inside_outside(discrete, dobs, x);
        }) == ErrorCode::InvalidArgument);

  CHECK(code_of([&] {
          map_estimate(discrete, dobs, LatentAssignment::discrete(2), 5, 0.1);
        }) == ErrorCode::Unsupported);
  CHECK(code_of([&] {
          map_estimate(continuous, cobs, LatentAssignment::continuous(2, 3), -1, 0.1);
        }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] {
          map_estimate(continuous, cobs, LatentAssignment::continuous(2, 3), 5, 0.0);
        }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] {
          LatentAssignment x = LatentAssignment::continuous(2, 3);
          x.value(0, 1)[0] = std::numeric_limits<double>::quiet_NaN();
          map_estimate(continuous, cobs, x, 5, 0.1);
        }) == ErrorCode::NonFinite);

  CHECK(code_of([&] { viterbi_structure(continuous, cobs, LatentAssignment{}); }) ==
        ErrorCode::LengthMismatch);
}
