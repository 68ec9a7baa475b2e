#include "rbn/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <thread>
#include <utility>

#include "rbn/train.hpp"

namespace rbn {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Vec segment_mean(const std::vector<Vec>& series, int begin, int end) {
  Vec mean = Vec::Zero(series[begin].size());
  for (int t = begin; t < end; ++t) mean += series[t];
  return mean / static_cast<double>(end - begin);
}

void require_series(const std::vector<Vec>& series, std::size_t min_size) {
  if (series.size() < min_size)
    fail(ErrorCode::InvalidArgument, "series is too short");
  for (const Vec& y : series)
    if (y.size() != series.front().size())
      fail(ErrorCode::InvalidArgument, "series entries have mixed dimensions");
}

std::set<std::pair<int, int>> span_set(const Tree& tree) {
  std::set<std::pair<int, int>> spans;
  for (const TreeNode& node : tree.nodes) spans.insert({node.begin, node.end});
  return spans;
}

// percentile with linear interpolation between order statistics
double percentile(const std::vector<double>& sorted, double q) {
  const double rank = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

void run_indexed(int count, int threads, const std::function<void(int)>& work) {
  int workers = threads > 0
                    ? threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, count);
  if (count == 0) return;
  if (workers == 1) {
    for (int i = 0; i < count; ++i) work(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_lock;
  auto run = [&] {
    for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        work(i);
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

}  // namespace

RbnSpec synth_model(const SynthConfig& config) {
  if (config.dim < 1)
    fail(ErrorCode::Validation, "generator dimension must be positive");
  if (!(config.prior_std > 0.0 && config.branch_std > 0.0 && config.noise > 0.0))
    fail(ErrorCode::Validation, "generator scales must be positive");
  if (config.lambda < 0.0)
    fail(ErrorCode::Validation, "generator rate must be nonnegative");
  if (config.min_len < 1 || config.max_len < config.min_len)
    fail(ErrorCode::Validation, "generator length window is empty");

  const int d = config.dim;
  Eigen::VectorXd weights = config.weights;
  if (weights.size() == 0) {
    weights = Vec::Zero(d);
    weights[0] += 0.5;
    weights[1 % d] += 0.5;
  }

  RbnSpec spec;
  spec.kind = ModelKind::Gaussian;
  spec.variables = {{"x", VarKind::NonTerminal, {false, d}},
                    {"y", VarKind::Terminal, {false, d}}};
  BranchKernel branch;
  branch.sigma_left = Mat::Identity(d, d) * (config.branch_std * config.branch_std);
  branch.sigma_right = branch.sigma_left;
  branch.transpositions = true;
  branch.weights = weights;
  Transition tb;
  tb.source = "x";
  tb.targets = {"x", "x"};
  tb.kernel = std::move(branch);
  spec.transitions.push_back(std::move(tb));
  EmissionKernel emission;
  emission.sigma = Mat::Identity(d, d) * (config.noise * config.noise);
  emission.multi = config.lambda > 0.0;
  emission.lambda = emission.multi ? config.lambda : 0.0;
  Transition te;
  te.source = "x";
  te.targets = {"y"};
  te.kernel = std::move(emission);
  spec.transitions.push_back(std::move(te));
  Eigen::MatrixXd table(1, 2);
  table << 1.0 - config.p_term, config.p_term;
  spec.structural = {{"x", table}};
  spec.prior.variable = "x";
  spec.prior.mean = Vec::Zero(d);
  spec.prior.cov = Mat::Identity(d, d) * (config.prior_std * config.prior_std);

  grbn_params(spec);  // validates the assembled model, including p_term
  return spec;
}

std::vector<GeneratedSample> generate_dataset(const SynthConfig& config, int count,
                                              std::uint64_t seed,
                                              int max_attempts) {
  if (count < 0) fail(ErrorCode::InvalidArgument, "sample count must be nonnegative");
  const RbnSpec spec = synth_model(config);
  Rng rng(seed);
  std::vector<GeneratedSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    SampleResult sample = sample_in_window(spec, rng, config.min_len,
                                           config.max_len, kDefaultMaxNodes,
                                           max_attempts);
    out.push_back({std::move(sample.sequence), std::move(sample.tree)});
  }
  return out;
}

double l2_segment_cost(const std::vector<Vec>& series, int begin, int end) {
  if (begin < 0 || end > static_cast<int>(series.size()) || begin >= end)
    fail(ErrorCode::InvalidArgument, "segment bounds out of range");
  const Vec mean = segment_mean(series, begin, end);
  double cost = 0.0;
  for (int t = begin; t < end; ++t) cost += (series[t] - mean).squaredNorm();
  return cost;
}

std::vector<int> pelt_l2(const std::vector<Vec>& series, double penalty) {
  require_series(series, 2);
  if (!(penalty > 0.0)) fail(ErrorCode::InvalidArgument, "penalty must be positive");

  const int n = static_cast<int>(series.size());
  // segment costs are evaluated directly (not via prefix sums) so the pruned
  // and exhaustive searches agree bitwise; series here are short
  std::vector<double> best(n + 1, 0.0);
  std::vector<int> prev(n + 1, 0);
  best[0] = -penalty;
  std::vector<int> candidates = {0};
  std::vector<int> alive;
  for (int t = 1; t <= n; ++t) {
    double top = std::numeric_limits<double>::infinity();
    int arg = 0;
    std::vector<double> trial(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const int tau = candidates[c];
      trial[c] = best[tau] + l2_segment_cost(series, tau, t) + penalty;
      if (trial[c] < top) {
        top = trial[c];
        arg = tau;
      }
    }
    best[t] = top;
    prev[t] = arg;
    // only strictly dominated candidates are dropped, so ties survive and
    // the lowest index keeps winning exactly as in the unpruned recursion
    alive.clear();
    for (std::size_t c = 0; c < candidates.size(); ++c)
      if (trial[c] - penalty <= best[t]) alive.push_back(candidates[c]);
    candidates.swap(alive);
    candidates.push_back(t);
  }

  std::vector<int> points;
  for (int t = prev[n]; t > 0; t = prev[t]) points.push_back(t);
  std::reverse(points.begin(), points.end());
  return points;
}

Tree bottom_up_hc(const std::vector<Vec>& series,
                  const std::vector<int>& change_points) {
  require_series(series, 1);
  const int n = static_cast<int>(series.size());
  std::vector<int> bounds = {0};
  for (int p : change_points) {
    if (p <= bounds.back() || p >= n)
      fail(ErrorCode::InvalidArgument,
           "change points must be strictly increasing interior indices");
    bounds.push_back(p);
  }
  bounds.push_back(n);

  Tree tree;
  tree.length = n;
  struct Active {
    int node;
    int begin;
    int end;
    Vec mean;
  };
  std::vector<Active> active;
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    TreeNode leaf;
    leaf.begin = bounds[s];
    leaf.end = bounds[s + 1];
    tree.nodes.push_back(leaf);
    active.push_back({static_cast<int>(tree.nodes.size()) - 1, leaf.begin,
                      leaf.end, segment_mean(series, leaf.begin, leaf.end)});
  }

  while (active.size() > 1) {
    std::size_t arg = 0;
    double closest = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s + 1 < active.size(); ++s) {
      const double distance = (active[s].mean - active[s + 1].mean).norm();
      if (distance < closest) {
        closest = distance;
        arg = s;
      }
    }
    TreeNode parent;
    parent.begin = active[arg].begin;
    parent.end = active[arg + 1].end;
    parent.children = {active[arg].node, active[arg + 1].node};
    tree.nodes.push_back(parent);
    active[arg] = {static_cast<int>(tree.nodes.size()) - 1, parent.begin,
                   parent.end, segment_mean(series, parent.begin, parent.end)};
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(arg) + 1);
  }

  tree.root = static_cast<int>(tree.nodes.size()) - 1;
  return tree;
}

std::vector<int> leaf_boundaries(const Tree& tree) {
  std::set<int> interior;
  for (const TreeNode& node : tree.nodes)
    if (node.children.empty() && node.begin > 0) interior.insert(node.begin);
  return {interior.begin(), interior.end()};
}

Metrics metrics_from_counts(double tp, double fp, double fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  m.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

Metrics tree_metrics(const Tree& predicted, const Tree& truth) {
  if (predicted.length != truth.length)
    fail(ErrorCode::LengthMismatch, "trees cover different sequence lengths");
  const std::set<std::pair<int, int>> a = span_set(predicted);
  const std::set<std::pair<int, int>> b = span_set(truth);
  double tp = 0.0;
  for (const auto& span : a) tp += b.count(span) ? 1.0 : 0.0;
  return metrics_from_counts(tp, static_cast<double>(a.size()) - tp,
                             static_cast<double>(b.size()) - tp);
}

Metrics marginal_metrics(const std::vector<NodePosterior>& posteriors,
                         const Tree& truth) {
  const int n = truth.length;
  if (static_cast<int>(posteriors.size()) != n * (n + 1) / 2)
    fail(ErrorCode::InvalidArgument, "posteriors must cover every cell");
  const std::set<std::pair<int, int>> spans = span_set(truth);
  double tp = 0.0;
  double total = 0.0;
  for (const NodePosterior& p : posteriors) {
    const double e = std::clamp(p.existence, 0.0, 1.0);
    total += e;
    if (spans.count({p.i, p.k})) tp += e;
  }
  return metrics_from_counts(tp, total - tp,
                             static_cast<double>(spans.size()) - tp);
}

Metrics change_point_metrics(const std::vector<int>& predicted,
                             const std::vector<int>& truth, int slack) {
  if (slack < 0) fail(ErrorCode::InvalidArgument, "slack must be nonnegative");
  double tp = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < predicted.size() && j < truth.size()) {
    if (std::abs(predicted[i] - truth[j]) <= slack) {
      tp += 1.0;
      ++i;
      ++j;
    } else if (predicted[i] < truth[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return metrics_from_counts(tp, static_cast<double>(predicted.size()) - tp,
                             static_cast<double>(truth.size()) - tp);
}

std::pair<double, double> bootstrap_ci(const std::vector<double>& values,
                                       int resamples, std::uint64_t seed) {
  if (values.size() < 2)
    fail(ErrorCode::InvalidArgument, "bootstrap needs at least two values");
  if (resamples < 1)
    fail(ErrorCode::InvalidArgument, "bootstrap needs at least one resample");
  const auto n = static_cast<int>(values.size());
  Rng rng(seed);
  std::vector<double> means(resamples);
  for (int r = 0; r < resamples; ++r) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
      sum += values[static_cast<std::size_t>(rng.uniform() * n)];
    means[r] = sum / n;
  }
  std::sort(means.begin(), means.end());
  return {percentile(means, 0.025), percentile(means, 0.975)};
}

std::vector<EvalRow> run_eval(const EvalConfig& config) {
  if (config.baseline_train_count < 1 || config.rbn_train_count < 1 ||
      config.test_count < 2)
    fail(ErrorCode::InvalidArgument,
         "evaluation needs training splits and at least two test sequences");
  std::vector<double> grid = config.penalty_grid;
  if (grid.empty())
    for (double lg = -6.0; lg <= 6.0 + 1e-9; lg += 0.25)
      grid.push_back(std::pow(10.0, lg));

  std::vector<EvalRow> rows;
  for (std::size_t level = 0; level < config.noises.size(); ++level) {
    SynthConfig cfg = config.synth;
    cfg.noise = config.noises[level];
    const RbnSpec generator = synth_model(cfg);

    // baseline: pick the penalty with the best pooled change-point f1
    const std::vector<GeneratedSample> cpd_train = generate_dataset(
        cfg, config.baseline_train_count, mix_seed(config.seed, level * 16));
    double penalty = grid.front();
    double top_f1 = -1.0;
    for (double candidate : grid) {
      double tp = 0.0;
      double fp = 0.0;
      double fn = 0.0;
      for (const GeneratedSample& sample : cpd_train) {
        const Metrics m =
            change_point_metrics(pelt_l2(sample.sequence.obs, candidate),
                                 leaf_boundaries(sample.tree), config.slack);
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
      }
      const double f1 = metrics_from_counts(tp, fp, fn).f1;
      if (f1 > top_f1) {
        top_f1 = f1;
        penalty = candidate;
      }
    }

    // model: gradient descent from the canned initialization
    const std::vector<GeneratedSample> rbn_train = generate_dataset(
        cfg, config.rbn_train_count, mix_seed(config.seed, level * 16 + 1));
    Dataset train_data;
    for (const GeneratedSample& sample : rbn_train)
      train_data.sequences.push_back(sample.sequence);
    FitConfig fit_config;
    fit_config.max_iters = config.fit_iters;
    fit_config.step_size = config.fit_step;
    fit_config.tol = config.fit_tol;
    fit_config.threads = config.threads;
    const RbnSpec trained = decode_params(
        fit(default_init(generator, train_data), train_data, fit_config).params);

    const std::vector<GeneratedSample> test = generate_dataset(
        cfg, config.test_count, mix_seed(config.seed, level * 16 + 2));

    struct PerSequence {
      Metrics baseline;
      Metrics max;
      Metrics marginal;
    };
    std::vector<PerSequence> scored(test.size());
    run_indexed(static_cast<int>(test.size()), config.threads, [&](int s) {
      const GeneratedSample& sample = test[s];
      const std::vector<int> points = pelt_l2(sample.sequence.obs, penalty);
      scored[s].baseline =
          tree_metrics(bottom_up_hc(sample.sequence.obs, points), sample.tree);
      Chart chart = inside_pass(trained, sample.sequence);
      scored[s].max = tree_metrics(best_tree(trained, chart), sample.tree);
      outside_pass(trained, sample.sequence, chart);
      scored[s].marginal =
          marginal_metrics(node_posteriors(trained, chart), sample.tree);
    });

    const char* names[3] = {"hc_cpd", "rbn_max", "rbn_marginal"};
    for (int method = 0; method < 3; ++method) {
      double tp = 0.0;
      double fp = 0.0;
      double fn = 0.0;
      std::vector<double> f1s(scored.size());
      for (std::size_t s = 0; s < scored.size(); ++s) {
        const Metrics& m = method == 0   ? scored[s].baseline
                           : method == 1 ? scored[s].max
                                         : scored[s].marginal;
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
        f1s[s] = m.f1;
      }
      EvalRow row;
      row.noise = cfg.noise;
      row.method = names[method];
      row.metrics = metrics_from_counts(tp, fp, fn);
      const auto ci = bootstrap_ci(f1s, config.resamples,
                                   mix_seed(config.seed, level * 16 + 3 + method));
      row.ci_low = ci.first;
      row.ci_high = ci.second;
      if (method == 0) row.penalty = penalty;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string eval_to_csv(const std::vector<EvalRow>& rows) {
  std::string out = "noise,method,precision,recall,f1,ci_low,ci_high\n";
  for (const EvalRow& row : rows) {
    out += format_double(row.noise) + "," + row.method + "," +
           format_double(row.metrics.precision) + "," +
           format_double(row.metrics.recall) + "," +
           format_double(row.metrics.f1) + "," + format_double(row.ci_low) +
           "," + format_double(row.ci_high) + "\n";
  }
  return out;
}

}  // namespace rbn
