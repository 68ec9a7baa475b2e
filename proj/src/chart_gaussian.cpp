#include <cmath>
#include <vector>

#include "chart_internal.hpp"

namespace rbn::detail {

Chart gaussian_inside(const GrbnParams& params, const Sequence& obs, Rng* tie_rng) {
  const int n = obs.size();
  const int dim = params.dim();
  Chart chart(n, true);
  const double log_term = std::log(params.p_term);
  const double log_branch = std::log1p(-params.p_term);
  const Vec logw = shift_log_weights(params);
  const int taus = static_cast<int>(logw.size());

  // running per-span products of the emission densities, extended rightwards
  auto tidx = [n](int i, int k) { return i * (n + 1) + k; };
  std::vector<LogWeightedGaussian> term((n + 1) * (n + 1));
  for (int i = 0; i < n; ++i) term[tidx(i, i + 1)] = {0.0, {obs.obs[i], params.sigma_T}};
  if (params.multi) {
    for (int w = 2; w <= n; ++w) {
      for (int i = 0; i + w <= n; ++i) {
        const auto& prev = term[tidx(i, i + w - 1)];
        LogWeightedGaussian ext = product(prev.g, Gaussian{obs.obs[i + w - 1], params.sigma_T});
        ext.log_c += prev.log_c;
        term[tidx(i, i + w)] = std::move(ext);
      }
    }
  }

  for (int w = 1; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      GaussianMixture mix;
      BestPick best(tie_rng);
      if (params.multi || w == 1) {
        const double pois = params.multi ? log_poisson(w - 1, params.lambda) : 0.0;
        if (pois > kNegInf) {
          const auto& t = term[tidx(i, k)];
          const double c = log_term + pois + t.log_c;
          mix.components.push_back({c, t.g});
          best.offer(-1, 0, true, c - 0.5 * log_det_2pi(t.g.cov));
        }
      }
      for (int j = i + 1; j < k; ++j) {
        const auto& lmsg = chart.inside(i, j).gauss;
        const auto& rmsg = chart.inside(j, k).gauss;
        const Gaussian left{lmsg.g.mean, params.sigma_NL + lmsg.g.cov};
        const Gaussian right{rmsg.g.mean, params.sigma_NR + rmsg.g.cov};
        for (int tau = 0; tau < taus; ++tau) {
          if (logw[tau] == kNegInf) continue;
          const LogWeightedGaussian comp = product(transform(left, {tau, dim}), right);
          const double c =
              log_branch + logw[tau] + lmsg.log_c + rmsg.log_c + comp.log_c;
          mix.components.push_back({c, comp.g});
          best.offer(j, tau, false, c - 0.5 * log_det_2pi(comp.g.cov));
        }
      }
      chart.inside(i, k).gauss = moment_match(mix);
      chart.split(i, k) = best.record();
    }
  }
  return chart;
}

void gaussian_outside(const GrbnParams& params, Chart& chart) {
  const int n = chart.size();
  const int dim = params.dim();
  const double log_branch = std::log1p(-params.p_term);
  const Vec logw = shift_log_weights(params);
  const int taus = static_cast<int>(logw.size());

  chart.outside(0, n).gauss = {0.0, {params.mu_P, params.sigma_P}};

  for (int w = n - 1; w >= 1; --w) {
    for (int i = 0; i + w <= n; ++i) {
      const int k = i + w;
      GaussianMixture mix;
      // generated as left child of (i, l), with sibling (k, l): integrate the
      // sibling and parent context over the parent value, then carry the
      // result through the inverse shift
      for (int l = k + 1; l <= n; ++l) {
        const auto& parent = chart.outside(i, l).gauss;
        const auto& sibling = chart.inside(k, l).gauss;
        const LogWeightedGaussian above =
            product(parent.g, {sibling.g.mean, params.sigma_NR + sibling.g.cov});
        const double base = parent.log_c + sibling.log_c + log_branch + above.log_c;
        for (int tau = 0; tau < taus; ++tau) {
          if (logw[tau] == kNegInf) continue;
          Gaussian g = transform(above.g, Transposition{tau, dim}.inverse());
          g.cov += params.sigma_NL;
          mix.components.push_back({base + logw[tau], g});
        }
      }
      // generated as right child of (h, k), with sibling (h, i)
      for (int h = 0; h < i; ++h) {
        const auto& parent = chart.outside(h, k).gauss;
        const auto& sibling = chart.inside(h, i).gauss;
        const Gaussian left{sibling.g.mean, params.sigma_NL + sibling.g.cov};
        for (int tau = 0; tau < taus; ++tau) {
          if (logw[tau] == kNegInf) continue;
          const LogWeightedGaussian comp =
              product(parent.g, transform(left, {tau, dim}));
          Gaussian g = comp.g;
          g.cov += params.sigma_NR;
          mix.components.push_back(
              {parent.log_c + sibling.log_c + log_branch + logw[tau] + comp.log_c, g});
        }
      }
      chart.outside(i, k).gauss = moment_match(mix);
    }
  }
  chart.mark_outside();
}

}  // namespace rbn::detail
