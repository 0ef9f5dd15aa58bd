#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "usagegen/exact.hpp"
#include "usagegen/sampler.hpp"

namespace usagegen {

// Dense-kernel analysis is quadratic in the number of feasible states, so it
// gets a tighter limit than plain enumeration.
inline constexpr std::size_t kKernelStateLimit = 2048;

// Exact one-step kernel of a Gibbs sampler. States are every feasible
// configuration (the support plus zero-probability feasible ones, which are
// legal sampler states and decide reducibility), in lexicographic order; pi
// is the stationary target extended with zeros accordingly.
struct TransitionMatrix {
  std::shared_ptr<const CompiledModel> compiled;
  SamplerKind kind = SamplerKind::rsgs;
  std::vector<Configuration> states;
  std::vector<double> pi;
  std::vector<std::vector<double>> p;

  std::size_t state_index(const Configuration& c) const {
    auto it = std::lower_bound(states.begin(), states.end(), c,
                               [&](const Configuration& a, const Configuration& b) {
                                 return compiled->lex_less(a, b);
                               });
    if (it == states.end() || !(*it == c))
      throw UsageError(codes::shape, "configuration is not a feasible state");
    return static_cast<std::size_t>(it - states.begin());
  }
};

namespace detail {

using Matrix = std::vector<std::vector<double>>;

// Single-site update kernel P_s. A state whose conditional at s has no mass
// keeps a self-loop so the matrix stays stochastic.
inline Matrix site_kernel(const TransitionMatrix& base, int site) {
  const CompiledModel& cm = *base.compiled;
  const std::size_t n = base.states.size();
  Matrix p(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w = local_conditional_weights(cm, base.states[i], site);
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) {
      p[i][i] = 1.0;
      continue;
    }
    Configuration target = base.states[i];
    for (ClassIndex c = 0; c < w.size(); ++c) {
      if (w[c] == 0.0) continue;
      target.classes[site] = c;
      p[i][base.state_index(target)] += w[c] / total;
    }
  }
  return p;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.size();
  Matrix out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      double v = a[i][k];
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i][j] += v * b[k][j];
    }
  return out;
}

inline TransitionMatrix kernel_base(const JointDistribution& dist,
                                    std::size_t state_limit) {
  TransitionMatrix k;
  k.compiled = dist.compiled;
  const CompiledModel& cm = *dist.compiled;
  std::size_t n = dist.configs.size() + dist.zero_mass_feasible.size();
  if (n > state_limit)
    throw UsageError(codes::too_large,
                     "kernel needs " + std::to_string(n) +
                         " states, above the limit of " + std::to_string(state_limit));
  k.states.resize(n);
  std::merge(dist.configs.begin(), dist.configs.end(),
             dist.zero_mass_feasible.begin(), dist.zero_mass_feasible.end(),
             k.states.begin(),
             [&](const Configuration& a, const Configuration& b) {
               return cm.lex_less(a, b);
             });
  k.pi.assign(n, 0.0);
  for (std::size_t i = 0; i < dist.configs.size(); ++i)
    k.pi[k.state_index(dist.configs[i])] = dist.probs[i];
  return k;
}

}  // namespace detail

/// Exact transition matrix of the chosen sampler, matching its per-step
/// categorical probabilities entry for entry. RSGS: P = sum alpha_s P_s;
/// periodic: P = P_s1 P_s2 ... P_sV in sweep order (row-vector convention).
inline TransitionMatrix build_kernel(
    const JointDistribution& dist, SamplerKind kind,
    std::optional<AlphaVector> alpha = std::nullopt,
    std::optional<std::vector<std::string>> sweep_order = std::nullopt,
    std::size_t state_limit = kKernelStateLimit) {
  const CompiledModel& cm = *dist.compiled;
  TransitionMatrix k = detail::kernel_base(dist, state_limit);
  k.kind = kind;
  const std::size_t n = k.states.size();

  if (kind == SamplerKind::rsgs) {
    if (sweep_order)
      throw UsageError(codes::config, "sweep_order applies to the periodic sampler only");
    std::vector<double> alpha_chain =
        compile_alpha(cm, alpha ? *alpha : AlphaVector::uniform(cm.model()));
    k.p.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t pos = 0; pos < alpha_chain.size(); ++pos) {
      detail::Matrix ps = detail::site_kernel(k, cm.chain()[pos]);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (ps[i][j] != 0.0) k.p[i][j] += alpha_chain[pos] * ps[i][j];
    }
  } else {
    if (alpha)
      throw UsageError(codes::config, "alpha applies to the random-scan sampler only");
    std::vector<int> order = compile_sweep_order(cm, sweep_order);
    k.p = detail::site_kernel(k, order[0]);
    for (std::size_t i = 1; i < order.size(); ++i)
      k.p = detail::multiply(k.p, detail::site_kernel(k, order[i]));
  }
  return k;
}

inline TransitionMatrix build_kernel(
    const UsageModel& model, SamplerKind kind,
    std::optional<AlphaVector> alpha = std::nullopt,
    std::optional<std::vector<std::string>> sweep_order = std::nullopt,
    std::size_t enumeration_limit = kDefaultEnumerationLimit,
    std::size_t state_limit = kKernelStateLimit) {
  return build_kernel(joint_distribution(model, enumeration_limit), kind,
                      std::move(alpha), std::move(sweep_order), state_limit);
}

/// Dobrushin ergodic coefficient: 1 - min over state pairs of the row
/// overlap sum_k min(p_ik, p_jk). 0 when all rows coincide (or there are
/// fewer than two states), 1 when two rows are disjoint.
inline double dobrushin(const std::vector<std::vector<double>>& p) {
  double min_overlap = 1.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      double overlap = 0.0;
      for (std::size_t c = 0; c < p[i].size(); ++c)
        overlap += std::min(p[i][c], p[j][c]);
      min_overlap = std::min(min_overlap, overlap);
    }
  return 1.0 - min_overlap;
}

inline double dobrushin(const TransitionMatrix& k) { return dobrushin(k.p); }

/// Total variation distance, half the L1 gap.
inline double tv_distance(const std::vector<double>& mu, const std::vector<double>& nu) {
  if (mu.size() != nu.size())
    throw UsageError(codes::shape, "distributions must have equal length");
  double sum = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) sum += std::abs(mu[i] - nu[i]);
  return 0.5 * sum;
}

struct ContractionRow {
  std::uint64_t n;
  double measured;    // TV(mu0 P^n, pi)
  double bound;       // dobrushin^n * TV(mu0, pi)
  double half_bound;  // reported alongside, never asserted
};

struct DiagnosticsReport {
  SamplerKind kind = SamplerKind::rsgs;
  std::size_t state_count = 0;
  std::size_t support_size = 0;
  double stationarity_residual = 0.0;  // max |pi P - pi|
  std::optional<double> detailed_balance_residual;  // rsgs kernels only
  double dobrushin_coefficient = 0.0;
  bool ergodic = false;
  bool contraction_ok = true;  // measured <= bound + 1e-12 on every row
  std::vector<ContractionRow> contraction_table;
};

inline constexpr double kContractionSlack = 1e-12;

namespace detail {

// irreducibility and aperiodicity of the positive-entry digraph
inline bool kernel_ergodic(const Matrix& p) {
  const std::size_t n = p.size();
  if (n == 0) return false;
  auto reach = [&](bool transpose) {
    std::vector<char> seen(n, 0);
    std::vector<std::size_t> queue{0};
    seen[0] = 1;
    while (!queue.empty()) {
      std::size_t u = queue.back();
      queue.pop_back();
      for (std::size_t v = 0; v < n; ++v)
        if (!seen[v] && (transpose ? p[v][u] : p[u][v]) > 0.0) {
          seen[v] = 1;
          queue.push_back(v);
        }
    }
    return seen;
  };
  std::vector<char> fwd = reach(false), bwd = reach(true);
  for (std::size_t i = 0; i < n; ++i)
    if (!fwd[i] || !bwd[i]) return false;

  // period: gcd of dist[u] + 1 - dist[v] over positive edges, BFS from 0
  std::vector<long long> dist(n, -1);
  std::vector<std::size_t> queue{0};
  dist[0] = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    std::size_t u = queue[head];
    for (std::size_t v = 0; v < n; ++v)
      if (p[u][v] > 0.0 && dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
  }
  long long g = 0;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v)
      if (p[u][v] > 0.0) g = std::gcd(g, std::llabs(dist[u] + 1 - dist[v]));
  return g == 1;
}

}  // namespace detail

/// Full kernel report: stationarity and reversibility residuals, Dobrushin
/// coefficient, ergodicity, and the contraction table for n = 1..n_max
/// against the geometric bound. mu0 defaults to a point mass on the first
/// state in lexicographic order.
inline DiagnosticsReport diagnostics(const TransitionMatrix& k,
                                     std::optional<std::vector<double>> mu0 = std::nullopt,
                                     std::uint64_t n_max = 50) {
  const std::size_t n = k.states.size();
  std::vector<double> mu;
  if (mu0) {
    if (mu0->size() != n)
      throw UsageError(codes::shape, "mu0 must cover every kernel state");
    double sum = std::accumulate(mu0->begin(), mu0->end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9)
      throw UsageError(codes::shape, "mu0 must sum to 1");
    mu = *mu0;
  } else {
    mu.assign(n, 0.0);
    mu[0] = 1.0;
  }

  DiagnosticsReport report;
  report.kind = k.kind;
  report.state_count = n;
  for (double v : k.pi)
    if (v > 0.0) ++report.support_size;

  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += k.pi[i] * k.p[i][j];
    report.stationarity_residual =
        std::max(report.stationarity_residual, std::abs(acc - k.pi[j]));
  }
  if (k.kind == SamplerKind::rsgs) {
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        r = std::max(r, std::abs(k.pi[i] * k.p[i][j] - k.pi[j] * k.p[j][i]));
    report.detailed_balance_residual = r;
  }
  report.dobrushin_coefficient = dobrushin(k);
  report.ergodic = detail::kernel_ergodic(k.p);

  const double tv0 = tv_distance(mu, k.pi);
  double bound_factor = 1.0;
  for (std::uint64_t step = 1; step <= n_max; ++step) {
    std::vector<double> next(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (mu[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) next[j] += mu[i] * k.p[i][j];
    }
    mu = std::move(next);
    bound_factor *= report.dobrushin_coefficient;
    ContractionRow row{step, tv_distance(mu, k.pi), bound_factor * tv0,
                       0.5 * bound_factor * tv0};
    if (row.measured > row.bound + kContractionSlack) report.contraction_ok = false;
    report.contraction_table.push_back(row);
  }
  return report;
}

inline DiagnosticsReport diagnostics(
    const UsageModel& model, SamplerKind kind,
    std::optional<AlphaVector> alpha = std::nullopt,
    std::optional<std::vector<std::string>> sweep_order = std::nullopt,
    std::optional<std::vector<double>> mu0 = std::nullopt, std::uint64_t n_max = 50,
    std::size_t enumeration_limit = kDefaultEnumerationLimit) {
  return diagnostics(build_kernel(model, kind, std::move(alpha),
                                  std::move(sweep_order), enumeration_limit),
                     std::move(mu0), n_max);
}

struct AlphaSearchResult {
  AlphaVector alpha;
  double dobrushin = 0.0;
  std::uint64_t evaluations = 0;
};

inline constexpr std::uint64_t kDefaultAlphaBudget = 200;

/// Minimizes the Dobrushin coefficient of the RSGS kernel over the site
/// probabilities: coordinate search on the simplex from the uniform vector
/// with step halving, stopping at the evaluation budget or step < 1e-4.
/// delta(P(alpha)) is convex (a max of affine functions of alpha), so the
/// search converges to the global optimum; the uniform start is always a
/// candidate, so the result never loses to it.
inline AlphaSearchResult optimize_alpha(const UsageModel& model,
                                        std::uint64_t budget = kDefaultAlphaBudget,
                                        std::size_t enumeration_limit = kDefaultEnumerationLimit,
                                        std::size_t state_limit = kKernelStateLimit) {
  JointDistribution dist = joint_distribution(model, enumeration_limit);
  const CompiledModel& cm = *dist.compiled;
  const std::size_t V = static_cast<std::size_t>(cm.param_count());

  TransitionMatrix base = detail::kernel_base(dist, state_limit);
  base.kind = SamplerKind::rsgs;
  std::vector<detail::Matrix> site(V);
  for (std::size_t pos = 0; pos < V; ++pos)
    site[pos] = detail::site_kernel(base, cm.chain()[pos]);

  const std::size_t n = base.states.size();
  auto eval = [&](const std::vector<double>& a) {
    detail::Matrix p(n, std::vector<double>(n, 0.0));
    for (std::size_t pos = 0; pos < V; ++pos)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (site[pos][i][j] != 0.0) p[i][j] += a[pos] * site[pos][i][j];
    return dobrushin(p);
  };
  auto to_alpha_vector = [&](const std::vector<double>& a) {
    AlphaVector out;
    for (std::size_t pos = 0; pos < V; ++pos)
      out.alpha[cm.param_id(cm.chain()[pos])] = a[pos];
    return out;
  };

  if (V == 1) {
    AlphaSearchResult r;
    r.alpha.alpha[cm.param_id(0)] = 1.0;
    r.dobrushin = eval({1.0});
    r.evaluations = 1;
    return r;
  }

  auto project = [&](std::vector<double> a) {
    double sum = 0.0;
    for (double& v : a) {
      v = std::max(v, 1e-6);
      sum += v;
    }
    for (double& v : a) v /= sum;
    return a;
  };

  std::vector<double> best(V, 1.0 / static_cast<double>(V));
  double best_delta = eval(best);
  std::uint64_t evals = 1;
  double step = 0.25;
  while (step >= 1e-4 && evals < budget) {
    bool improved = false;
    for (std::size_t pos = 0; pos < V && evals < budget; ++pos) {
      for (double sign : {1.0, -1.0}) {
        if (evals >= budget) break;
        std::vector<double> cand = best;
        cand[pos] += sign * step;
        cand = project(cand);
        double d = eval(cand);
        ++evals;
        if (d < best_delta - 1e-15) {
          best = cand;
          best_delta = d;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }

  AlphaSearchResult r;
  r.alpha = to_alpha_vector(best);
  r.dobrushin = best_delta;
  r.evaluations = evals;
  return r;
}

}  // namespace usagegen
