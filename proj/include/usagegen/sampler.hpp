#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "usagegen/exact.hpp"
#include "usagegen/model.hpp"
#include "usagegen/model_io.hpp"
#include "usagegen/rng.hpp"

namespace usagegen {

// Site-selection probabilities for the random-scan sampler. Defaults to
// uniform; every entry must be strictly inside (0, 1) when the model has two
// or more parameters, and the entries must sum to 1 within 1e-12.
struct AlphaVector {
  std::map<std::string, double> alpha;

  static AlphaVector uniform(const UsageModel& model) {
    AlphaVector a;
    for (const auto& p : model.parameters)
      a.alpha[p.id] = 1.0 / static_cast<double>(model.parameters.size());
    return a;
  }
};

inline constexpr double kAlphaSumTolerance = 1e-12;

// Alpha entries arranged in chain order, validated.
inline std::vector<double> compile_alpha(const CompiledModel& cm,
                                         const AlphaVector& alpha) {
  const std::size_t V = static_cast<std::size_t>(cm.param_count());
  if (alpha.alpha.size() != V)
    throw UsageError(codes::alpha, "alpha must assign exactly one weight per parameter");
  std::vector<double> out(V);
  double sum = 0.0;
  for (const auto& [id, v] : alpha.alpha) {
    int p = cm.param_index(id);  // throws E_UNKNOWN_REF on a stray id
    if (V == 1 ? std::abs(v - 1.0) > kAlphaSumTolerance
               : !(v > 0.0 && v < 1.0))
      throw UsageError(codes::alpha, "alpha for '" + id + "' must lie strictly in (0, 1)");
    out[cm.chain_pos(p)] = v;
    sum += v;
  }
  if (std::abs(sum - 1.0) > kAlphaSumTolerance)
    throw UsageError(codes::alpha, "alpha entries must sum to 1");
  return out;
}

// Sweep order as parameter indices; defaults to chain order.
inline std::vector<int> compile_sweep_order(
    const CompiledModel& cm, const std::optional<std::vector<std::string>>& order) {
  if (!order) return cm.chain();
  std::vector<int> sites;
  std::set<int> seen;
  for (const auto& id : *order) {
    int p = cm.param_index(id);
    if (!seen.insert(p).second)
      throw UsageError(codes::config, "sweep_order names '" + id + "' more than once");
    sites.push_back(p);
  }
  if (sites.size() != static_cast<std::size_t>(cm.param_count()))
    throw UsageError(codes::config, "sweep_order must name every parameter");
  return sites;
}

enum class SamplerKind { rsgs, periodic };

inline std::string to_string(SamplerKind kind) {
  return kind == SamplerKind::rsgs ? "rsgs" : "periodic";
}

struct SamplerConfig {
  SamplerKind kind = SamplerKind::rsgs;
  std::optional<AlphaVector> alpha;                     // rsgs only
  std::optional<std::vector<std::string>> sweep_order;  // periodic only
  std::optional<std::uint64_t> burn_in;  // default 1000 steps / 100 sweeps
  std::uint64_t thinning = 1;
  std::uint64_t n_samples = 0;
  std::uint64_t seed = 0;
};

inline constexpr std::uint64_t kDefaultBurnInRsgs = 1000;
inline constexpr std::uint64_t kDefaultBurnInPeriodic = 100;

struct Trace {
  std::vector<Configuration> samples;
  SamplerConfig config;  // as run, with defaults resolved
  Configuration initial;
  std::uint64_t total_steps = 0;
};

/// Unnormalized conditional weights of `site`'s classes given the rest of
/// `config`: the product of the CPT factors touching the site, zeroed where
/// a forbidden item touching the site would be completed. Never enumerates.
inline std::vector<double> local_conditional_weights(const CompiledModel& cm,
                                                     const Configuration& config,
                                                     int site) {
  std::vector<double> w(cm.class_count(site));
  Configuration probe = config;
  for (ClassIndex c = 0; c < w.size(); ++c) {
    probe.classes[site] = c;
    double v = cm.row_for(site, probe)[c];
    for (int child : cm.children(site)) {
      if (v == 0.0) break;
      v *= cm.row_for(child, probe)[probe.classes[child]];
    }
    if (v > 0.0)
      for (int ci : cm.constraints_touching(site))
        if (cm.satisfies(cm.constraints()[ci], probe)) { v = 0.0; break; }
    w[c] = v;
  }
  return w;
}

/// A Gibbs chain over the model's configurations. Construction consumes one
/// uniform draw per parameter for the forward-sampled initial state; each
/// random-scan step consumes one site draw plus one class draw, and each
/// periodic sweep one class draw per site. The stream is fully determined
/// by the seed.
class GibbsChain {
 public:
  GibbsChain(std::shared_ptr<const CompiledModel> cm, std::uint64_t seed)
      : cm_(std::move(cm)), rng_(seed) {
    forward_sample_initial();
  }

  const Configuration& state() const { return state_; }

  void set_state(const Configuration& config) {
    const CompiledModel& cm = *cm_;
    if (config.classes.size() != static_cast<std::size_t>(cm.param_count()))
      throw UsageError(codes::shape, "state must assign every parameter");
    for (int p = 0; p < cm.param_count(); ++p)
      if (config.classes[p] >= cm.class_count(p))
        throw UsageError(codes::shape,
                         "class index out of range for parameter '" + cm.param_id(p) + "'");
    state_ = config;
  }

  // One random-scan transition; alpha_chain is indexed by chain position.
  void rsgs_step(const std::vector<double>& alpha_chain) {
    std::size_t k = draw_categorical(rng_, alpha_chain);
    resample_site(cm_->chain()[k]);
  }

  // One periodic transition: a full sweep in the given site order.
  void sweep(const std::vector<int>& site_order) {
    for (int s : site_order) resample_site(s);
  }

 private:
  void forward_sample_initial() {
    const CompiledModel& cm = *cm_;
    state_.classes.assign(cm.param_count(), 0);
    std::vector<bool> assigned(cm.param_count(), false);
    for (int s : cm.chain()) {
      std::vector<double> w{cm.row_for(s, state_).begin(), cm.row_for(s, state_).end()};
      // drop classes that would complete a forbidden item against the prefix
      for (ClassIndex c = 0; c < w.size(); ++c) {
        if (w[c] == 0.0) continue;
        for (int ci : cm.constraints_touching(s)) {
          const auto& con = cm.constraints()[ci];
          bool completes = true;
          for (auto [p, cls] : con.entries) {
            if (p == s ? cls != c : !(assigned[p] && state_.classes[p] == cls)) {
              completes = false;
              break;
            }
          }
          if (completes) { w[c] = 0.0; break; }
        }
      }
      double total = 0.0;
      for (double v : w) total += v;
      if (!(total > 0.0))
        throw UsageError(codes::infeasible,
                         "forward sampling dead-ends at parameter '" +
                             cm.param_id(s) + "'");
      state_.classes[s] = static_cast<ClassIndex>(draw_categorical(rng_, w));
      assigned[s] = true;
    }
  }

  void resample_site(int s) {
    std::vector<double> w = local_conditional_weights(*cm_, state_, s);
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0))
      throw UsageError(codes::stuck,
                       "conditional of parameter '" + cm_->param_id(s) +
                           "' has no admissible class from the current state");
    state_.classes[s] = static_cast<ClassIndex>(draw_categorical(rng_, w));
  }

  std::shared_ptr<const CompiledModel> cm_;
  Configuration state_;
  Xoshiro256StarStar rng_;
};

/// Forward-samples one feasible configuration along chain_order, at each
/// parameter drawing from its CPT row renormalized over the classes that do
/// not complete a forbidden item against the choices so far.
inline Configuration initial_state(std::shared_ptr<const CompiledModel> cm,
                                   std::uint64_t seed) {
  return GibbsChain(std::move(cm), seed).state();
}

inline Configuration initial_state(const UsageModel& model, std::uint64_t seed) {
  return initial_state(std::make_shared<const CompiledModel>(model), seed);
}

namespace detail {

inline Trace run_chain(std::shared_ptr<const CompiledModel> compiled,
                       SamplerConfig cfg) {
  const CompiledModel& cm = *compiled;
  if (cfg.thinning == 0)
    throw UsageError(codes::config, "thinning must be at least 1");

  std::vector<double> alpha_chain;
  std::vector<int> site_order;
  if (cfg.kind == SamplerKind::rsgs) {
    if (cfg.sweep_order)
      throw UsageError(codes::config, "sweep_order applies to the periodic sampler only");
    if (!cfg.alpha) cfg.alpha = AlphaVector::uniform(cm.model());
    alpha_chain = compile_alpha(cm, *cfg.alpha);
    if (!cfg.burn_in) cfg.burn_in = kDefaultBurnInRsgs;
  } else {
    if (cfg.alpha)
      throw UsageError(codes::config, "alpha applies to the random-scan sampler only");
    site_order = compile_sweep_order(cm, cfg.sweep_order);
    if (!cfg.sweep_order) cfg.sweep_order = cm.model().chain_order;
    if (!cfg.burn_in) cfg.burn_in = kDefaultBurnInPeriodic;
  }

  GibbsChain chain(compiled, cfg.seed);
  Trace trace;
  trace.initial = chain.state();
  trace.config = cfg;
  if (cfg.n_samples == 0) return trace;

  const std::uint64_t burn = *cfg.burn_in;
  const std::uint64_t total = burn + (cfg.n_samples - 1) * cfg.thinning + 1;
  trace.samples.reserve(cfg.n_samples);
  for (std::uint64_t t = 1; t <= total; ++t) {
    if (cfg.kind == SamplerKind::rsgs)
      chain.rsgs_step(alpha_chain);
    else
      chain.sweep(site_order);
    if (t > burn && (t - burn - 1) % cfg.thinning == 0)
      trace.samples.push_back(chain.state());
  }
  trace.total_steps = total;
  return trace;
}

}  // namespace detail

inline Trace rsgs_run(std::shared_ptr<const CompiledModel> cm, SamplerConfig cfg) {
  if (cfg.kind != SamplerKind::rsgs)
    throw UsageError(codes::config, "rsgs_run requires kind = rsgs");
  return detail::run_chain(std::move(cm), std::move(cfg));
}

inline Trace rsgs_run(const UsageModel& model, SamplerConfig cfg) {
  return rsgs_run(std::make_shared<const CompiledModel>(model), std::move(cfg));
}

inline Trace periodic_run(std::shared_ptr<const CompiledModel> cm, SamplerConfig cfg) {
  if (cfg.kind != SamplerKind::periodic)
    throw UsageError(codes::config, "periodic_run requires kind = periodic");
  return detail::run_chain(std::move(cm), std::move(cfg));
}

inline Trace periodic_run(const UsageModel& model, SamplerConfig cfg) {
  return periodic_run(std::make_shared<const CompiledModel>(model), std::move(cfg));
}

/// Tab-separated trace: a '#' metadata block, a header of parameter ids in
/// chain order, then one configuration per line.
inline std::string export_trace(const Trace& trace, const CompiledModel& cm) {
  std::string out;
  out += "# usage-trace\n";
  out += "# model: " + cm.model().name + "\n";
  out += "# digest: " + model_digest(cm.model()) + "\n";
  out += "# sampler: " + to_string(trace.config.kind) + "\n";
  out += "# seed: " + std::to_string(trace.config.seed) + "\n";
  out += "# burn_in: " + std::to_string(trace.config.burn_in.value_or(0)) + "\n";
  out += "# thinning: " + std::to_string(trace.config.thinning) + "\n";
  out += "# n_samples: " + std::to_string(trace.config.n_samples) + "\n";
  if (trace.config.alpha) {
    out += "# alpha: ";
    bool first = true;
    for (int s : cm.chain()) {
      out += (first ? "" : ",") + cm.param_id(s) + "=" +
             detail::fmt_real(trace.config.alpha->alpha.at(cm.param_id(s)));
      first = false;
    }
    out += "\n";
  }
  if (trace.config.sweep_order) {
    out += "# sweep_order: ";
    for (std::size_t i = 0; i < trace.config.sweep_order->size(); ++i)
      out += (i ? "," : "") + (*trace.config.sweep_order)[i];
    out += "\n";
  }
  out += "# initial: ";
  {
    bool first = true;
    for (int s : cm.chain()) {
      out += (first ? "" : ",") + cm.class_id(s, trace.initial.classes[s]);
      first = false;
    }
    out += "\n";
  }
  out += "# total_steps: " + std::to_string(trace.total_steps) + "\n";

  bool first = true;
  for (int s : cm.chain()) {
    out += (first ? "" : "\t") + cm.param_id(s);
    first = false;
  }
  out += "\n";
  for (const auto& sample : trace.samples) {
    first = true;
    for (int s : cm.chain()) {
      out += (first ? "" : "\t") + cm.class_id(s, sample.classes[s]);
      first = false;
    }
    out += "\n";
  }
  return out;
}

}  // namespace usagegen
