#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "usagegen/model.hpp"

namespace usagegen {

// ---------------------------------------------------------------------------
// Exact enumeration engine. Serves as the oracle the samplers are verified
// against; everything here is brute force over the feasible space, bounded by
// an explicit limit.
// ---------------------------------------------------------------------------

// The support (configs/probs) holds every feasible configuration with
// positive probability, in lexicographic order by chain position and class
// order. Feasible configurations whose chain product is zero are kept apart:
// they can never be sampled, but they are legitimate sampler states.
struct JointDistribution {
  std::shared_ptr<const CompiledModel> compiled;
  std::vector<Configuration> configs;
  std::vector<double> probs;
  std::vector<Configuration> zero_mass_feasible;
  double z_raw = 0.0;
  double temperature = 1.0;

  const CompiledModel& cm() const { return *compiled; }

  std::optional<std::size_t> index_of(const Configuration& c) const {
    auto it = std::lower_bound(configs.begin(), configs.end(), c,
                               [&](const Configuration& a, const Configuration& b) {
                                 return compiled->lex_less(a, b);
                               });
    if (it == configs.end() || !(*it == c)) return std::nullopt;
    return static_cast<std::size_t>(it - configs.begin());
  }

  double prob_of(const Configuration& c) const {
    auto i = index_of(c);
    return i ? probs[*i] : 0.0;
  }
};

namespace detail {

// Depth-first walk of the product space along chain_order with constraint
// pruning. visit(config, chain_product) is called once per feasible leaf.
template <typename Visit>
void enumerate_feasible(const CompiledModel& cm, Visit&& visit) {
  const auto& chain = cm.chain();
  const int V = cm.param_count();

  // constraints checked at the chain position where their last parameter is
  // assigned; partial matches are decided as early as possible
  std::vector<std::vector<int>> completes_at(V);
  for (std::size_t ci = 0; ci < cm.constraints().size(); ++ci) {
    int last = 0;
    for (auto [p, _] : cm.constraints()[ci].entries)
      last = std::max(last, cm.chain_pos(p));
    completes_at[last].push_back(static_cast<int>(ci));
  }

  Configuration config;
  config.classes.assign(V, 0);
  auto dfs = [&](auto&& self, int depth, double product) -> void {
    if (depth == V) {
      visit(config, product);
      return;
    }
    int s = chain[depth];
    const auto& row = cm.row_for(s, config);
    for (ClassIndex c = 0; c < cm.class_count(s); ++c) {
      config.classes[s] = c;
      bool blocked = false;
      for (int ci : completes_at[depth])
        if (cm.satisfies(cm.constraints()[ci], config)) { blocked = true; break; }
      if (blocked) continue;
      self(self, depth + 1, product * row[c]);
    }
  };
  dfs(dfs, 0, 1.0);
}

}  // namespace detail

/// Joint probability over all feasible configurations: the chain product
/// along chain_order, hard zeros on forbidden combinations, one global
/// renormalization. z_raw is the pre-renormalization feasible mass.
inline JointDistribution joint_distribution(
    std::shared_ptr<const CompiledModel> compiled,
    std::size_t limit = kDefaultEnumerationLimit) {
  JointDistribution dist;
  dist.compiled = compiled;
  dist.temperature = compiled->model().temperature;

  std::size_t count = 0;
  std::vector<double> raw;
  detail::enumerate_feasible(*compiled, [&](const Configuration& c, double p) {
    if (++count > limit)
      throw UsageError(codes::too_large,
                       "enumeration exceeded the limit of " + std::to_string(limit) +
                           " feasible configurations (at least " +
                           std::to_string(count) + " exist)");
    if (p > 0.0) {
      dist.configs.push_back(c);
      raw.push_back(p);
      dist.z_raw += p;
    } else {
      dist.zero_mass_feasible.push_back(c);
    }
  });

  if (dist.configs.empty())
    throw UsageError(codes::infeasible,
                     "no feasible configuration has positive probability");
  dist.probs.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) dist.probs[i] = raw[i] / dist.z_raw;
  return dist;
}

inline JointDistribution joint_distribution(
    const UsageModel& model, std::size_t limit = kDefaultEnumerationLimit) {
  return joint_distribution(std::make_shared<const CompiledModel>(model), limit);
}

/// Marginal distribution of one parameter, in its class order.
inline std::vector<double> marginal(const JointDistribution& dist,
                                    const std::string& site) {
  int s = dist.cm().param_index(site);
  std::vector<double> out(dist.cm().class_count(s), 0.0);
  for (std::size_t i = 0; i < dist.configs.size(); ++i)
    out[dist.configs[i].classes[s]] += dist.probs[i];
  return out;
}

/// Conditional distribution of `site` given every other coordinate of
/// `context` (the context's own value at `site` is ignored).
inline std::vector<double> full_conditional(const JointDistribution& dist,
                                            const std::string& site,
                                            const Configuration& context) {
  int s = dist.cm().param_index(site);
  if (context.classes.size() != static_cast<std::size_t>(dist.cm().param_count()))
    throw UsageError(codes::shape, "context must assign every parameter");
  std::vector<double> out(dist.cm().class_count(s), 0.0);
  Configuration probe = context;
  double total = 0.0;
  for (ClassIndex c = 0; c < out.size(); ++c) {
    probe.classes[s] = c;
    out[c] = dist.prob_of(probe);
    total += out[c];
  }
  if (!(total > 0.0))
    throw UsageError(codes::zero_context,
                     "every completion of the context at '" + site +
                         "' has probability 0");
  for (double& v : out) v /= total;
  return out;
}

/// Energy of a configuration under the Gibbs form pi(x) = exp(-U(x)/T)/Z_T:
/// U(x) = -T ln pi(x) for support members, +infinity otherwise.
inline double energy_of(const JointDistribution& dist, const Configuration& config) {
  double p = dist.prob_of(config);
  if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
  return -dist.temperature * std::log(p);
}

struct EnergyView {
  const JointDistribution* dist;
  double z_t;  // sum of exp(-U(x)/T) over the support

  double energy(const Configuration& config) const { return energy_of(*dist, config); }
  double gibbs_probability(const Configuration& config) const {
    double u = energy(config);
    if (std::isinf(u)) return 0.0;
    return std::exp(-u / dist->temperature) / z_t;
  }
};

inline EnergyView energy_view(const JointDistribution& dist) {
  EnergyView view{&dist, 0.0};
  for (const auto& c : dist.configs)
    view.z_t += std::exp(-energy_of(dist, c) / dist.temperature);
  return view;
}

/// Max L-infinity gap, over sites and positive-mass contexts, between the
/// conditional given all other sites and the conditional given only the
/// site's declared neighbors. A result <= 1e-12 certifies that the
/// distribution is a Markov random field for the given neighborhood system.
inline double verify_markov_locality(const JointDistribution& dist,
                                     const NeighborhoodSystem& nbhd) {
  const CompiledModel& cm = dist.cm();
  double residual = 0.0;
  for (int s = 0; s < cm.param_count(); ++s) {
    std::vector<int> neigh;
    auto it = nbhd.neighbors.find(cm.param_id(s));
    if (it != nbhd.neighbors.end())
      for (const auto& id : it->second) neigh.push_back(cm.param_index(id));
    std::sort(neigh.begin(), neigh.end());

    // accumulate per neighborhood projection: key -> mass by class of s
    std::map<std::vector<ClassIndex>, std::vector<double>> groups;
    for (std::size_t i = 0; i < dist.configs.size(); ++i) {
      std::vector<ClassIndex> key;
      key.reserve(neigh.size());
      for (int t : neigh) key.push_back(dist.configs[i].classes[t]);
      auto [g, _] = groups.try_emplace(key, std::vector<double>(cm.class_count(s), 0.0));
      g->second[dist.configs[i].classes[s]] += dist.probs[i];
    }

    for (std::size_t i = 0; i < dist.configs.size(); ++i) {
      std::vector<double> cond_all =
          full_conditional(dist, cm.param_id(s), dist.configs[i]);
      std::vector<ClassIndex> key;
      for (int t : neigh) key.push_back(dist.configs[i].classes[t]);
      const std::vector<double>& g = groups.at(key);
      double mass = 0.0;
      for (double v : g) mass += v;
      for (std::size_t c = 0; c < g.size(); ++c)
        residual = std::max(residual, std::abs(cond_all[c] - g[c] / mass));
    }
  }
  return residual;
}

/// The k highest-probability configurations, descending; ties broken by
/// lexicographic configuration order.
inline std::vector<std::pair<Configuration, double>> top_k(
    const JointDistribution& dist, std::size_t k) {
  std::vector<std::size_t> order(dist.configs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist.probs[a] > dist.probs[b];
  });
  std::vector<std::pair<Configuration, double>> out;
  for (std::size_t i = 0; i < order.size() && i < k; ++i)
    out.emplace_back(dist.configs[order[i]], dist.probs[order[i]]);
  return out;
}

struct PositivityResult {
  bool positive = false;        // every configuration of the product space has mass
  std::uint64_t zero_mass = 0;  // configurations of the product space with pi(x) = 0
};

/// Positivity condition over the full product space: holds iff no constraint
/// and no CPT zero removes mass from any configuration.
inline PositivityResult check_positivity(const JointDistribution& dist,
                                         std::size_t limit = kDefaultEnumerationLimit) {
  const CompiledModel& cm = dist.cm();
  std::uint64_t lambda = 1;
  for (int p = 0; p < cm.param_count(); ++p) {
    std::uint64_t c = cm.class_count(p);
    if (lambda > static_cast<std::uint64_t>(limit) * 2 + 1)  // avoid overflow
      throw UsageError(codes::too_large,
                       "product space exceeds the limit of " + std::to_string(limit) +
                           " configurations");
    lambda *= c;
  }
  if (lambda > limit)
    throw UsageError(codes::too_large,
                     "product space has " + std::to_string(lambda) +
                         " configurations, above the limit of " + std::to_string(limit));
  PositivityResult result;
  result.zero_mass = lambda - dist.configs.size();
  result.positive = result.zero_mass == 0;
  return result;
}

// ---------------------------------------------------------------------------
// Macro-parameter merging
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join_plus(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "+" : "") + parts[i];
  return out;
}

inline std::string unique_token(std::string base, const std::set<std::string>& taken) {
  if (!taken.count(base)) return base;
  for (int k = 2;; ++k) {
    std::string cand = base + "_" + std::to_string(k);
    if (!taken.count(cand)) return cand;
  }
}

}  // namespace detail

/// Replaces `ids` with one macro-parameter whose classes are the class
/// tuples allowed by the constraints internal to `ids`. The macro CPT rows
/// are the per-context products of the member CPT entries, conditioned on
/// the surviving tuples; member children keep their tables, projected onto
/// tuples. Succeeds only when the merged model reproduces the original joint
/// exactly (within 1e-12 under the tuple identification); otherwise the
/// merge is refused rather than approximated.
inline UsageModel merge_parameters(const UsageModel& model,
                                   const std::vector<std::string>& ids,
                                   std::size_t limit = kDefaultEnumerationLimit) {
  auto compiled = std::make_shared<const CompiledModel>(model);
  const CompiledModel& cm = *compiled;

  if (ids.empty())
    throw UsageError(codes::merge_scope, "no parameters named for merging");
  std::set<int> members;
  for (const auto& id : ids)
    if (!members.insert(cm.param_index(id)).second)
      throw UsageError(codes::merge_scope,
                       "parameter '" + id + "' named twice for merging");

  // joint of the original model, also the verification reference
  JointDistribution original = joint_distribution(compiled, limit);

  // members in chain order define the tuple component order
  std::vector<int> member_order;
  for (int s : cm.chain())
    if (members.count(s)) member_order.push_back(s);

  // contracted dependency graph; a cycle through the macro node means the
  // members cannot be adjacent in any valid chain order
  const int V = cm.param_count();
  const int macro_node = V;  // members map to this node
  auto node_of = [&](int p) { return members.count(p) ? macro_node : p; };
  std::vector<std::set<int>> succ(V + 1);
  std::vector<int> indeg(V + 1, 0);
  for (int child = 0; child < V; ++child)
    for (int parent : cm.cpt(child).parents) {
      int a = node_of(parent), b = node_of(child);
      if (a != b && succ[a].insert(b).second) ++indeg[b];
    }
  std::vector<int> priority(V + 1);
  for (int p = 0; p < V; ++p) priority[p] = cm.chain_pos(p);
  priority[macro_node] = cm.chain_pos(member_order.front());

  std::vector<int> topo;
  {
    std::set<std::pair<int, int>> ready;  // (priority, node)
    for (int n = 0; n <= V; ++n)
      if (indeg[n] == 0 && (n == macro_node || !members.count(n)))
        ready.insert({priority[n], n});
    while (!ready.empty()) {
      auto [_, n] = *ready.begin();
      ready.erase(ready.begin());
      topo.push_back(n);
      for (int m : succ[n])
        if (--indeg[m] == 0) ready.insert({priority[m], m});
    }
    std::size_t expected = static_cast<std::size_t>(V) - members.size() + 1;
    if (topo.size() != expected)
      throw UsageError(codes::merge_scope,
                       "merging these parameters would create a dependency cycle");
  }

  // constraint split: internal items are absorbed into the class list,
  // cross items are rewritten over the macro parameter, external items kept
  std::vector<const ForbiddenItem*> internal_items, cross_items, external_items;
  for (const auto& item : model.constraints.forbidden) {
    bool any_in = false, any_out = false;
    for (const auto& [pid, _] : item.entries)
      (members.count(cm.param_index(pid)) ? any_in : any_out) = true;
    if (any_in && any_out) cross_items.push_back(&item);
    else if (any_in) internal_items.push_back(&item);
    else external_items.push_back(&item);
  }

  // feasible tuples, lexicographic in member chain order
  struct Tuple {
    std::vector<ClassIndex> classes;  // parallel to member_order
    std::string id;
  };
  std::vector<Tuple> tuples;
  {
    std::vector<ClassIndex> t(member_order.size(), 0);
    std::set<std::string> taken;
    auto rec = [&](auto&& self, std::size_t d) -> void {
      if (d == member_order.size()) {
        for (const ForbiddenItem* item : internal_items) {
          bool all = true;
          for (const auto& [pid, cid] : item->entries) {
            int p = cm.param_index(pid);
            std::size_t k = std::find(member_order.begin(), member_order.end(), p) -
                            member_order.begin();
            if (cm.class_id(p, t[k]) != cid) { all = false; break; }
          }
          if (all) return;  // tuple absorbed by an internal constraint
        }
        std::vector<std::string> parts;
        for (std::size_t k = 0; k < member_order.size(); ++k)
          parts.push_back(cm.class_id(member_order[k], t[k]));
        Tuple tp{t, detail::unique_token(detail::join_plus(parts), taken)};
        taken.insert(tp.id);
        tuples.push_back(std::move(tp));
        return;
      }
      for (ClassIndex c = 0; c < cm.class_count(member_order[d]); ++c) {
        t[d] = c;
        self(self, d + 1);
      }
    };
    rec(rec, 0);
  }
  if (tuples.empty())
    throw UsageError(codes::merge_scope,
                     "constraints leave no feasible class tuple for the merge");

  std::set<std::string> param_ids_taken;
  for (int p = 0; p < V; ++p)
    if (!members.count(p)) param_ids_taken.insert(cm.param_id(p));
  std::vector<std::string> member_ids;
  for (int p : member_order) member_ids.push_back(cm.param_id(p));
  const std::string macro_id =
      detail::unique_token(detail::join_plus(member_ids), param_ids_taken);

  // external parents of the macro parameter, in original chain order
  std::vector<int> macro_parents;
  for (int s : cm.chain()) {
    if (members.count(s)) continue;
    bool is_parent = false;
    for (int m : member_order)
      for (int parent : cm.cpt(m).parents)
        if (parent == s) is_parent = true;
    if (is_parent) macro_parents.push_back(s);
  }

  UsageModel merged;
  merged.name = model.name;
  merged.temperature = model.temperature;

  // parameters: originals in declaration order with the macro parameter in
  // place of the first member encountered
  Parameter macro;
  macro.id = macro_id;
  for (const auto& t : tuples) macro.classes.push_back({t.id, "", std::nullopt});
  {
    bool placed = false;
    for (int p = 0; p < V; ++p) {
      if (members.count(p)) {
        if (!placed) { merged.parameters.push_back(macro); placed = true; }
        continue;
      }
      merged.parameters.push_back(model.parameters[p]);
    }
  }
  for (int n : topo)
    merged.chain_order.push_back(n == macro_node ? macro_id : cm.param_id(n));

  // macro CPT: per external-parent context, the product of member CPT
  // entries over surviving tuples, renormalized
  {
    ConditionalProbabilityTable t;
    t.param = macro_id;
    for (int p : macro_parents) t.given.push_back(cm.param_id(p));

    std::vector<std::size_t> sizes;
    std::size_t combos = 1;
    for (int p : macro_parents) {
      sizes.push_back(cm.class_count(p));
      combos *= cm.class_count(p);
    }
    Configuration ext;
    ext.classes.assign(V, 0);
    for (std::size_t n = 0; n < combos; ++n) {
      CptRow row;
      std::size_t rem = n;
      for (std::size_t g = 0; g < macro_parents.size(); ++g) {
        ext.classes[macro_parents[g]] = static_cast<ClassIndex>(rem % sizes[g]);
        row.when[cm.param_id(macro_parents[g])] =
            cm.class_id(macro_parents[g], ext.classes[macro_parents[g]]);
        rem /= sizes[g];
      }
      std::vector<double> raw(tuples.size());
      double mass = 0.0;
      for (std::size_t k = 0; k < tuples.size(); ++k) {
        Configuration probe = ext;
        for (std::size_t j = 0; j < member_order.size(); ++j)
          probe.classes[member_order[j]] = tuples[k].classes[j];
        double p = 1.0;
        for (int m : member_order)
          p *= cm.row_for(m, probe)[probe.classes[m]];
        raw[k] = p;
        mass += p;
      }
      for (std::size_t k = 0; k < tuples.size(); ++k)
        row.probs[tuples[k].id] =
            mass > 0.0 ? raw[k] / mass : 1.0 / static_cast<double>(tuples.size());
      t.rows.push_back(std::move(row));
    }
    merged.cpts.push_back(std::move(t));
  }

  // remaining CPTs; children of members swap those parents for the macro
  // parameter and take the projected rows
  for (int child = 0; child < V; ++child) {
    if (members.count(child)) continue;
    const auto& src = cm.cpt(child);
    bool touches = false;
    for (int parent : src.parents)
      if (members.count(parent)) touches = true;
    if (!touches) {
      for (const auto& orig : model.cpts)
        if (orig.param == cm.param_id(child)) merged.cpts.push_back(orig);
      continue;
    }
    ConditionalProbabilityTable t;
    t.param = cm.param_id(child);
    std::vector<int> ext_parents;
    for (int parent : src.parents)
      if (!members.count(parent)) ext_parents.push_back(parent);
    for (int parent : ext_parents) t.given.push_back(cm.param_id(parent));
    t.given.push_back(macro_id);

    std::vector<std::size_t> sizes;
    std::size_t combos = 1;
    for (int p : ext_parents) {
      sizes.push_back(cm.class_count(p));
      combos *= cm.class_count(p);
    }
    Configuration ext;
    ext.classes.assign(V, 0);
    for (std::size_t n = 0; n < combos; ++n) {
      std::size_t rem = n;
      for (std::size_t g = 0; g < ext_parents.size(); ++g) {
        ext.classes[ext_parents[g]] = static_cast<ClassIndex>(rem % sizes[g]);
        rem /= sizes[g];
      }
      for (const Tuple& tp : tuples) {
        CptRow row;
        for (std::size_t g = 0; g < ext_parents.size(); ++g)
          row.when[cm.param_id(ext_parents[g])] =
              cm.class_id(ext_parents[g], ext.classes[ext_parents[g]]);
        row.when[macro_id] = tp.id;
        Configuration probe = ext;
        for (std::size_t j = 0; j < member_order.size(); ++j)
          probe.classes[member_order[j]] = tp.classes[j];
        const auto& probs = cm.row_for(child, probe);
        for (ClassIndex c = 0; c < cm.class_count(child); ++c)
          row.probs[cm.class_id(child, c)] = probs[c];
        t.rows.push_back(std::move(row));
      }
    }
    merged.cpts.push_back(std::move(t));
  }

  // constraints: external kept; cross items expanded over consistent tuples
  std::set<std::map<std::string, std::string>> emitted;
  for (const ForbiddenItem* item : external_items) {
    if (emitted.insert(item->entries).second)
      merged.constraints.forbidden.push_back(*item);
  }
  for (const ForbiddenItem* item : cross_items) {
    for (const Tuple& tp : tuples) {
      bool consistent = true;
      ForbiddenItem rewritten;
      for (const auto& [pid, cid] : item->entries) {
        int p = cm.param_index(pid);
        if (members.count(p)) {
          std::size_t k = std::find(member_order.begin(), member_order.end(), p) -
                          member_order.begin();
          if (tp.classes[k] != cm.class_index(p, cid)) { consistent = false; break; }
        } else {
          rewritten.entries[pid] = cid;
        }
      }
      if (!consistent) continue;
      rewritten.entries[macro_id] = tp.id;
      if (emitted.insert(rewritten.entries).second)
        merged.constraints.forbidden.push_back(std::move(rewritten));
    }
  }

  // requirements: member entries become a tuple filter on the macro parameter
  for (const auto& req : model.requirements) {
    Requirement r;
    r.id = req.id;
    std::set<std::string> tuple_filter;
    bool filters_members = false;
    for (const auto& [pid, allowed] : req.predicate) {
      int p = cm.param_index(pid);
      if (!members.count(p)) {
        r.predicate[pid] = allowed;
        continue;
      }
      filters_members = true;
    }
    if (filters_members) {
      for (const Tuple& tp : tuples) {
        bool ok = true;
        for (const auto& [pid, allowed] : req.predicate) {
          int p = cm.param_index(pid);
          if (!members.count(p)) continue;
          std::size_t k = std::find(member_order.begin(), member_order.end(), p) -
                          member_order.begin();
          if (!allowed.count(cm.class_id(p, tp.classes[k]))) { ok = false; break; }
        }
        if (ok) tuple_filter.insert(tp.id);
      }
      if (tuple_filter.empty())
        throw UsageError(codes::merge_scope,
                         "requirement '" + req.id +
                             "' admits no class tuple after the merge");
      r.predicate[macro_id] = std::move(tuple_filter);
    }
    merged.requirements.push_back(std::move(r));
  }

  // verification gate: the merged joint must reproduce the original exactly
  std::shared_ptr<const CompiledModel> merged_cm;
  try {
    merged_cm = std::make_shared<const CompiledModel>(merged);
  } catch (const UsageError& e) {
    throw UsageError(codes::merge_scope,
                     std::string("merged model is not well-formed: ") + e.what());
  }
  JointDistribution after = joint_distribution(merged_cm, limit);
  bool preserved = after.configs.size() == original.configs.size();
  if (preserved) {
    std::map<std::vector<ClassIndex>, std::string> tuple_id;
    for (const Tuple& tp : tuples) tuple_id[tp.classes] = tp.id;
    for (std::size_t i = 0; preserved && i < original.configs.size(); ++i) {
      const Configuration& x = original.configs[i];
      std::vector<ClassIndex> key;
      for (int m : member_order) key.push_back(x.classes[m]);
      std::map<std::string, std::string> assignment;
      assignment[macro_id] = tuple_id.at(key);
      for (int p = 0; p < V; ++p)
        if (!members.count(p))
          assignment[cm.param_id(p)] = cm.class_id(p, x.classes[p]);
      double q = after.prob_of(merged_cm->config_from_ids(assignment));
      if (std::abs(q - original.probs[i]) > 1e-12) preserved = false;
    }
  }
  if (!preserved)
    throw UsageError(codes::merge_scope,
                     "merging these parameters cannot preserve the joint "
                     "distribution; their dependence does not factor through "
                     "the macro parameter");
  return merged;
}

}  // namespace usagegen
