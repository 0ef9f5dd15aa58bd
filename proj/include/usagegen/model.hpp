#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "usagegen/diagnostics.hpp"

namespace usagegen {

// ---------------------------------------------------------------------------
// Domain types. All types are plain values, immutable by convention once a
// model has been validated/compiled; safe to share across concurrent readers.
// ---------------------------------------------------------------------------

// Half-open interval [lo, hi) in parameter units.
struct ClassRange {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double raw) const { return raw >= lo && raw < hi; }
  bool operator==(const ClassRange&) const = default;
};

struct EquivalenceClass {
  std::string id;
  std::string description;  // optional, empty when absent
  std::optional<ClassRange> range;
  bool operator==(const EquivalenceClass&) const = default;
};

struct Parameter {
  std::string id;
  std::vector<EquivalenceClass> classes;  // order is significant and stable
  std::string category;                   // optional, empty when absent
  bool operator==(const Parameter&) const = default;
};

// One class chosen per parameter; indices follow the model's parameter
// declaration order. This is the compact in-memory form; id-keyed maps are
// the file/interchange form (see config_from_ids / config_to_ids).
using ClassIndex = std::uint16_t;

struct Configuration {
  std::vector<ClassIndex> classes;
  bool operator==(const Configuration&) const = default;
};

// A forbidden combination: a partial assignment of >= 2 parameters. Any
// configuration matching every entry is infeasible.
struct ForbiddenItem {
  std::map<std::string, std::string> entries;  // parameter id -> class id
  bool operator==(const ForbiddenItem&) const = default;
};

struct ConstraintSet {
  std::vector<ForbiddenItem> forbidden;
  bool operator==(const ConstraintSet&) const = default;
};

struct NeighborhoodSystem {
  std::map<std::string, std::set<std::string>> neighbors;
  bool operator==(const NeighborhoodSystem&) const = default;
};

// A configuration covers a requirement iff for every predicate entry its
// class is in the allowed set.
struct Requirement {
  std::string id;
  std::map<std::string, std::set<std::string>> predicate;
  bool operator==(const Requirement&) const = default;
};

// One CPT row: `when` fixes the parent classes, `probs` gives the
// distribution over the parameter's own classes (every class listed).
struct CptRow {
  std::map<std::string, std::string> when;
  std::map<std::string, double> probs;
  bool operator==(const CptRow&) const = default;
};

struct ConditionalProbabilityTable {
  std::string param;
  std::vector<std::string> given;  // parent ids, all preceding param in chain
  std::vector<CptRow> rows;
  bool operator==(const ConditionalProbabilityTable&) const = default;
};

struct UsageModel {
  std::string name;
  double temperature = 1.0;
  std::vector<Parameter> parameters;
  std::vector<std::string> chain_order;
  std::vector<ConditionalProbabilityTable> cpts;  // exactly one per parameter
  ConstraintSet constraints;
  std::vector<Requirement> requirements;
};

// Tolerances fixed by the model contract.
inline constexpr double kRowSumTolerance = 1e-9;
inline constexpr std::size_t kDefaultEnumerationLimit = 200000;

namespace detail {

inline bool valid_token(const std::string& s) {
  if (s.empty()) return false;
  auto head = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
           (c >= '0' && c <= '9') || c == '_';
  };
  if (!head(s[0])) return false;
  for (char c : s.substr(1))
    if (!head(c) && c != '.' && c != '-' && c != '+') return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Compiled view: id->index tables, dense CPT rows, constraint/children
// indices. Built once from a model that validates with no errors; everything
// downstream (exact engine, samplers, campaigns) works on this.
// ---------------------------------------------------------------------------

class CompiledModel {
 public:
  struct Cpt {
    std::vector<int> parents;        // parameter indices, in `given` order
    std::vector<std::size_t> stride; // mixed-radix strides, parallel to parents
    std::size_t row_count = 1;
    // rows[row][class] with row = sum(parent_class * stride)
    std::vector<std::vector<double>> rows;
  };
  struct Constraint {
    std::vector<std::pair<int, ClassIndex>> entries;  // sorted by parameter
  };
  struct CompiledRequirement {
    std::string id;
    // parameter index -> allowed classes (bitset by class index)
    std::vector<std::pair<int, std::vector<bool>>> entries;
  };

  explicit CompiledModel(UsageModel model);

  const UsageModel& model() const { return model_; }
  int param_count() const { return static_cast<int>(model_.parameters.size()); }

  int param_index(const std::string& id) const {
    auto it = param_index_.find(id);
    if (it == param_index_.end())
      throw UsageError(codes::unknown_ref, "unknown parameter '" + id + "'");
    return it->second;
  }
  ClassIndex class_index(int param, const std::string& class_id) const {
    auto it = class_index_[param].find(class_id);
    if (it == class_index_[param].end())
      throw UsageError(codes::unknown_ref,
                       "unknown class '" + class_id + "' of parameter '" +
                           model_.parameters[param].id + "'");
    return it->second;
  }
  std::size_t class_count(int param) const {
    return model_.parameters[param].classes.size();
  }
  const std::string& param_id(int param) const {
    return model_.parameters[param].id;
  }
  const std::string& class_id(int param, ClassIndex c) const {
    return model_.parameters[param].classes[c].id;
  }

  // chain_order as parameter indices, and the inverse map.
  const std::vector<int>& chain() const { return chain_; }
  int chain_pos(int param) const { return chain_pos_[param]; }

  const Cpt& cpt(int param) const { return cpts_[param]; }
  const std::vector<int>& children(int param) const { return children_[param]; }
  const std::vector<Constraint>& constraints() const { return constraints_; }
  const std::vector<int>& constraints_touching(int param) const {
    return constraints_by_param_[param];
  }
  const std::vector<CompiledRequirement>& requirements() const {
    return requirements_;
  }

  // CPT row selected by the parent classes of `config`.
  const std::vector<double>& row_for(int param, const Configuration& config) const {
    const Cpt& t = cpts_[param];
    std::size_t row = 0;
    for (std::size_t k = 0; k < t.parents.size(); ++k)
      row += static_cast<std::size_t>(config.classes[t.parents[k]]) * t.stride[k];
    return t.rows[row];
  }

  // Chain-product probability of a configuration, constraints ignored.
  double chain_product(const Configuration& config) const {
    double p = 1.0;
    for (int s : chain_) p *= row_for(s, config)[config.classes[s]];
    return p;
  }

  bool satisfies(const Constraint& c, const Configuration& config) const {
    for (auto [param, cls] : c.entries)
      if (config.classes[param] != cls) return false;
    return true;  // fully matched, i.e. the configuration is forbidden
  }

  bool feasible(const Configuration& config) const {
    for (const auto& c : constraints_)
      if (satisfies(c, config)) return false;
    return true;
  }

  // Requirement ids whose predicate `config` satisfies, in declaration order.
  std::vector<std::string> requirements_covered(const Configuration& config) const {
    std::vector<std::string> out;
    for (const auto& r : requirements_) {
      bool all = true;
      for (const auto& [param, allowed] : r.entries)
        if (!allowed[config.classes[param]]) { all = false; break; }
      if (all) out.push_back(r.id);
    }
    return out;
  }

  Configuration config_from_ids(const std::map<std::string, std::string>& assignment) const {
    if (assignment.size() != model_.parameters.size())
      throw UsageError(codes::shape, "assignment must cover every parameter");
    Configuration c;
    c.classes.resize(model_.parameters.size());
    for (const auto& [pid, cid] : assignment) {
      int p = param_index(pid);
      c.classes[p] = class_index(p, cid);
    }
    return c;
  }
  std::map<std::string, std::string> config_to_ids(const Configuration& config) const {
    std::map<std::string, std::string> out;
    for (int p = 0; p < param_count(); ++p)
      out[param_id(p)] = class_id(p, config.classes[p]);
    return out;
  }

  // Lexicographic order used everywhere: by chain position, then class order.
  bool lex_less(const Configuration& a, const Configuration& b) const {
    for (int s : chain_) {
      if (a.classes[s] != b.classes[s]) return a.classes[s] < b.classes[s];
    }
    return false;
  }

 private:
  UsageModel model_;
  std::unordered_map<std::string, int> param_index_;
  std::vector<std::unordered_map<std::string, ClassIndex>> class_index_;
  std::vector<int> chain_;
  std::vector<int> chain_pos_;
  std::vector<Cpt> cpts_;
  std::vector<std::vector<int>> children_;
  std::vector<Constraint> constraints_;
  std::vector<std::vector<int>> constraints_by_param_;
  std::vector<CompiledRequirement> requirements_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Maps a raw continuous value to the id of the class whose [lo, hi) range
/// contains it. Requires every class of the parameter to carry a range.
inline std::string class_of(const Parameter& parameter, double raw) {
  for (const auto& c : parameter.classes)
    if (!c.range)
      throw UsageError(codes::no_ranges,
                       "class '" + c.id + "' of parameter '" + parameter.id +
                           "' has no range");
  for (const auto& c : parameter.classes)
    if (c.range->contains(raw)) return c.id;
  throw UsageError(codes::out_of_range,
                   "value " + std::to_string(raw) +
                       " is outside every class range of parameter '" +
                       parameter.id + "'");
}

/// False iff the configuration matches every entry of at least one forbidden
/// item. Compiled form; the id-keyed overload below validates references.
inline bool is_feasible(const CompiledModel& cm, const Configuration& config) {
  return cm.feasible(config);
}

inline bool is_feasible(const CompiledModel& cm,
                        const std::map<std::string, std::string>& assignment,
                        const ConstraintSet& constraints) {
  for (const auto& item : constraints.forbidden) {
    bool all = true;
    for (const auto& [pid, cid] : item.entries) {
      int p = cm.param_index(pid);          // throws E_UNKNOWN_REF
      cm.class_index(p, cid);               // throws E_UNKNOWN_REF
      auto it = assignment.find(pid);
      if (it == assignment.end() || it->second != cid) all = false;
    }
    if (all) return false;
  }
  return true;
}

/// Neighborhood system induced by the model: symmetric closure of
/// (a) CPT parent-child pairs, (b) pairs of parents sharing a child, and
/// (c) pairs co-occurring in a forbidden item.
inline NeighborhoodSystem neighborhoods(const UsageModel& model) {
  NeighborhoodSystem ns;
  for (const auto& p : model.parameters) ns.neighbors[p.id];  // all sites listed
  auto link = [&](const std::string& a, const std::string& b) {
    if (a == b) return;
    ns.neighbors[a].insert(b);
    ns.neighbors[b].insert(a);
  };
  for (const auto& cpt : model.cpts) {
    for (const auto& parent : cpt.given) link(parent, cpt.param);
    for (std::size_t i = 0; i < cpt.given.size(); ++i)
      for (std::size_t j = i + 1; j < cpt.given.size(); ++j)
        link(cpt.given[i], cpt.given[j]);  // moralization
  }
  for (const auto& item : model.constraints.forbidden)
    for (auto i = item.entries.begin(); i != item.entries.end(); ++i)
      for (auto j = std::next(i); j != item.entries.end(); ++j)
        link(i->first, j->first);
  return ns;
}

namespace detail {

inline std::string idx_path(const std::string& base, std::size_t i) {
  return base + "/" + std::to_string(i);
}

// Feasibility search used for the W_UNSAT_REQUIREMENT warning: does any
// configuration restricted to the predicate's allowed classes avoid every
// forbidden item? Probabilities are ignored. Returns nullopt if the node
// budget is exhausted before an answer is found.
inline std::optional<bool> predicate_satisfiable(const UsageModel& model,
                                                 const Requirement& req,
                                                 std::size_t node_budget = 1000000) {
  std::map<std::string, std::size_t> pidx;
  for (std::size_t i = 0; i < model.parameters.size(); ++i)
    pidx[model.parameters[i].id] = i;

  // candidate class ids per parameter, in chain order
  std::vector<const Parameter*> order;
  for (const auto& id : model.chain_order) order.push_back(&model.parameters[pidx[id]]);

  std::map<std::string, std::string> assigned;
  std::size_t nodes = 0;
  bool exhausted = false;

  auto violates = [&](const std::string& pid, const std::string& cid) {
    // does assigning pid=cid complete a forbidden item against `assigned`?
    for (const auto& item : model.constraints.forbidden) {
      bool all = true;
      bool uses = false;
      for (const auto& [ip, ic] : item.entries) {
        if (ip == pid) {
          uses = true;
          if (ic != cid) { all = false; break; }
        } else {
          auto it = assigned.find(ip);
          if (it == assigned.end() || it->second != ic) { all = false; break; }
        }
      }
      if (all && uses) return true;
    }
    return false;
  };

  std::function<bool(std::size_t)> dfs = [&](std::size_t depth) -> bool {
    if (depth == order.size()) return true;
    const Parameter& p = *order[depth];
    auto pred = req.predicate.find(p.id);
    for (const auto& c : p.classes) {
      if (pred != req.predicate.end() && !pred->second.count(c.id)) continue;
      if (++nodes > node_budget) { exhausted = true; return false; }
      if (violates(p.id, c.id)) continue;
      assigned[p.id] = c.id;
      if (dfs(depth + 1)) return true;
      assigned.erase(p.id);
    }
    return false;
  };
  bool found = dfs(0);
  if (exhausted) return std::nullopt;
  return found;
}

}  // namespace detail

/// Structural validation. Errors make the model unusable; warnings flag
/// suspicious but legal content. Paths are JSON-pointer style and index the
/// model's own storage order, which matches the source document for parsed
/// models.
inline ValidationReport validate_model(const UsageModel& model) {
  ValidationReport report;
  auto error = [&](std::string_view code, const std::string& path,
                   const std::string& msg) {
    report.entries.push_back({Severity::error, path, std::string(code), msg});
  };
  auto warn = [&](std::string_view code, const std::string& path,
                  const std::string& msg) {
    report.entries.push_back({Severity::warning, path, std::string(code), msg});
  };

  if (!(model.temperature > 0.0) || !std::isfinite(model.temperature))
    error(codes::schema, "/temperature", "temperature must be a positive real");

  if (model.parameters.empty())
    error(codes::schema, "/parameters", "at least one parameter is required");

  // Parameters and classes.
  std::map<std::string, std::size_t> pidx;
  for (std::size_t i = 0; i < model.parameters.size(); ++i) {
    const auto& p = model.parameters[i];
    std::string path = detail::idx_path("/parameters", i);
    if (!detail::valid_token(p.id))
      error(codes::schema, path + "/id", "parameter id '" + p.id + "' is not a valid token");
    if (pidx.count(p.id))
      error(codes::schema, path + "/id", "duplicate parameter id '" + p.id + "'");
    else
      pidx[p.id] = i;
    if (p.classes.empty())
      error(codes::schema, path + "/classes", "parameter '" + p.id + "' has no classes");
    std::set<std::string> seen;
    bool any_range = false;
    for (std::size_t j = 0; j < p.classes.size(); ++j) {
      const auto& c = p.classes[j];
      std::string cpath = detail::idx_path(path + "/classes", j);
      if (!detail::valid_token(c.id))
        error(codes::schema, cpath + "/id", "class id '" + c.id + "' is not a valid token");
      if (!seen.insert(c.id).second)
        error(codes::schema, cpath + "/id",
              "duplicate class id '" + c.id + "' in parameter '" + p.id + "'");
      if (c.range) {
        any_range = true;
        if (!(c.range->lo < c.range->hi) || !std::isfinite(c.range->lo) ||
            !std::isfinite(c.range->hi))
          error(codes::schema, cpath + "/range",
                "range must be a finite half-open interval with lo < hi");
      }
    }
    if (any_range) {
      // pairwise disjointness among the ranges that are present
      for (std::size_t a = 0; a < p.classes.size(); ++a)
        for (std::size_t b = a + 1; b < p.classes.size(); ++b) {
          const auto& ra = p.classes[a].range;
          const auto& rb = p.classes[b].range;
          if (ra && rb && ra->lo < rb->hi && rb->lo < ra->hi)
            error(codes::schema, detail::idx_path(path + "/classes", b) + "/range",
                  "range of class '" + p.classes[b].id + "' overlaps class '" +
                      p.classes[a].id + "'");
        }
    }
  }
  auto class_known = [&](const std::string& pid, const std::string& cid) {
    auto it = pidx.find(pid);
    if (it == pidx.end()) return false;
    for (const auto& c : model.parameters[it->second].classes)
      if (c.id == cid) return true;
    return false;
  };

  // chain_order must be a permutation of parameter ids.
  {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < model.chain_order.size(); ++i) {
      const auto& id = model.chain_order[i];
      if (!pidx.count(id))
        error(codes::unknown_ref, detail::idx_path("/chain_order", i),
              "chain_order names unknown parameter '" + id + "'");
      if (!seen.insert(id).second)
        error(codes::order, detail::idx_path("/chain_order", i),
              "parameter '" + id + "' appears twice in chain_order");
    }
    for (const auto& [id, _] : pidx)
      if (!seen.count(id))
        error(codes::order, "/chain_order",
              "parameter '" + id + "' is missing from chain_order");
  }
  std::map<std::string, std::size_t> chainpos;
  for (std::size_t i = 0; i < model.chain_order.size(); ++i)
    chainpos.emplace(model.chain_order[i], i);

  // CPTs: exactly one per parameter; parents precede; rows cover parent
  // combinations exactly once; rows are distributions.
  std::set<std::string> cpt_seen;
  for (std::size_t i = 0; i < model.cpts.size(); ++i) {
    const auto& t = model.cpts[i];
    std::string path = detail::idx_path("/cpts", i);
    if (!pidx.count(t.param)) {
      error(codes::unknown_ref, path + "/param",
            "cpt names unknown parameter '" + t.param + "'");
      continue;
    }
    if (!cpt_seen.insert(t.param).second) {
      error(codes::schema, path + "/param",
            "parameter '" + t.param + "' has more than one cpt");
      continue;
    }
    const Parameter& self = model.parameters[pidx[t.param]];

    bool parents_ok = true;
    std::set<std::string> gseen;
    for (std::size_t g = 0; g < t.given.size(); ++g) {
      const auto& parent = t.given[g];
      std::string gpath = detail::idx_path(path + "/given", g);
      if (!pidx.count(parent)) {
        error(codes::unknown_ref, gpath, "unknown parent '" + parent + "'");
        parents_ok = false;
        continue;
      }
      if (parent == t.param) {
        error(codes::order, gpath, "parameter '" + t.param + "' cannot be its own parent");
        parents_ok = false;
      }
      if (!gseen.insert(parent).second) {
        error(codes::schema, gpath, "duplicate parent '" + parent + "'");
        parents_ok = false;
      }
      if (chainpos.count(parent) && chainpos.count(t.param) &&
          chainpos[parent] >= chainpos[t.param]) {
        error(codes::order, gpath,
              "parent '" + parent + "' does not precede '" + t.param +
                  "' in chain_order");
        parents_ok = false;
      }
    }

    // row coverage bookkeeping: key = parent class ids in given order
    std::map<std::vector<std::string>, std::size_t> combos_seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      std::string rpath = detail::idx_path(path + "/rows", r);

      std::vector<std::string> key;
      bool key_ok = parents_ok;
      if (row.when.size() != t.given.size()) {
        error(codes::schema, rpath + "/when",
              "row must assign exactly the parents listed in given");
        key_ok = false;
      }
      for (const auto& parent : t.given) {
        auto it = row.when.find(parent);
        if (it == row.when.end()) {
          error(codes::schema, rpath + "/when", "missing parent '" + parent + "'");
          key_ok = false;
          break;
        }
        if (!class_known(parent, it->second)) {
          error(codes::unknown_ref, rpath + "/when",
                "unknown class '" + it->second + "' of parent '" + parent + "'");
          key_ok = false;
          break;
        }
        key.push_back(it->second);
      }
      if (key_ok) {
        auto [it, inserted] = combos_seen.emplace(key, r);
        if (!inserted)
          error(codes::dup_row, rpath,
                "row duplicates the parent combination of row " +
                    std::to_string(it->second));
      }

      // probs must list every class of the parameter exactly once
      std::set<std::string> listed;
      double sum = 0.0;
      bool sum_ok = true;
      for (const auto& [cid, pr] : row.probs) {
        if (!class_known(t.param, cid)) {
          error(codes::unknown_ref, rpath + "/probs",
                "unknown class '" + cid + "' of parameter '" + t.param + "'");
          sum_ok = false;
          continue;
        }
        listed.insert(cid);
        if (!std::isfinite(pr) || pr < 0.0 || pr > 1.0) {
          error(codes::prob, rpath + "/probs",
                "probability of class '" + cid + "' must lie in [0, 1]");
          sum_ok = false;
        }
        sum += pr;
      }
      for (const auto& c : self.classes)
        if (!listed.count(c.id)) {
          error(codes::schema, rpath + "/probs",
                "class '" + c.id + "' is missing from probs");
          sum_ok = false;
        }
      if (sum_ok && std::abs(sum - 1.0) > kRowSumTolerance)
        error(codes::rowsum, rpath + "/probs",
              "row probabilities sum to " + std::to_string(sum) + ", not 1");
    }

    // missing combinations (only when the structure above was sound)
    if (parents_ok) {
      std::size_t expected = 1;
      for (const auto& parent : t.given)
        expected *= model.parameters[pidx[parent]].classes.size();
      if (combos_seen.size() < expected) {
        // enumerate to name the gaps
        std::vector<std::size_t> radix(t.given.size(), 0);
        std::vector<std::size_t> sizes;
        for (const auto& parent : t.given)
          sizes.push_back(model.parameters[pidx[parent]].classes.size());
        for (std::size_t n = 0; n < expected; ++n) {
          std::vector<std::string> key;
          std::size_t rem = n;
          for (std::size_t g = 0; g < t.given.size(); ++g) {
            key.push_back(model.parameters[pidx[t.given[g]]]
                              .classes[rem % sizes[g]].id);
            rem /= sizes[g];
          }
          if (!combos_seen.count(key)) {
            std::string combo;
            for (std::size_t g = 0; g < key.size(); ++g)
              combo += (g ? ", " : "") + t.given[g] + "=" + key[g];
            error(codes::missing_row, path + "/rows",
                  "no row for parent combination {" + combo + "}");
          }
        }
      }
    }
  }
  for (const auto& [id, _] : pidx)
    if (!cpt_seen.count(id))
      error(codes::schema, "/cpts", "parameter '" + id + "' has no cpt");

  // Constraints.
  {
    std::set<std::map<std::string, std::string>> items;
    for (std::size_t i = 0; i < model.constraints.forbidden.size(); ++i) {
      const auto& item = model.constraints.forbidden[i];
      std::string path = detail::idx_path("/constraints/forbid", i);
      if (item.entries.size() < 2)
        error(codes::schema, path, "forbidden item must name at least 2 parameters");
      for (const auto& [pid, cid] : item.entries) {
        if (!pidx.count(pid))
          error(codes::unknown_ref, path, "unknown parameter '" + pid + "'");
        else if (!class_known(pid, cid))
          error(codes::unknown_ref, path,
                "unknown class '" + cid + "' of parameter '" + pid + "'");
      }
      if (!items.insert(item.entries).second)
        error(codes::schema, path, "duplicate forbidden item");
    }
  }

  // Requirements.
  {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < model.requirements.size(); ++i) {
      const auto& r = model.requirements[i];
      std::string path = detail::idx_path("/requirements", i);
      if (!detail::valid_token(r.id))
        error(codes::schema, path + "/id", "requirement id '" + r.id + "' is not a valid token");
      if (!ids.insert(r.id).second)
        error(codes::schema, path + "/id", "duplicate requirement id '" + r.id + "'");
      if (r.predicate.empty())
        error(codes::schema, path + "/predicate", "predicate must not be empty");
      for (const auto& [pid, allowed] : r.predicate) {
        if (!pidx.count(pid)) {
          error(codes::unknown_ref, path + "/predicate",
                "unknown parameter '" + pid + "'");
          continue;
        }
        if (allowed.empty())
          error(codes::schema, path + "/predicate",
                "allowed class set of parameter '" + pid + "' is empty");
        for (const auto& cid : allowed)
          if (!class_known(pid, cid))
            error(codes::unknown_ref, path + "/predicate",
                  "unknown class '" + cid + "' of parameter '" + pid + "'");
      }
    }
  }

  if (!report.ok()) return report;

  // Warnings (structure is sound past this point).
  for (std::size_t i = 0; i < model.parameters.size(); ++i) {
    const auto& p = model.parameters[i];
    const ConditionalProbabilityTable* cpt = nullptr;
    for (const auto& t : model.cpts)
      if (t.param == p.id) cpt = &t;
    for (std::size_t j = 0; j < p.classes.size(); ++j) {
      bool always_zero = true;
      for (const auto& row : cpt->rows)
        if (row.probs.at(p.classes[j].id) > 0.0) { always_zero = false; break; }
      if (always_zero)
        warn(codes::zero_class, detail::idx_path(detail::idx_path("/parameters", i) + "/classes", j),
             "class '" + p.classes[j].id + "' of parameter '" + p.id +
                 "' has probability 0 in every cpt row");
    }
  }
  for (std::size_t i = 0; i < model.requirements.size(); ++i) {
    auto sat = detail::predicate_satisfiable(model, model.requirements[i]);
    if (sat.has_value() && !*sat)
      warn(codes::unsat_requirement, detail::idx_path("/requirements", i),
           "requirement '" + model.requirements[i].id +
               "' is unsatisfiable under the constraints");
  }
  return report;
}

// --- CompiledModel implementation ---

inline CompiledModel::CompiledModel(UsageModel model) : model_(std::move(model)) {
  ValidationReport report = validate_model(model_);
  if (!report.ok()) {
    const Diagnostic* first = nullptr;
    for (const auto& d : report.entries)
      if (d.severity == Severity::error) { first = &d; break; }
    throw UsageError(first->code, first->message + " (at " + first->path + ")");
  }

  const int V = param_count();
  class_index_.resize(V);
  for (int p = 0; p < V; ++p) {
    param_index_[model_.parameters[p].id] = p;
    const auto& classes = model_.parameters[p].classes;
    for (std::size_t c = 0; c < classes.size(); ++c)
      class_index_[p][classes[c].id] = static_cast<ClassIndex>(c);
  }
  chain_pos_.resize(V);
  for (const auto& id : model_.chain_order) chain_.push_back(param_index_[id]);
  for (int pos = 0; pos < V; ++pos) chain_pos_[chain_[pos]] = pos;

  cpts_.resize(V);
  children_.resize(V);
  for (const auto& t : model_.cpts) {
    int self = param_index_[t.param];
    Cpt& c = cpts_[self];
    for (const auto& parent : t.given) c.parents.push_back(param_index_[parent]);
    c.stride.resize(c.parents.size());
    std::size_t stride = 1;
    for (std::size_t k = 0; k < c.parents.size(); ++k) {
      c.stride[k] = stride;
      stride *= class_count(c.parents[k]);
    }
    c.row_count = stride;
    c.rows.assign(c.row_count, std::vector<double>(class_count(self), 0.0));
    for (const auto& row : t.rows) {
      std::size_t idx = 0;
      for (std::size_t k = 0; k < c.parents.size(); ++k)
        idx += static_cast<std::size_t>(
                   class_index_[c.parents[k]].at(row.when.at(t.given[k]))) *
               c.stride[k];
      for (const auto& [cid, pr] : row.probs)
        c.rows[idx][class_index_[self].at(cid)] = pr;
    }
    for (int parent : c.parents) children_[parent].push_back(self);
  }

  constraints_by_param_.resize(V);
  for (const auto& item : model_.constraints.forbidden) {
    Constraint c;
    for (const auto& [pid, cid] : item.entries) {
      int p = param_index_[pid];
      c.entries.emplace_back(p, class_index_[p].at(cid));
    }
    std::sort(c.entries.begin(), c.entries.end());
    int idx = static_cast<int>(constraints_.size());
    constraints_.push_back(std::move(c));
    for (auto [p, _] : constraints_.back().entries)
      constraints_by_param_[p].push_back(idx);
  }

  for (const auto& r : model_.requirements) {
    CompiledRequirement cr;
    cr.id = r.id;
    for (const auto& [pid, allowed] : r.predicate) {
      int p = param_index_[pid];
      std::vector<bool> mask(class_count(p), false);
      for (const auto& cid : allowed) mask[class_index_[p].at(cid)] = true;
      cr.entries.emplace_back(p, std::move(mask));
    }
    std::sort(cr.entries.begin(), cr.entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    requirements_.push_back(std::move(cr));
  }
}

}  // namespace usagegen
