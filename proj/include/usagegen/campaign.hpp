#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "usagegen/exact.hpp"
#include "usagegen/model_io.hpp"
#include "usagegen/sampler.hpp"

namespace usagegen {

enum class Strategy { profile, coverage, topk };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::profile: return "profile";
    case Strategy::coverage: return "coverage";
    default: return "topk";
  }
}

inline Strategy strategy_from_string(const std::string& name) {
  if (name == "profile") return Strategy::profile;
  if (name == "coverage") return Strategy::coverage;
  if (name == "topk") return Strategy::topk;
  throw UsageError(codes::config, "unknown strategy '" + name + "'");
}

struct TestCase {
  std::uint64_t id = 0;  // sequential within the campaign, 1-based
  Configuration config;
  std::optional<double> probability;  // exact joint mass when enumerable
  Strategy strategy = Strategy::profile;
  std::vector<std::string> requirement_ids;  // in model declaration order
  bool operator==(const TestCase&) const = default;
};

struct TestCampaign {
  std::string model_name;
  std::string model_digest;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::profile;
  std::vector<TestCase> cases;
  std::uint64_t duplicates_eliminated = 0;
  bool operator==(const TestCampaign&) const = default;
};

// The profile strategy aborts once this many consecutive duplicates arrive
// with the campaign still short of the requested size.
inline constexpr std::uint64_t kStallFactor = 10;

/// Generates a campaign of `size` distinct feasible test cases.
/// profile: random-scan samples deduplicated on the fly; topk: the most
/// probable configurations; coverage: greedy class coverage over the
/// enumerated support (ties to the higher-probability, then lexicographically
/// smaller configuration), stopping early once every positive-mass class is
/// covered.
inline TestCampaign generate_campaign(std::shared_ptr<const CompiledModel> compiled,
                                      Strategy strategy, std::uint64_t size,
                                      std::uint64_t seed,
                                      std::size_t limit = kDefaultEnumerationLimit) {
  const CompiledModel& cm = *compiled;
  TestCampaign campaign;
  campaign.model_name = cm.model().name;
  campaign.model_digest = model_digest(cm.model());
  campaign.seed = seed;
  campaign.strategy = strategy;
  if (size == 0) return campaign;

  auto push_case = [&](const Configuration& config, std::optional<double> prob) {
    TestCase tc;
    tc.id = campaign.cases.size() + 1;
    tc.config = config;
    tc.probability = prob;
    tc.strategy = strategy;
    tc.requirement_ids = cm.requirements_covered(config);
    campaign.cases.push_back(std::move(tc));
  };

  if (strategy == Strategy::topk) {
    JointDistribution dist = joint_distribution(compiled, limit);
    for (const auto& [config, prob] : top_k(dist, size)) push_case(config, prob);
    return campaign;
  }

  if (strategy == Strategy::coverage) {
    JointDistribution dist = joint_distribution(compiled, limit);
    // coverable items: (parameter, class) with positive marginal mass
    std::vector<std::vector<bool>> covered(cm.param_count());
    std::size_t uncovered = 0;
    for (int p = 0; p < cm.param_count(); ++p) {
      std::vector<double> m = marginal(dist, cm.param_id(p));
      covered[p].resize(m.size(), true);
      for (std::size_t c = 0; c < m.size(); ++c)
        if (m[c] > 0.0) {
          covered[p][c] = false;
          ++uncovered;
        }
    }
    while (uncovered > 0 && campaign.cases.size() < size) {
      std::size_t best = 0;
      int best_gain = -1;
      double best_prob = 0.0;
      for (std::size_t i = 0; i < dist.configs.size(); ++i) {
        int gain = 0;
        for (int p = 0; p < cm.param_count(); ++p)
          if (!covered[p][dist.configs[i].classes[p]]) ++gain;
        if (gain > best_gain || (gain == best_gain && dist.probs[i] > best_prob)) {
          best = i;
          best_gain = gain;
          best_prob = dist.probs[i];
        }
      }
      for (int p = 0; p < cm.param_count(); ++p) {
        ClassIndex c = dist.configs[best].classes[p];
        if (!covered[p][c]) {
          covered[p][c] = true;
          --uncovered;
        }
      }
      push_case(dist.configs[best], dist.probs[best]);
    }
    return campaign;
  }

  // profile: sample, keep first occurrences, stop at size or stall
  std::optional<JointDistribution> dist;
  try {
    dist = joint_distribution(compiled, limit);
  } catch (const UsageError& e) {
    if (e.code() != codes::too_large) throw;  // beyond the limit: omit probabilities
  }
  GibbsChain chain(compiled, seed);
  std::vector<double> alpha = compile_alpha(cm, AlphaVector::uniform(cm.model()));
  for (std::uint64_t t = 0; t < kDefaultBurnInRsgs; ++t) chain.rsgs_step(alpha);

  std::set<std::vector<ClassIndex>> seen;
  std::uint64_t consecutive_duplicates = 0;
  const std::uint64_t stall_limit = kStallFactor * size;
  while (campaign.cases.size() < size) {
    chain.rsgs_step(alpha);
    const Configuration& state = chain.state();
    if (seen.insert(state.classes).second) {
      consecutive_duplicates = 0;
      push_case(state, dist ? std::optional<double>(dist->prob_of(state)) : std::nullopt);
    } else {
      ++campaign.duplicates_eliminated;
      if (++consecutive_duplicates >= stall_limit)
        throw UsageError(codes::stall,
                         "profile sampling stalled at " +
                             std::to_string(campaign.cases.size()) + " of " +
                             std::to_string(size) + " distinct cases (" +
                             std::to_string(stall_limit) +
                             " consecutive duplicates)");
    }
  }
  return campaign;
}

inline TestCampaign generate_campaign(const UsageModel& model, Strategy strategy,
                                      std::uint64_t size, std::uint64_t seed,
                                      std::size_t limit = kDefaultEnumerationLimit) {
  return generate_campaign(std::make_shared<const CompiledModel>(model), strategy,
                           size, seed, limit);
}

/// Keeps the first occurrence of every class assignment, renumbering ids to
/// stay sequential. Idempotent.
inline TestCampaign dedupe(const TestCampaign& campaign) {
  TestCampaign out = campaign;
  out.cases.clear();
  std::set<std::vector<ClassIndex>> seen;
  for (const TestCase& tc : campaign.cases) {
    if (!seen.insert(tc.config.classes).second) {
      ++out.duplicates_eliminated;
      continue;
    }
    out.cases.push_back(tc);
    out.cases.back().id = out.cases.size();
  }
  return out;
}

struct CoverageReport {
  double class_coverage = 0.0;
  double pair_coverage = 0.0;
  double requirement_coverage = 0.0;
  std::size_t classes_covered = 0, classes_total = 0;
  std::size_t pairs_covered = 0, pairs_total = 0;
  std::size_t requirements_covered = 0, requirements_total = 0;
  std::vector<std::string> uncovered_classes;      // "param=class"
  std::vector<std::string> uncovered_pairs;        // "p=c,q=d"
  std::vector<std::string> uncovered_requirements;
};

/// Coverage against the enumerated support: fraction of positive-mass
/// (parameter, class) items, of positive-mass cross-parameter class pairs,
/// and of requirements hit by at least one case. Zero-mass items are
/// excluded from denominators; an empty denominator counts as vacuously
/// covered.
inline CoverageReport coverage_report(const TestCampaign& campaign,
                                      std::shared_ptr<const CompiledModel> compiled,
                                      std::size_t limit = kDefaultEnumerationLimit) {
  const CompiledModel& cm = *compiled;
  const int V = cm.param_count();
  for (const TestCase& tc : campaign.cases)
    if (tc.config.classes.size() != static_cast<std::size_t>(V))
      throw UsageError(codes::shape, "campaign case does not fit the model");
  JointDistribution dist = joint_distribution(compiled, limit);

  CoverageReport report;

  std::vector<std::vector<double>> marg(V);
  for (int p = 0; p < V; ++p) marg[p] = marginal(dist, cm.param_id(p));
  std::vector<std::vector<bool>> class_hit(V);
  for (int p = 0; p < V; ++p) class_hit[p].resize(cm.class_count(p), false);

  // positive-mass cross-parameter pairs, keyed (p, q, cp, cq) with p < q
  std::map<std::tuple<int, int, ClassIndex, ClassIndex>, bool> pair_hit;
  for (std::size_t i = 0; i < dist.configs.size(); ++i)
    for (int p = 0; p < V; ++p)
      for (int q = p + 1; q < V; ++q)
        pair_hit[{p, q, dist.configs[i].classes[p], dist.configs[i].classes[q]}] = false;

  std::set<std::string> req_hit;
  for (const TestCase& tc : campaign.cases) {
    for (int p = 0; p < V; ++p) class_hit[p][tc.config.classes[p]] = true;
    for (int p = 0; p < V; ++p)
      for (int q = p + 1; q < V; ++q) {
        auto it = pair_hit.find({p, q, tc.config.classes[p], tc.config.classes[q]});
        if (it != pair_hit.end()) it->second = true;
      }
    for (const auto& r : cm.requirements_covered(tc.config)) req_hit.insert(r);
  }

  for (int p = 0; p < V; ++p)
    for (std::size_t c = 0; c < cm.class_count(p); ++c) {
      if (!(marg[p][c] > 0.0)) continue;
      ++report.classes_total;
      if (class_hit[p][c]) ++report.classes_covered;
      else report.uncovered_classes.push_back(cm.param_id(p) + "=" + cm.class_id(p, static_cast<ClassIndex>(c)));
    }
  for (const auto& [key, hit] : pair_hit) {
    ++report.pairs_total;
    if (hit) ++report.pairs_covered;
    else {
      auto [p, q, cp, cq] = key;
      report.uncovered_pairs.push_back(cm.param_id(p) + "=" + cm.class_id(p, cp) +
                                       "," + cm.param_id(q) + "=" + cm.class_id(q, cq));
    }
  }
  report.requirements_total = cm.requirements().size();
  for (const auto& r : cm.requirements()) {
    if (req_hit.count(r.id)) ++report.requirements_covered;
    else report.uncovered_requirements.push_back(r.id);
  }

  auto fraction = [](std::size_t covered, std::size_t total) {
    return total == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(total);
  };
  report.class_coverage = fraction(report.classes_covered, report.classes_total);
  report.pair_coverage = fraction(report.pairs_covered, report.pairs_total);
  report.requirement_coverage =
      fraction(report.requirements_covered, report.requirements_total);
  return report;
}

inline CoverageReport coverage_report(const TestCampaign& campaign,
                                      const UsageModel& model,
                                      std::size_t limit = kDefaultEnumerationLimit) {
  return coverage_report(campaign, std::make_shared<const CompiledModel>(model), limit);
}

enum class CampaignFormat { structured, csv };

inline CampaignFormat campaign_format_from_string(const std::string& name) {
  if (name == "structured") return CampaignFormat::structured;
  if (name == "csv") return CampaignFormat::csv;
  throw UsageError(codes::config, "unknown format '" + name + "'");
}

/// Deterministic campaign document. The structured form round-trips through
/// import_campaign; the CSV form is one header line plus one line per case,
/// with requirements joined by ';' and the probability cell empty when the
/// joint was not enumerable.
inline std::string export_campaign(const TestCampaign& campaign,
                                   const CompiledModel& cm, CampaignFormat format) {
  std::string out;
  if (format == CampaignFormat::csv) {
    out += "case_id";
    for (int s : cm.chain()) out += "," + cm.param_id(s);
    out += ",probability,strategy,requirements\n";
    for (const TestCase& tc : campaign.cases) {
      out += std::to_string(tc.id);
      for (int s : cm.chain()) out += "," + cm.class_id(s, tc.config.classes[s]);
      out += ",";
      if (tc.probability) out += detail::fmt_real(*tc.probability);
      out += "," + to_string(tc.strategy) + ",";
      for (std::size_t i = 0; i < tc.requirement_ids.size(); ++i)
        out += (i ? ";" : "") + tc.requirement_ids[i];
      out += "\n";
    }
    return out;
  }

  using detail::json_string;
  out += "{\n";
  out += "  \"schema_version\": 1,\n";
  out += "  \"model_name\": " + json_string(campaign.model_name) + ",\n";
  out += "  \"model_digest\": " + json_string(campaign.model_digest) + ",\n";
  out += "  \"seed\": " + std::to_string(campaign.seed) + ",\n";
  out += "  \"strategy\": " + json_string(to_string(campaign.strategy)) + ",\n";
  out += "  \"duplicates_eliminated\": " + std::to_string(campaign.duplicates_eliminated) + ",\n";
  if (campaign.cases.empty()) {
    out += "  \"cases\": []\n";
  } else {
    out += "  \"cases\": [\n";
    for (std::size_t i = 0; i < campaign.cases.size(); ++i) {
      const TestCase& tc = campaign.cases[i];
      out += "    {\"id\": " + std::to_string(tc.id) + ", \"config\": {";
      bool first = true;
      for (int s : cm.chain()) {
        out += (first ? "" : ", ") + json_string(cm.param_id(s)) + ": " +
               json_string(cm.class_id(s, tc.config.classes[s]));
        first = false;
      }
      out += "}";
      if (tc.probability)
        out += ", \"probability\": " + detail::fmt_real(*tc.probability);
      out += ", \"strategy\": " + json_string(to_string(tc.strategy));
      out += ", \"requirements\": [";
      for (std::size_t r = 0; r < tc.requirement_ids.size(); ++r)
        out += (r ? ", " : "") + json_string(tc.requirement_ids[r]);
      out += "]}";
      out += i + 1 < campaign.cases.size() ? ",\n" : "\n";
    }
    out += "  ]\n";
  }
  out += "}\n";
  return out;
}

/// Reads a structured campaign document back. The document must have been
/// exported from the same model content (digests are compared).
inline TestCampaign import_campaign(const std::string& text, const CompiledModel& cm) {
  using nlohmann::json;
  json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object())
    throw UsageError(codes::schema, "campaign document is not a well-formed object");
  try {
  auto need = [&](const char* key) -> const json& {
    if (!doc.contains(key))
      throw UsageError(codes::schema, std::string("campaign document lacks '") + key + "'");
    return doc[key];
  };
  if (!need("schema_version").is_number_integer() ||
      need("schema_version").get<std::int64_t>() != 1)
    throw UsageError(codes::schema, "unsupported campaign schema_version");

  TestCampaign campaign;
  campaign.model_name = need("model_name").get<std::string>();
  campaign.model_digest = need("model_digest").get<std::string>();
  if (campaign.model_digest != model_digest(cm.model()))
    throw UsageError(codes::schema,
                     "campaign was exported from a different model (digest mismatch)");
  campaign.seed = need("seed").get<std::uint64_t>();
  campaign.strategy = strategy_from_string(need("strategy").get<std::string>());
  campaign.duplicates_eliminated = need("duplicates_eliminated").get<std::uint64_t>();

  for (const json& jc : need("cases")) {
    TestCase tc;
    tc.id = jc.at("id").get<std::uint64_t>();
    std::map<std::string, std::string> assignment;
    for (const auto& [pid, cid] : jc.at("config").items())
      assignment[pid] = cid.get<std::string>();
    tc.config = cm.config_from_ids(assignment);
    if (jc.contains("probability")) tc.probability = jc["probability"].get<double>();
    tc.strategy = strategy_from_string(jc.at("strategy").get<std::string>());
    for (const json& r : jc.at("requirements")) {
      std::string id = r.get<std::string>();
      bool known = false;
      for (const auto& req : cm.requirements())
        if (req.id == id) known = true;
      if (!known)
        throw UsageError(codes::unknown_ref, "unknown requirement '" + id + "'");
      tc.requirement_ids.push_back(std::move(id));
    }
    campaign.cases.push_back(std::move(tc));
  }
  return campaign;
  } catch (const json::exception& e) {
    throw UsageError(codes::schema, std::string("malformed campaign document: ") + e.what());
  }
}

}  // namespace usagegen
