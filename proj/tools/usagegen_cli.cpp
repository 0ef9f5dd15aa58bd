// usagegen: command-line front-end for usage-model test generation.
//
// Subcommands: validate, exact, sample, analyze, optimize-alpha, merge,
// campaign, report. Machine-readable output goes to --out (written
// atomically, never on a nonzero exit); human summaries go to standard
// output; diagnostics go to standard error.
//
// Exit codes: 0 success, 1 model validation/parse errors, 2 infeasible or
// non-ergodic model (and sampler stalls), 3 enumeration limit exceeded,
// 4 usage errors (bad flags, bad alpha/sweep vectors, unwritable output).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "usagegen/campaign.hpp"
#include "usagegen/convergence.hpp"
#include "usagegen/exact.hpp"
#include "usagegen/model_io.hpp"
#include "usagegen/sampler.hpp"

namespace {

using namespace usagegen;

int exit_code_for(const std::string& code) {
  if (code == codes::schema || code == codes::prob || code == codes::rowsum ||
      code == codes::unknown_ref || code == codes::dup_row ||
      code == codes::missing_row || code == codes::order)
    return 1;
  if (code == codes::infeasible || code == codes::zero_context ||
      code == codes::stuck || code == codes::stall || code == codes::not_ergodic)
    return 2;
  if (code == codes::too_large) return 3;
  return 4;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError(codes::config, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// write-then-rename so a failed run never leaves a partial or stale file
void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path tmp(path + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (f) {
      f << content;
      f.flush();
    }
    if (!f) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw UsageError(codes::config, "cannot write '" + path + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, fs::path(path), ec);
  if (ec) {
    std::error_code ec2;
    fs::remove(tmp, ec2);
    throw UsageError(codes::config, "cannot write '" + path + "': " + ec.message());
  }
}

// document to --out when given, else to standard output
void emit(const std::string& doc, const std::string& out_path) {
  if (out_path.empty())
    std::cout << doc;
  else
    write_file_atomic(out_path, doc);
}

void print_diagnostics(const ValidationReport& report) {
  for (const Diagnostic& d : report.entries)
    std::cerr << (d.severity == Severity::error ? "error: " : "warning: ")
              << d.path << ": " << d.code << ": " << d.message << "\n";
}

UsageModel load_model(const std::string& path) {
  ParseResult parsed = parse_model(read_file(path));
  print_diagnostics(parsed.diagnostics);
  if (!parsed.model) {
    std::string code{codes::schema};
    for (const Diagnostic& d : parsed.diagnostics.entries)
      if (d.severity == Severity::error) {
        code = d.code;
        break;
      }
    throw UsageError(code, "'" + path + "' is not a valid usage model (" +
                               std::to_string(parsed.diagnostics.error_count()) +
                               " errors)");
  }
  return *parsed.model;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) parts.push_back(item);
  if (!text.empty() && text.back() == ',') parts.push_back("");
  return parts;
}

// comma-separated weights in chain order
AlphaVector parse_alpha(const std::string& text, const UsageModel& model) {
  std::vector<std::string> parts = split_commas(text);
  if (parts.size() != model.chain_order.size())
    throw UsageError(codes::alpha,
                     "--alpha needs " + std::to_string(model.chain_order.size()) +
                         " comma-separated values (one per parameter, in chain order)");
  AlphaVector a;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(parts[i], &used);
    } catch (const std::exception&) {
      throw UsageError(codes::alpha, "--alpha value '" + parts[i] + "' is not a number");
    }
    if (used != parts[i].size())
      throw UsageError(codes::alpha, "--alpha value '" + parts[i] + "' is not a number");
    a.alpha[model.chain_order[i]] = v;
  }
  return a;
}

SamplerKind parse_kind(const std::string& name) {
  if (name == "rsgs") return SamplerKind::rsgs;
  if (name == "periodic") return SamplerKind::periodic;
  throw UsageError(codes::config, "unknown sampler '" + name + "' (rsgs|periodic)");
}

std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---- subcommand runners ------------------------------------------------

int run_validate(const std::string& model_path) {
  ParseResult parsed = parse_model(read_file(model_path));
  print_diagnostics(parsed.diagnostics);
  std::size_t e = parsed.diagnostics.error_count(), w = parsed.diagnostics.warning_count();
  std::cout << e << (e == 1 ? " error, " : " errors, ") << w
            << (w == 1 ? " warning" : " warnings") << "\n";
  return e == 0 ? 0 : 1;
}

int run_exact(const std::string& model_path, std::uint64_t top, std::size_t limit,
              const std::string& out) {
  UsageModel model = load_model(model_path);
  auto compiled = std::make_shared<const CompiledModel>(std::move(model));
  const CompiledModel& cm = *compiled;
  JointDistribution dist = joint_distribution(compiled, limit);
  EnergyView view = energy_view(dist);

  std::string doc;
  doc += "# usage-exact\n";
  doc += "# model: " + cm.model().name + "\n";
  doc += "# digest: " + model_digest(cm.model()) + "\n";
  doc += "# temperature: " + detail::fmt_real(dist.temperature) + "\n";
  doc += "# z_raw: " + detail::fmt_real(dist.z_raw) + "\n";
  doc += "# support: " + std::to_string(dist.configs.size()) + "\n";
  doc += "# zero_mass_feasible: " + std::to_string(dist.zero_mass_feasible.size()) + "\n";
  for (std::size_t i = 0; i < cm.chain().size(); ++i)
    doc += (i ? "\t" : "") + cm.param_id(cm.chain()[i]);
  doc += "\tprobability\tenergy\n";
  auto row = [&](const Configuration& config, double prob) {
    for (std::size_t i = 0; i < cm.chain().size(); ++i)
      doc += (i ? "\t" : "") + cm.class_id(cm.chain()[i], config.classes[cm.chain()[i]]);
    doc += "\t" + detail::fmt_real(prob) + "\t" + detail::fmt_real(view.energy(config)) + "\n";
  };
  if (top > 0) {
    for (const auto& [config, prob] : top_k(dist, top)) row(config, prob);
  } else {
    for (std::size_t i = 0; i < dist.configs.size(); ++i)
      row(dist.configs[i], dist.probs[i]);
  }
  emit(doc, out);
  return 0;
}

int run_sample(const std::string& model_path, SamplerConfig cfg,
               const std::string& alpha_text, const std::string& sweep_text,
               const std::string& out) {
  UsageModel model = load_model(model_path);
  if (!alpha_text.empty()) cfg.alpha = parse_alpha(alpha_text, model);
  if (!sweep_text.empty()) cfg.sweep_order = split_commas(sweep_text);
  auto compiled = std::make_shared<const CompiledModel>(std::move(model));
  Trace trace = cfg.kind == SamplerKind::rsgs ? rsgs_run(compiled, std::move(cfg))
                                              : periodic_run(compiled, std::move(cfg));
  emit(export_trace(trace, *compiled), out);
  return 0;
}

std::string analyze_document(const DiagnosticsReport& r, const UsageModel& model) {
  using detail::fmt_real;
  std::string doc;
  doc += "{\n";
  doc += "  \"schema_version\": 1,\n";
  doc += "  \"model_name\": " + detail::json_string(model.name) + ",\n";
  doc += "  \"model_digest\": " + detail::json_string(model_digest(model)) + ",\n";
  doc += "  \"sampler\": " + detail::json_string(to_string(r.kind)) + ",\n";
  doc += "  \"states\": " + std::to_string(r.state_count) + ",\n";
  doc += "  \"support\": " + std::to_string(r.support_size) + ",\n";
  doc += "  \"stationarity_residual\": " + fmt_real(r.stationarity_residual) + ",\n";
  if (r.detailed_balance_residual)
    doc += "  \"detailed_balance_residual\": " + fmt_real(*r.detailed_balance_residual) + ",\n";
  doc += "  \"dobrushin_coefficient\": " + fmt_real(r.dobrushin_coefficient) + ",\n";
  doc += std::string("  \"ergodic\": ") + (r.ergodic ? "true" : "false") + ",\n";
  doc += std::string("  \"contraction_ok\": ") + (r.contraction_ok ? "true" : "false") + ",\n";
  if (r.contraction_table.empty()) {
    doc += "  \"contraction\": []\n";
  } else {
    doc += "  \"contraction\": [\n";
    for (std::size_t i = 0; i < r.contraction_table.size(); ++i) {
      const ContractionRow& c = r.contraction_table[i];
      doc += "    {\"n\": " + std::to_string(c.n) + ", \"measured\": " + fmt_real(c.measured) +
             ", \"bound\": " + fmt_real(c.bound) + ", \"half_bound\": " + fmt_real(c.half_bound) +
             "}" + (i + 1 < r.contraction_table.size() ? ",\n" : "\n");
    }
    doc += "  ]\n";
  }
  doc += "}\n";
  return doc;
}

int run_analyze(const std::string& model_path, const std::string& sampler,
                const std::string& alpha_text, const std::string& sweep_text,
                std::size_t limit, const std::string& out) {
  UsageModel model = load_model(model_path);
  SamplerKind kind = parse_kind(sampler);
  std::optional<AlphaVector> alpha;
  std::optional<std::vector<std::string>> sweep;
  if (!alpha_text.empty()) alpha = parse_alpha(alpha_text, model);
  if (!sweep_text.empty()) sweep = split_commas(sweep_text);
  DiagnosticsReport r =
      diagnostics(model, kind, std::move(alpha), std::move(sweep), std::nullopt, 50, limit);

  std::cout << "model:                     " << model.name << "\n";
  std::cout << "sampler:                   " << to_string(r.kind) << "\n";
  std::cout << "states:                    " << r.state_count << "\n";
  std::cout << "support:                   " << r.support_size << "\n";
  std::cout << "stationarity residual:     " << fmt_short(r.stationarity_residual) << "\n";
  if (r.detailed_balance_residual)
    std::cout << "detailed balance residual: " << fmt_short(*r.detailed_balance_residual)
              << "\n";
  std::cout << "dobrushin coefficient:     " << fmt_short(r.dobrushin_coefficient) << "\n";
  std::cout << "ergodic:                   " << (r.ergodic ? "yes" : "no") << "\n";
  if (r.contraction_ok) {
    std::cout << "contraction bound:         satisfied for n = 1.."
              << r.contraction_table.size() << "\n";
  } else {
    std::uint64_t first = 0;
    for (const ContractionRow& c : r.contraction_table)
      if (c.measured > c.bound + kContractionSlack) {
        first = c.n;
        break;
      }
    std::cout << "contraction bound:         VIOLATED at n = " << first << "\n";
  }

  if (!r.ergodic) {
    std::cerr << codes::not_ergodic << ": the " << to_string(r.kind)
              << " kernel is reducible or periodic on this model's feasible "
                 "configurations; a chain started in the wrong component can "
                 "never reach the support, so sampling is unsound\n";
    return 2;
  }
  if (!out.empty()) write_file_atomic(out, analyze_document(r, model));
  return 0;
}

int run_optimize_alpha(const std::string& model_path, std::uint64_t budget,
                       std::size_t limit, const std::string& out) {
  UsageModel model = load_model(model_path);
  AlphaSearchResult r = optimize_alpha(model, budget, limit);
  std::string doc;
  doc += "{\n";
  doc += "  \"schema_version\": 1,\n";
  doc += "  \"model_name\": " + detail::json_string(model.name) + ",\n";
  doc += "  \"model_digest\": " + detail::json_string(model_digest(model)) + ",\n";
  doc += "  \"alpha\": {";
  for (std::size_t i = 0; i < model.chain_order.size(); ++i)
    doc += (i ? ", " : "") + detail::json_string(model.chain_order[i]) + ": " +
           detail::fmt_real(r.alpha.alpha.at(model.chain_order[i]));
  doc += "},\n";
  doc += "  \"dobrushin\": " + detail::fmt_real(r.dobrushin) + ",\n";
  doc += "  \"evaluations\": " + std::to_string(r.evaluations) + "\n";
  doc += "}\n";

  std::cout << "alpha:";
  for (const auto& id : model.chain_order)
    std::cout << " " << id << "=" << fmt_short(r.alpha.alpha.at(id));
  std::cout << "\n";
  std::cout << "dobrushin:   " << fmt_short(r.dobrushin) << "\n";
  std::cout << "evaluations: " << r.evaluations << "\n";
  if (!out.empty()) write_file_atomic(out, doc);
  return 0;
}

int run_merge(const std::string& model_path, const std::vector<std::string>& ids,
              std::size_t limit, const std::string& out) {
  UsageModel model = load_model(model_path);
  UsageModel merged = merge_parameters(model, ids, limit);
  emit(serialize_model(merged), out);
  return 0;
}

int run_campaign(const std::string& model_path, const std::string& strategy,
                 std::uint64_t size, std::optional<std::uint64_t> seed,
                 const std::string& format, std::size_t limit, const std::string& out) {
  Strategy s = strategy_from_string(strategy);
  if (s == Strategy::profile && !seed)
    throw UsageError(codes::config, "--seed is required for the profile strategy");
  CampaignFormat fmt = campaign_format_from_string(format);
  UsageModel model = load_model(model_path);
  auto compiled = std::make_shared<const CompiledModel>(std::move(model));
  TestCampaign campaign = generate_campaign(compiled, s, size, seed.value_or(0), limit);
  emit(export_campaign(campaign, *compiled, fmt), out);
  return 0;
}

int run_report(const std::string& model_path, const std::string& campaign_path,
               std::size_t limit, const std::string& out) {
  UsageModel model = load_model(model_path);
  auto compiled = std::make_shared<const CompiledModel>(std::move(model));
  TestCampaign campaign = import_campaign(read_file(campaign_path), *compiled);
  CoverageReport r = coverage_report(campaign, compiled, limit);

  using detail::fmt_real;
  std::string doc;
  doc += "{\n";
  doc += "  \"schema_version\": 1,\n";
  doc += "  \"model_name\": " + detail::json_string(campaign.model_name) + ",\n";
  doc += "  \"model_digest\": " + detail::json_string(campaign.model_digest) + ",\n";
  doc += "  \"cases\": " + std::to_string(campaign.cases.size()) + ",\n";
  doc += "  \"class_coverage\": " + fmt_real(r.class_coverage) + ",\n";
  doc += "  \"classes_covered\": " + std::to_string(r.classes_covered) + ",\n";
  doc += "  \"classes_total\": " + std::to_string(r.classes_total) + ",\n";
  doc += "  \"pair_coverage\": " + fmt_real(r.pair_coverage) + ",\n";
  doc += "  \"pairs_covered\": " + std::to_string(r.pairs_covered) + ",\n";
  doc += "  \"pairs_total\": " + std::to_string(r.pairs_total) + ",\n";
  doc += "  \"requirement_coverage\": " + fmt_real(r.requirement_coverage) + ",\n";
  doc += "  \"requirements_covered\": " + std::to_string(r.requirements_covered) + ",\n";
  doc += "  \"requirements_total\": " + std::to_string(r.requirements_total) + ",\n";
  auto string_list = [](const std::vector<std::string>& items) {
    std::string s = "[";
    for (std::size_t i = 0; i < items.size(); ++i)
      s += (i ? ", " : "") + detail::json_string(items[i]);
    return s + "]";
  };
  doc += "  \"uncovered_classes\": " + string_list(r.uncovered_classes) + ",\n";
  doc += "  \"uncovered_pairs\": " + string_list(r.uncovered_pairs) + ",\n";
  doc += "  \"uncovered_requirements\": " + string_list(r.uncovered_requirements) + "\n";
  doc += "}\n";

  auto ratio = [](std::size_t covered, std::size_t total, double fraction) {
    return std::to_string(covered) + "/" + std::to_string(total) + " = " +
           fmt_short(fraction);
  };
  std::cout << "cases:                 " << campaign.cases.size() << "\n";
  std::cout << "duplicates eliminated: " << campaign.duplicates_eliminated << "\n";
  std::cout << "class coverage:        "
            << ratio(r.classes_covered, r.classes_total, r.class_coverage) << "\n";
  std::cout << "pair coverage:         "
            << ratio(r.pairs_covered, r.pairs_total, r.pair_coverage) << "\n";
  std::cout << "requirement coverage:  "
            << ratio(r.requirements_covered, r.requirements_total, r.requirement_coverage)
            << "\n";
  for (const auto& c : r.uncovered_classes) std::cout << "uncovered class:       " << c << "\n";
  for (const auto& p : r.uncovered_pairs) std::cout << "uncovered pair:        " << p << "\n";
  for (const auto& q : r.uncovered_requirements)
    std::cout << "uncovered requirement: " << q << "\n";
  if (!out.empty()) write_file_atomic(out, doc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"usage-model driven test-case generation"};
  app.require_subcommand(1);

  std::string model_path, out, alpha_text, sweep_text, campaign_path;
  std::string sampler = "rsgs", strategy, format = "csv";
  std::uint64_t top = 0, size = 0, budget = kDefaultAlphaBudget;
  std::size_t limit = kDefaultEnumerationLimit;
  SamplerConfig cfg;
  std::optional<std::uint64_t> seed_opt;
  std::optional<std::uint64_t> burn_opt;
  std::vector<std::string> merge_ids;

  auto add_model = [&](CLI::App* cmd) {
    cmd->add_option("model", model_path, "usage model file")->required();
  };
  auto add_limit = [&](CLI::App* cmd) {
    cmd->add_option("--limit", limit, "enumeration limit (feasible configurations)")
        ->envname("USAGE_TESTGEN_LIMIT");
  };
  auto add_out = [&](CLI::App* cmd) { cmd->add_option("--out", out, "output file"); };

  CLI::App* validate = app.add_subcommand("validate", "check a model file");
  add_model(validate);

  CLI::App* exact = app.add_subcommand("exact", "enumerate the joint distribution");
  add_model(exact);
  exact->add_option("--top", top, "emit only the k most probable configurations");
  add_limit(exact);
  add_out(exact);

  CLI::App* sample = app.add_subcommand("sample", "run a Gibbs sampler, emit a trace");
  add_model(sample);
  sample->add_option("--seed", cfg.seed, "PRNG seed")->required();
  sample->add_option("--n", cfg.n_samples, "number of recorded samples");
  sample->add_option("--burn-in", burn_opt, "steps (rsgs) or sweeps (periodic) to discard");
  sample->add_option("--thin", cfg.thinning, "record every t-th step");
  sample->add_option("--sampler", sampler, "rsgs|periodic");
  sample->add_option("--alpha", alpha_text, "site probabilities, comma-separated in chain order");
  sample->add_option("--sweep-order", sweep_text, "periodic sweep order, comma-separated ids");
  add_out(sample);

  CLI::App* analyze = app.add_subcommand("analyze", "kernel convergence diagnostics");
  add_model(analyze);
  analyze->add_option("--sampler", sampler, "rsgs|periodic");
  analyze->add_option("--alpha", alpha_text, "site probabilities, comma-separated in chain order");
  analyze->add_option("--sweep-order", sweep_text, "periodic sweep order, comma-separated ids");
  add_limit(analyze);
  add_out(analyze);

  CLI::App* optimize = app.add_subcommand("optimize-alpha", "minimize the Dobrushin coefficient");
  add_model(optimize);
  optimize->add_option("--budget", budget, "kernel evaluation budget");
  add_limit(optimize);
  add_out(optimize);

  CLI::App* merge = app.add_subcommand("merge", "replace parameters by their joint");
  add_model(merge);
  merge->add_option("ids", merge_ids, "parameter ids to merge")->required()->expected(-1);
  add_limit(merge);
  add_out(merge);

  CLI::App* campaign = app.add_subcommand("campaign", "generate a test campaign");
  add_model(campaign);
  campaign->add_option("--strategy", strategy, "profile|coverage|topk")->required();
  campaign->add_option("--size", size, "number of distinct test cases")->required();
  campaign->add_option("--seed", seed_opt, "PRNG seed (required for profile)");
  campaign->add_option("--format", format, "csv|structured");
  add_limit(campaign);
  add_out(campaign);

  CLI::App* report = app.add_subcommand("report", "coverage report for a campaign");
  add_model(report);
  report->add_option("--campaign", campaign_path, "structured campaign file")->required();
  add_limit(report);
  add_out(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 4;
  }

  try {
    if (validate->parsed()) return run_validate(model_path);
    if (exact->parsed()) return run_exact(model_path, top, limit, out);
    if (sample->parsed()) {
      cfg.kind = parse_kind(sampler);
      cfg.burn_in = burn_opt;
      return run_sample(model_path, std::move(cfg), alpha_text, sweep_text, out);
    }
    if (analyze->parsed())
      return run_analyze(model_path, sampler, alpha_text, sweep_text, limit, out);
    if (optimize->parsed()) return run_optimize_alpha(model_path, budget, limit, out);
    if (merge->parsed()) return run_merge(model_path, merge_ids, limit, out);
    if (campaign->parsed())
      return run_campaign(model_path, strategy, size, seed_opt, format, limit, out);
    if (report->parsed()) return run_report(model_path, campaign_path, limit, out);
  } catch (const UsageError& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 4;
}
