#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string temp_dir() {
  static std::string dir = [] {
    std::string d = (fs::temp_directory_path() /
                     ("usagegen_cli_" + std::to_string(::getpid())))
                        .string();
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = temp_dir() + "/" + name;
  std::ofstream(path, std::ios::binary) << content;
  return path;
}

// runs the CLI through the shell; `env_prefix` may carry VAR=value settings
CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  std::string base = temp_dir() + "/run_" + std::to_string(counter++);
  std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") + testutil::cli_path() +
                    " " + args + " >" + base + ".out 2>" + base + ".err";
  int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(base + ".out");
  r.err = slurp(base + ".err");
  std::remove((base + ".out").c_str());
  std::remove((base + ".err").c_str());
  return r;
}

std::string model(const std::string& name) {
  return testutil::models_dir() + "/" + name;
}

const char* kTinyDigestLine =
    "# digest: 31201f2b08b290b62131082493665aa80916b0a71603a1a6c4401933fbfffe41\n";

}  // namespace

TEST(CliParsing, HelpAndBadInvocations) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("").code, 4);            // a subcommand is required
  EXPECT_EQ(run_cli("frobnicate").code, 4);  // unknown subcommand
  EXPECT_EQ(run_cli("validate").code, 4);    // missing model argument
  EXPECT_EQ(run_cli("sample " + model("m_tiny.usage.json") + " --n 5").code,
            4);  // --seed is required
  EXPECT_EQ(run_cli("campaign " + model("m_tiny.usage.json") + " --size 3").code,
            4);  // --strategy is required
}

TEST(CliValidate, CleanAndWarningModels) {
  for (const char* name :
       {"m_tiny.usage.json", "crossing_4p.usage.json", "pedestrian_6p.usage.json",
        "brightness.usage.json", "asym_two_site.usage.json"}) {
    CliResult r = run_cli("validate " + model(name));
    EXPECT_EQ(r.code, 0) << name << "\n" << r.err;
  }
  CliResult tiny = run_cli("validate " + model("m_tiny.usage.json"));
  EXPECT_EQ(tiny.out, "0 errors, 0 warnings\n");
  EXPECT_TRUE(tiny.err.empty());

  // zero-probability branches are reported but do not fail validation
  CliResult frozen = run_cli("validate " + model("frozen.usage.json"));
  EXPECT_EQ(frozen.code, 0);
  EXPECT_EQ(frozen.out.rfind("0 errors, ", 0), 0u);
  EXPECT_NE(frozen.err.find("W_ZERO_CLASS"), std::string::npos);
}

TEST(CliValidate, BrokenModels) {
  std::string bad = write_temp("bad_rowsum.usage.json", R"({
    "schema_version": 1,
    "name": "bad",
    "parameters": [{"id": "a", "classes": ["a1", "a2"]}],
    "chain_order": ["a"],
    "cpts": [{"param": "a", "rows": [{"probs": {"a1": 0.5, "a2": 0.4}}]}]
  })");
  CliResult r = run_cli("validate " + bad);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.out, "1 error, 0 warnings\n");
  EXPECT_NE(r.err.find("E_ROWSUM"), std::string::npos);
  EXPECT_NE(r.err.find("/cpts/0/rows/0"), std::string::npos);

  std::string garbled = write_temp("garbled.usage.json", "{ not json");
  CliResult g = run_cli("validate " + garbled);
  EXPECT_EQ(g.code, 1);
  EXPECT_NE(g.err.find("E_SCHEMA"), std::string::npos);

  // other subcommands refuse invalid models with the same exit class
  CliResult e = run_cli("exact " + bad);
  EXPECT_EQ(e.code, 1);
  EXPECT_NE(e.err.find("is not a valid usage model"), std::string::npos);

  // a missing file is a usage error, not a model error
  EXPECT_EQ(run_cli("validate /does/not/exist.usage.json").code, 4);
}

TEST(CliExact, DocumentAndLimits) {
  CliResult r = run_cli("exact " + model("m_tiny.usage.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# usage-exact\n# model: M_tiny\n", 0), 0u);
  EXPECT_NE(r.out.find(kTinyDigestLine), std::string::npos);
  EXPECT_NE(r.out.find("# temperature: 1\n"), std::string::npos);
  EXPECT_NE(r.out.find("# z_raw: 0.93999999999999995\n"), std::string::npos);
  EXPECT_NE(r.out.find("# support: 5\n"), std::string::npos);
  EXPECT_NE(r.out.find("# zero_mass_feasible: 0\n"), std::string::npos);
  EXPECT_NE(r.out.find("time\tweather\tprobability\tenergy\n"), std::string::npos);
  EXPECT_NE(
      r.out.find("day\tsunny\t0.37234042553191488\t0.98794672078059032\n"),
      std::string::npos);
  std::size_t lines = 0;
  for (char c : r.out)
    if (c == '\n') ++lines;
  EXPECT_EQ(lines, 7u + 1u + 5u);

  CliResult top = run_cli("exact " + model("m_tiny.usage.json") + " --top 2");
  std::size_t top_lines = 0;
  for (char c : top.out)
    if (c == '\n') ++top_lines;
  EXPECT_EQ(top_lines, 7u + 1u + 2u);
  EXPECT_NE(top.out.find("day\tsunny\t"), std::string::npos);
  EXPECT_NE(top.out.find("day\train\t"), std::string::npos);

  CliResult over = run_cli("exact " + model("m_tiny.usage.json") + " --limit 3");
  EXPECT_EQ(over.code, 3);
  EXPECT_NE(over.err.find("E_TOO_LARGE"), std::string::npos);

  // the limit can also arrive through the environment; a flag beats it
  CliResult env = run_cli("exact " + model("m_tiny.usage.json"),
                          "USAGE_TESTGEN_LIMIT=3");
  EXPECT_EQ(env.code, 3);
  CliResult flag = run_cli("exact " + model("m_tiny.usage.json") + " --limit 200000",
                           "USAGE_TESTGEN_LIMIT=3");
  EXPECT_EQ(flag.code, 0);
}

TEST(CliSample, TraceGoldenAndOptions) {
  const std::string expected = std::string("# usage-trace\n# model: M_tiny\n") +
                               kTinyDigestLine +
                               "# sampler: rsgs\n"
                               "# seed: 42\n"
                               "# burn_in: 0\n"
                               "# thinning: 1\n"
                               "# n_samples: 2\n"
                               "# alpha: time=0.5,weather=0.5\n"
                               "# initial: day,sunny\n"
                               "# total_steps: 2\n"
                               "time\tweather\n"
                               "day\tfog\n"
                               "day\train\n";
  std::string args = "sample " + model("m_tiny.usage.json") +
                     " --seed 42 --n 2 --burn-in 0";
  CliResult r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, expected);

  // --out writes exactly the stdout document
  std::string out_path = temp_dir() + "/trace.tsv";
  CliResult w = run_cli(args + " --out " + out_path);
  EXPECT_EQ(w.code, 0);
  EXPECT_TRUE(w.out.empty());
  EXPECT_EQ(slurp(out_path), expected);

  CliResult p = run_cli("sample " + model("m_tiny.usage.json") +
                        " --seed 42 --n 2 --burn-in 0 --sampler periodic");
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_NE(p.out.find("# sampler: periodic\n"), std::string::npos);
  EXPECT_NE(p.out.find("# sweep_order: time,weather\n"), std::string::npos);
  EXPECT_NE(p.out.find("day\tfog\nnight\tfog\n"), std::string::npos);

  CliResult a = run_cli("sample " + model("m_tiny.usage.json") +
                        " --seed 1 --n 1 --alpha 0.25,0.75");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("# alpha: time=0.25,weather=0.75\n"), std::string::npos);
}

TEST(CliSample, BadSamplerArguments) {
  std::string m = model("m_tiny.usage.json");
  CliResult one = run_cli("sample " + m + " --seed 1 --n 1 --alpha 0.5");
  EXPECT_EQ(one.code, 4);
  EXPECT_NE(one.err.find("E_ALPHA"), std::string::npos);

  CliResult text = run_cli("sample " + m + " --seed 1 --n 1 --alpha 0.5,abc");
  EXPECT_EQ(text.code, 4);
  EXPECT_NE(text.err.find("E_ALPHA"), std::string::npos);

  CliResult kind = run_cli("sample " + m + " --seed 1 --n 1 --sampler bogus");
  EXPECT_EQ(kind.code, 4);
  EXPECT_NE(kind.err.find("E_CONFIG"), std::string::npos);

  CliResult crossed = run_cli("sample " + m + " --seed 1 --n 1 --sweep-order time,weather");
  EXPECT_EQ(crossed.code, 4);
  EXPECT_NE(crossed.err.find("E_CONFIG"), std::string::npos);

  CliResult thin = run_cli("sample " + m + " --seed 1 --n 1 --thin 0");
  EXPECT_EQ(thin.code, 4);
  EXPECT_NE(thin.err.find("E_CONFIG"), std::string::npos);
}

TEST(CliAnalyze, TableDocumentAndErgodicityGate) {
  CliResult r = run_cli("analyze " + model("m_tiny.usage.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("model:                     M_tiny\n"), std::string::npos);
  EXPECT_NE(r.out.find("sampler:                   rsgs\n"), std::string::npos);
  EXPECT_NE(r.out.find("states:                    5\n"), std::string::npos);
  EXPECT_NE(r.out.find("support:                   5\n"), std::string::npos);
  EXPECT_NE(r.out.find("dobrushin coefficient:     0.9\n"), std::string::npos);
  EXPECT_NE(r.out.find("ergodic:                   yes\n"), std::string::npos);
  EXPECT_NE(r.out.find("contraction bound:         satisfied for n = 1..50\n"),
            std::string::npos);
  EXPECT_NE(r.out.find("detailed balance residual: "), std::string::npos);

  std::string doc_path = temp_dir() + "/analyze.json";
  CliResult w = run_cli("analyze " + model("m_tiny.usage.json") + " --out " + doc_path);
  EXPECT_EQ(w.code, 0);
  std::string doc = slurp(doc_path);
  EXPECT_NE(doc.find("\"dobrushin_coefficient\": 0.90000000000000002"),
            std::string::npos);
  EXPECT_NE(doc.find("\"ergodic\": true"), std::string::npos);
  EXPECT_NE(doc.find("\"contraction_ok\": true"), std::string::npos);
  EXPECT_NE(doc.find("{\"n\": 50, "), std::string::npos);

  CliResult p = run_cli("analyze " + model("m_tiny.usage.json") + " --sampler periodic");
  ASSERT_EQ(p.code, 0);
  EXPECT_EQ(p.out.find("detailed balance residual:"), std::string::npos);
  EXPECT_NE(p.out.find("dobrushin coefficient:     0.416667\n"), std::string::npos);

  // a reducible kernel fails loudly and leaves no report behind
  std::string gate_path = temp_dir() + "/frozen_analyze.json";
  CliResult frozen = run_cli("analyze " + model("frozen.usage.json") + " --out " + gate_path);
  EXPECT_EQ(frozen.code, 2);
  EXPECT_NE(frozen.err.find("E_NOT_ERGODIC"), std::string::npos);
  EXPECT_NE(frozen.err.find("reducible"), std::string::npos);
  EXPECT_FALSE(fs::exists(gate_path));
}

TEST(CliOptimizeAlpha, FindsTheAsymmetricOptimum) {
  CliResult r = run_cli("optimize-alpha " + model("asym_two_site.usage.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("alpha: a=0.1915 b=0.8085\n"), std::string::npos);
  EXPECT_NE(r.out.find("dobrushin:   0.834594\n"), std::string::npos);
  EXPECT_NE(r.out.find("evaluations: "), std::string::npos);

  std::string doc_path = temp_dir() + "/alpha.json";
  CliResult w = run_cli("optimize-alpha " + model("asym_two_site.usage.json") +
                        " --out " + doc_path);
  EXPECT_EQ(w.code, 0);
  std::string doc = slurp(doc_path);
  EXPECT_NE(doc.find("\"alpha\": {\"a\": 0.19"), std::string::npos);
  EXPECT_NE(doc.find("\"dobrushin\": 0.8345"), std::string::npos);
  EXPECT_NE(doc.find("\"evaluations\": "), std::string::npos);
}

TEST(CliMerge, EmitsAValidModel) {
  CliResult r = run_cli("merge " + model("m_tiny.usage.json") + " time weather");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"time+weather\""), std::string::npos);
  EXPECT_NE(r.out.find("\"day+sunny\""), std::string::npos);

  std::string merged_path = write_temp("merged.usage.json", r.out);
  CliResult v = run_cli("validate " + merged_path);
  EXPECT_EQ(v.code, 0);
  EXPECT_EQ(v.out, "0 errors, 0 warnings\n");

  // deterministic output
  CliResult again = run_cli("merge " + model("m_tiny.usage.json") + " time weather");
  EXPECT_EQ(again.out, r.out);

  CliResult dup = run_cli("merge " + model("m_tiny.usage.json") + " time time");
  EXPECT_EQ(dup.code, 4);
  EXPECT_NE(dup.err.find("E_MERGE_SCOPE"), std::string::npos);

  CliResult unknown = run_cli("merge " + model("m_tiny.usage.json") + " wind");
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("E_UNKNOWN_REF"), std::string::npos);
}

TEST(CliCampaign, CsvGoldenAndStrategies) {
  const std::string expected =
      "case_id,time,weather,probability,strategy,requirements\n"
      "1,day,sunny,0.37234042553191488,topk,\n"
      "2,day,rain,0.22340425531914895,topk,\n"
      "3,night,rain,0.15957446808510639,topk,\n";
  std::string args = "campaign " + model("m_tiny.usage.json") +
                     " --strategy topk --size 3";
  CliResult r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, expected);
  EXPECT_EQ(run_cli(args).out, expected);  // deterministic

  CliResult noseed = run_cli("campaign " + model("m_tiny.usage.json") +
                             " --strategy profile --size 3");
  EXPECT_EQ(noseed.code, 4);
  EXPECT_NE(noseed.err.find("--seed is required"), std::string::npos);

  CliResult prof = run_cli("campaign " + model("m_tiny.usage.json") +
                           " --strategy profile --size 5 --seed 7");
  ASSERT_EQ(prof.code, 0) << prof.err;
  std::size_t lines = 0;
  for (char c : prof.out)
    if (c == '\n') ++lines;
  EXPECT_EQ(lines, 6u);  // header + 5 cases

  CliResult stall = run_cli("campaign " + model("m_tiny.usage.json") +
                            " --strategy profile --size 6 --seed 3");
  EXPECT_EQ(stall.code, 2);
  EXPECT_NE(stall.err.find("E_STALL"), std::string::npos);

  CliResult badstrat = run_cli("campaign " + model("m_tiny.usage.json") +
                               " --strategy best --size 3");
  EXPECT_EQ(badstrat.code, 4);
}

TEST(CliReport, CoverageFlow) {
  std::string campaign_path = temp_dir() + "/full.campaign.json";
  CliResult gen = run_cli("campaign " + model("m_tiny.usage.json") +
                          " --strategy topk --size 5 --format structured --out " +
                          campaign_path);
  ASSERT_EQ(gen.code, 0) << gen.err;

  CliResult rep = run_cli("report " + model("m_tiny.usage.json") + " --campaign " +
                          campaign_path);
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("cases:                 5\n"), std::string::npos);
  EXPECT_NE(rep.out.find("class coverage:        5/5 = 1\n"), std::string::npos);
  EXPECT_NE(rep.out.find("pair coverage:         5/5 = 1\n"), std::string::npos);
  EXPECT_NE(rep.out.find("requirement coverage:  0/0 = 1\n"), std::string::npos);
  EXPECT_EQ(rep.out.find("uncovered"), std::string::npos);

  std::string doc_path = temp_dir() + "/report.json";
  CliResult w = run_cli("report " + model("m_tiny.usage.json") + " --campaign " +
                        campaign_path + " --out " + doc_path);
  EXPECT_EQ(w.code, 0);
  std::string doc = slurp(doc_path);
  EXPECT_NE(doc.find("\"class_coverage\": 1,"), std::string::npos);
  EXPECT_NE(doc.find("\"uncovered_classes\": [],"), std::string::npos);

  // a partial campaign names what is missing
  std::string one_path = temp_dir() + "/one.campaign.json";
  ASSERT_EQ(run_cli("campaign " + model("m_tiny.usage.json") +
                    " --strategy topk --size 1 --format structured --out " + one_path)
                .code,
            0);
  CliResult partial = run_cli("report " + model("m_tiny.usage.json") + " --campaign " +
                              one_path);
  ASSERT_EQ(partial.code, 0);
  EXPECT_NE(partial.out.find("class coverage:        2/5 = 0.4\n"), std::string::npos);
  EXPECT_NE(partial.out.find("uncovered class:       time=night\n"), std::string::npos);
  EXPECT_NE(partial.out.find("uncovered class:       weather=rain\n"), std::string::npos);

  // campaigns cannot be replayed against a different model
  CliResult foreign = run_cli("report " + model("brightness.usage.json") +
                              " --campaign " + campaign_path);
  EXPECT_EQ(foreign.code, 1);
  EXPECT_NE(foreign.err.find("digest mismatch"), std::string::npos);
}

TEST(CliOut, FailuresLeaveNoFileBehind) {
  std::string out_path = temp_dir() + "/never_written.txt";
  CliResult over = run_cli("exact " + model("m_tiny.usage.json") + " --limit 3 --out " +
                           out_path);
  EXPECT_EQ(over.code, 3);
  EXPECT_FALSE(fs::exists(out_path));
  EXPECT_FALSE(fs::exists(out_path + ".tmp"));

  CliResult unwritable = run_cli("exact " + model("m_tiny.usage.json") +
                                 " --out /nonexistent_dir_zz/x.txt");
  EXPECT_EQ(unwritable.code, 4);
  EXPECT_NE(unwritable.err.find("cannot write"), std::string::npos);
}
