#include <gtest/gtest.h>

#include <algorithm>
#include <functional>

#include "testutil.hpp"
#include "usagegen/model.hpp"

using namespace usagegen;
using testutil::load_model_file;
using testutil::make_m_tiny;

namespace {

bool has_error(const ValidationReport& r, std::string_view code, const std::string& path) {
  return std::any_of(r.entries.begin(), r.entries.end(), [&](const Diagnostic& d) {
    return d.severity == Severity::error && d.code == code && d.path == path;
  });
}

bool has_warning(const ValidationReport& r, std::string_view code) {
  return std::any_of(r.entries.begin(), r.entries.end(), [&](const Diagnostic& d) {
    return d.severity == Severity::warning && d.code == code;
  });
}

std::string thrown_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const UsageError& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST(ValidateModel, ReferenceFixturesAreClean) {
  for (const char* name :
       {"m_tiny.usage.json", "crossing_4p.usage.json", "pedestrian_6p.usage.json",
        "brightness.usage.json", "asym_two_site.usage.json"}) {
    UsageModel m = load_model_file(name);
    ValidationReport r = validate_model(m);
    EXPECT_TRUE(r.ok()) << name;
    EXPECT_EQ(r.error_count(), 0u) << name;
  }
  // in-code fixture matches the checked-in file
  EXPECT_TRUE(validate_model(make_m_tiny()).ok());
}

TEST(ValidateModel, TemperatureMustBePositive) {
  UsageModel m = make_m_tiny();
  m.temperature = 0.0;
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/temperature"));
  m.temperature = -1.5;
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/temperature"));
}

TEST(ValidateModel, RejectsBadTokensAndDuplicates) {
  UsageModel m = make_m_tiny();
  m.parameters[0].id = "ti me";
  ValidationReport r = validate_model(m);
  EXPECT_TRUE(has_error(r, codes::schema, "/parameters/0/id"));

  m = make_m_tiny();
  m.parameters[1].id = "time";  // duplicate
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/parameters/1/id"));

  m = make_m_tiny();
  m.parameters[1].classes[1].id = "sunny";  // duplicate class within parameter
  EXPECT_TRUE(
      has_error(validate_model(m), codes::schema, "/parameters/1/classes/1/id"));
}

TEST(ValidateModel, RangeChecks) {
  UsageModel m = make_m_tiny();
  m.parameters[0].classes[0].range = ClassRange{10.0, 10.0};  // empty interval
  EXPECT_TRUE(
      has_error(validate_model(m), codes::schema, "/parameters/0/classes/0/range"));

  m = make_m_tiny();
  m.parameters[0].classes[0].range = ClassRange{0.0, 50.0};
  m.parameters[0].classes[1].range = ClassRange{40.0, 90.0};  // overlaps
  EXPECT_TRUE(
      has_error(validate_model(m), codes::schema, "/parameters/0/classes/1/range"));
}

TEST(ValidateModel, ChainOrderMustBeAPermutation) {
  UsageModel m = make_m_tiny();
  m.chain_order = {"time", "wind"};
  EXPECT_TRUE(has_error(validate_model(m), codes::unknown_ref, "/chain_order/1"));

  m = make_m_tiny();
  m.chain_order = {"time", "weather", "time"};
  EXPECT_TRUE(has_error(validate_model(m), codes::order, "/chain_order/2"));

  m = make_m_tiny();
  m.chain_order = {"weather"};
  EXPECT_TRUE(has_error(validate_model(m), codes::order, "/chain_order"));
}

TEST(ValidateModel, ParentsMustPrecedeInChain) {
  UsageModel m = make_m_tiny();
  // weather before time, but weather's cpt lists time as parent
  m.chain_order = {"weather", "time"};
  EXPECT_TRUE(has_error(validate_model(m), codes::order, "/cpts/1/given/0"));
}

TEST(ValidateModel, RowDiagnostics) {
  UsageModel m = make_m_tiny();
  m.cpts[1].rows[1].probs["rain"] = 0.6;  // sums to 1.1
  EXPECT_TRUE(has_error(validate_model(m), codes::rowsum, "/cpts/1/rows/1/probs"));

  m = make_m_tiny();
  m.cpts[1].rows[0].probs["sunny"] = -0.1;
  EXPECT_TRUE(has_error(validate_model(m), codes::prob, "/cpts/1/rows/0/probs"));

  m = make_m_tiny();
  m.cpts[1].rows[0].probs.erase("fog");  // class without a probability
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/cpts/1/rows/0/probs"));

  m = make_m_tiny();
  m.cpts[1].rows[1].when["time"] = "day";  // same combination as row 0
  ValidationReport r = validate_model(m);
  EXPECT_TRUE(has_error(r, codes::dup_row, "/cpts/1/rows/1"));

  m = make_m_tiny();
  m.cpts[1].rows.pop_back();  // night row missing
  r = validate_model(m);
  EXPECT_TRUE(has_error(r, codes::missing_row, "/cpts/1/rows"));
  bool names_combo = std::any_of(r.entries.begin(), r.entries.end(), [](const Diagnostic& d) {
    return d.code == codes::missing_row && d.message.find("night") != std::string::npos;
  });
  EXPECT_TRUE(names_combo);
}

TEST(ValidateModel, EveryParameterNeedsExactlyOneCpt) {
  UsageModel m = make_m_tiny();
  m.cpts.pop_back();
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/cpts"));

  m = make_m_tiny();
  m.cpts.push_back(m.cpts[0]);
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/cpts/2/param"));
}

TEST(ValidateModel, ConstraintChecks) {
  UsageModel m = make_m_tiny();
  m.constraints.forbidden.push_back({{{"time", "day"}}});  // arity 1
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/constraints/forbid/1"));

  m = make_m_tiny();
  m.constraints.forbidden.push_back({{{"time", "night"}, {"wind", "strong"}}});
  EXPECT_TRUE(
      has_error(validate_model(m), codes::unknown_ref, "/constraints/forbid/1"));

  m = make_m_tiny();
  m.constraints.forbidden.push_back(m.constraints.forbidden[0]);
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/constraints/forbid/1"));
}

TEST(ValidateModel, RequirementChecks) {
  UsageModel m = make_m_tiny();
  m.requirements.push_back({"r1", {}});
  EXPECT_TRUE(
      has_error(validate_model(m), codes::schema, "/requirements/0/predicate"));

  m = make_m_tiny();
  m.requirements.push_back({"r1", {{"wind", {"strong"}}}});
  EXPECT_TRUE(
      has_error(validate_model(m), codes::unknown_ref, "/requirements/0/predicate"));

  m = make_m_tiny();
  m.requirements.push_back({"r1", {{"time", {"day"}}}});
  m.requirements.push_back({"r1", {{"time", {"night"}}}});
  EXPECT_TRUE(has_error(validate_model(m), codes::schema, "/requirements/1/id"));
}

TEST(ValidateModel, WarningsOnlyWhenErrorFree) {
  UsageModel m = load_model_file("frozen.usage.json");
  ValidationReport r = validate_model(m);
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(has_warning(r, codes::zero_class));

  // a requirement no feasible configuration can satisfy
  m = make_m_tiny();
  m.requirements.push_back({"r_impossible", {{"time", {"night"}}, {"weather", {"sunny"}}}});
  r = validate_model(m);
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(has_warning(r, codes::unsat_requirement));

  // with an error present the warning pass is skipped
  m.temperature = 0.0;
  r = validate_model(m);
  EXPECT_FALSE(r.ok());
  EXPECT_FALSE(has_warning(r, codes::unsat_requirement));
}

TEST(CompiledModel, AccessorsAndChain) {
  CompiledModel cm(make_m_tiny());
  EXPECT_EQ(cm.param_count(), 2);
  EXPECT_EQ(cm.param_index("time"), 0);
  EXPECT_EQ(cm.param_index("weather"), 1);
  EXPECT_EQ(cm.class_index(1, "fog"), 2);
  EXPECT_EQ(cm.param_id(1), "weather");
  EXPECT_EQ(cm.class_id(1, 0), "sunny");
  EXPECT_EQ(cm.chain(), (std::vector<int>{0, 1}));
  EXPECT_EQ(cm.chain_pos(1), 1);
  EXPECT_EQ(cm.children(0), (std::vector<int>{1}));
  EXPECT_TRUE(cm.children(1).empty());
  EXPECT_EQ(thrown_code([&] { cm.param_index("wind"); }), codes::unknown_ref);
  EXPECT_EQ(thrown_code([&] { cm.class_index(0, "dawn"); }), codes::unknown_ref);
}

TEST(CompiledModel, CompileThrowsOnInvalidModel) {
  UsageModel m = make_m_tiny();
  m.temperature = -1.0;
  EXPECT_EQ(thrown_code([&] { CompiledModel cm(m); }), codes::schema);
}

TEST(CompiledModel, FeasibilityAndChainProduct) {
  CompiledModel cm(make_m_tiny());
  Configuration day_sunny{{0, 0}};
  Configuration night_sunny{{1, 0}};
  EXPECT_TRUE(cm.feasible(day_sunny));
  EXPECT_FALSE(cm.feasible(night_sunny));
  EXPECT_NEAR(cm.chain_product(day_sunny), 0.35, 1e-15);
  EXPECT_NEAR(cm.chain_product(night_sunny), 0.06, 1e-15);

  EXPECT_TRUE(is_feasible(cm, day_sunny));
  EXPECT_FALSE(is_feasible(cm, night_sunny));
}

TEST(CompiledModel, ConfigIdConversions) {
  CompiledModel cm(make_m_tiny());
  Configuration c = cm.config_from_ids({{"time", "night"}, {"weather", "fog"}});
  EXPECT_EQ(c, (Configuration{{1, 2}}));
  auto ids = cm.config_to_ids(c);
  EXPECT_EQ(ids.at("time"), "night");
  EXPECT_EQ(ids.at("weather"), "fog");
  EXPECT_EQ(thrown_code([&] { cm.config_from_ids({{"time", "night"}}); }), codes::shape);
  EXPECT_EQ(thrown_code([&] {
              cm.config_from_ids({{"time", "night"}, {"wind", "strong"}});
            }),
            codes::unknown_ref);
}

TEST(CompiledModel, RequirementsCoveredInDeclarationOrder) {
  CompiledModel cm(load_model_file("crossing_4p.usage.json"));
  Configuration fast_fog = cm.config_from_ids({{"road", "highway"},
                                               {"speed", "high"},
                                               {"weather", "fog"},
                                               {"visibility", "poor"}});
  EXPECT_EQ(cm.requirements_covered(fast_fog),
            (std::vector<std::string>{"r_fog_poor", "r_high_speed"}));
  Configuration slow_sun = cm.config_from_ids({{"road", "urban"},
                                               {"speed", "low"},
                                               {"weather", "sunny"},
                                               {"visibility", "good"}});
  EXPECT_TRUE(cm.requirements_covered(slow_sun).empty());
}

TEST(ClassOf, MapsRawValuesThroughRanges) {
  UsageModel m = load_model_file("crossing_4p.usage.json");
  const Parameter& speed = m.parameters[1];
  const Parameter& road = m.parameters[0];
  EXPECT_EQ(class_of(speed, 20.0), "low");
  EXPECT_EQ(class_of(speed, 60.0), "mid");  // boundaries belong to the upper class
  EXPECT_EQ(class_of(speed, 130.0), "high");
  EXPECT_EQ(class_of(speed, 131.0), "high");
  EXPECT_EQ(thrown_code([&] { class_of(speed, 200.0); }), codes::out_of_range);
  EXPECT_EQ(thrown_code([&] { class_of(speed, -1.0); }), codes::out_of_range);
  EXPECT_EQ(thrown_code([&] { class_of(road, 5.0); }), codes::no_ranges);
}

TEST(Neighborhoods, ParentChildMoralizationAndConstraints) {
  // parent-child edge, symmetric
  NeighborhoodSystem n1 = neighborhoods(make_m_tiny());
  EXPECT_TRUE(n1.neighbors.at("time").count("weather"));
  EXPECT_TRUE(n1.neighbors.at("weather").count("time"));
  EXPECT_FALSE(n1.neighbors.at("time").count("time"));

  // traffic | road, time moralizes road--time; the speed/pedestrian
  // constraint adds an edge between otherwise unrelated parameters
  NeighborhoodSystem n2 =
      neighborhoods(load_model_file("pedestrian_6p.usage.json"));
  EXPECT_TRUE(n2.neighbors.at("road").count("time"));
  EXPECT_TRUE(n2.neighbors.at("time").count("road"));
  EXPECT_TRUE(n2.neighbors.at("speed").count("pedestrian"));
  EXPECT_TRUE(n2.neighbors.at("pedestrian").count("speed"));
  EXPECT_FALSE(n2.neighbors.at("weather").count("speed"));

  // chain without shared parents stays a path
  NeighborhoodSystem n3 =
      neighborhoods(load_model_file("brightness.usage.json"));
  EXPECT_TRUE(n3.neighbors.at("time").count("brightness"));
  EXPECT_TRUE(n3.neighbors.at("brightness").count("visibility"));
  EXPECT_FALSE(n3.neighbors.at("time").count("visibility"));
}

TEST(LexOrder, FollowsChainPositionThenClassIndex) {
  UsageModel m = make_m_tiny();
  // declaration order time, weather but chain order weather, time
  m.chain_order = {"weather", "time"};
  m.cpts[0].given = {};
  m.cpts[1].given = {};
  m.cpts[1].rows = {{{}, {{"sunny", 0.5}, {"rain", 0.3}, {"fog", 0.2}}}};
  CompiledModel cm(m);
  Configuration day_rain{{0, 1}};
  Configuration night_sunny_cfg{{1, 0}};
  // weather is compared first: sunny (0) < rain (1)
  EXPECT_TRUE(cm.lex_less(night_sunny_cfg, day_rain));
  EXPECT_FALSE(cm.lex_less(day_rain, night_sunny_cfg));
  EXPECT_FALSE(cm.lex_less(day_rain, day_rain));
}
