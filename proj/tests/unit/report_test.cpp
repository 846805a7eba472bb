#include <gtest/gtest.h>

#include <map>

#include "opforge/error.hpp"
#include "opforge/report.hpp"
#include "opforge/util.hpp"
#include "test_support.hpp"

namespace opforge::report {
namespace {

using catalog::OperatorCategory;
using testkit::Gen;

OperatorRecord rec(const std::string& name, bool passed, std::optional<int> calls = std::nullopt,
                   OperatorCategory category = OperatorCategory::kElementwise) {
  OperatorRecord r;
  r.name = name;
  r.category = category;
  r.passed = passed;
  r.calls_to_success = passed ? calls.value_or(1) : std::optional<int>{};
  r.llm_calls_used = passed ? *r.calls_to_success : 45;
  r.failure_stage = passed ? fsm::FailureStage::kNone : fsm::FailureStage::kLint;
  return r;
}

RunReport run(const std::string& id, std::vector<OperatorRecord> ops, const std::string& fp = "fp") {
  RunReport r;
  r.run_id = id;
  r.catalog_fingerprint = fp;
  r.operators = std::move(ops);
  std::sort(r.operators.begin(), r.operators.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  return r;
}

RunReport random_run(Gen& gen, int universe, int max_calls = 45) {
  std::vector<OperatorRecord> ops;
  for (int i = 0; i < universe; ++i) {
    if (gen.coin(0.1)) continue;  // runs may cover different subsets
    const bool passed = gen.coin(0.5);
    ops.push_back(rec("op_" + std::to_string(i), passed, gen.range(0, max_calls),
                      catalog::kAllCategories[static_cast<std::size_t>(i) % catalog::kCategoryCount]));
  }
  auto r = run("run_" + std::to_string(gen.range(0, 5)), std::move(ops));
  r.max_calls_per_operator = max_calls;
  return r;
}

TEST(RunReportTest, TotalsAndCoverage) {
  const auto r = run("a", {rec("x", true), rec("y", false), rec("z", true), rec("w", false)});
  EXPECT_EQ(r.passed(), 2u);
  EXPECT_DOUBLE_EQ(r.coverage(), 0.5);
  EXPECT_DOUBLE_EQ(RunReport{}.coverage(), 0.0);
  ASSERT_NE(r.find("z"), nullptr);
  EXPECT_EQ(r.find("nope"), nullptr);
  EXPECT_EQ(failed_operators(r), (std::vector<std::string>{"w", "y"}));
}

TEST(RunReportTest, JsonRoundTripIsExact) {
  Gen gen(11);
  for (int i = 0; i < 50; ++i) {
    auto r = random_run(gen, 20);
    r.config = {{"session", {{"linter_enabled", gen.coin()}}}};
    r.operators.front().attempts = {{1, fsm::SessionStatus::kSaturated, fsm::FailureStage::kSaturation, 15, false},
                                    {2, fsm::SessionStatus::kSuccess, fsm::FailureStage::kNone, 3, true}};
    r.operators.front().diagnostic = "line \"1\"\nline 2";
    const auto back = run_report_from_json(nlohmann::json::parse(render_report_json(r)));
    EXPECT_EQ(back, r);
    EXPECT_EQ(render_report_json(back), render_report_json(r));
  }
}

TEST(RunReportTest, ReportJsonCarriesNoTimings) {
  const auto text = render_report_json(run("a", {rec("x", true)}));
  EXPECT_EQ(text.find("seconds"), std::string::npos);
  EXPECT_EQ(text.find("time"), std::string::npos);
}

TEST(RunReportTest, RejectsMalformedRecords) {
  auto j = to_json(rec("x", true));
  j["failure_stage"] = "melted";
  EXPECT_THROW(operator_record_from_json(j), Error);
  j = to_json(rec("x", true));
  j.erase("attempts");
  EXPECT_THROW(operator_record_from_json(j), Error);
}

TEST(CategoryTableTest, AllElementwiseGivesOneNonzeroRow) {
  const auto table = coverage_by_category(run("a", {rec("x", true), rec("y", false), rec("z", true)}));
  ASSERT_EQ(table.size(), 7u);
  int nonzero = 0;
  for (const auto& row : table) {
    if (row.operators == 0) continue;
    ++nonzero;
    EXPECT_EQ(row.category, OperatorCategory::kElementwise);
    EXPECT_EQ(row.operators, 3u);
    EXPECT_EQ(row.passed, 2u);
    EXPECT_NEAR(row.coverage_pct(), 66.6667, 1e-3);
  }
  EXPECT_EQ(nonzero, 1);
}

TEST(CategoryTableTest, EmptyReportIsAllZero) {
  const auto table = coverage_by_category(RunReport{});
  for (std::size_t i = 0; i < table.size(); ++i) {
    EXPECT_EQ(table[i].category, catalog::kAllCategories[i]);
    EXPECT_EQ(table[i].operators, 0u);
    EXPECT_EQ(table[i].passed, 0u);
    EXPECT_EQ(table[i].coverage_pct(), 0.0);
  }
}

TEST(CategoryTableTest, RowsMatchAnIndependentCount) {
  Gen gen(3);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<OperatorRecord> ops;
    std::map<OperatorCategory, std::pair<std::size_t, std::size_t>> oracle;
    const int n = gen.range(0, 60);
    for (int i = 0; i < n; ++i) {
      const auto c = catalog::kAllCategories[static_cast<std::size_t>(gen.range(0, 6))];
      const bool p = gen.coin();
      ops.push_back(rec("op" + std::to_string(i), p, 1, c));
      oracle[c].first++;
      if (p) oracle[c].second++;
    }
    const auto r = run("r", ops);
    const auto table = coverage_by_category(r);
    std::size_t total = 0, passed = 0;
    for (const auto& row : table) {
      EXPECT_EQ(row.operators, oracle[row.category].first);
      EXPECT_EQ(row.passed, oracle[row.category].second);
      total += row.operators;
      passed += row.passed;
    }
    EXPECT_EQ(total, r.operators.size());
    EXPECT_EQ(passed, r.passed());
  }
}

TEST(CurveTest, TwoOpsAtOneAndThree) {
  const auto curve = cumulative_curve({1, 3}, 3);
  EXPECT_EQ(curve, (std::vector<CurvePoint>{{1, 1}, {2, 1}, {3, 2}}));
}

TEST(CurveTest, NoPassesIsAllZeroAcrossTheBudget) {
  auto r = run("a", {rec("x", false), rec("y", false)});
  r.max_calls_per_operator = 45;
  const auto curve = cumulative_curve(r);
  ASSERT_EQ(curve.size(), 45u);
  EXPECT_EQ(curve.front().llm_calls, 1);
  EXPECT_EQ(curve.back().llm_calls, 45);
  for (const auto& p : curve) EXPECT_EQ(p.passes, 0u);
}

TEST(CurveTest, ReplayedPassCountsFromTheFirstPoint) {
  EXPECT_EQ(cumulative_curve({0}, 2), (std::vector<CurvePoint>{{1, 1}, {2, 1}}));
}

TEST(CurveTest, MonotoneAndEndsAtPassCountOverRandomFixtures) {
  Gen gen(1000);
  for (int iter = 0; iter < 1000; ++iter) {
    const auto r = random_run(gen, gen.range(0, 40), gen.range(1, 45));
    const auto curve = cumulative_curve(r);
    ASSERT_EQ(curve.size(), static_cast<std::size_t>(r.max_calls_per_operator));
    for (std::size_t i = 0; i < curve.size(); ++i) {
      EXPECT_EQ(curve[i].llm_calls, static_cast<int>(i) + 1);
      if (i > 0) ASSERT_GE(curve[i].passes, curve[i - 1].passes);
    }
    if (!curve.empty()) EXPECT_EQ(curve.back().passes, r.passed());
  }
}

TEST(AggregateTest, UnionOfTwoRuns) {
  const auto a = run("A", {rec("1", true), rec("2", true), rec("3", false), rec("4", false)});
  const auto b = run("B", {rec("1", false), rec("2", true), rec("3", true), rec("4", false)});
  const auto agg = aggregate_runs({a, b});
  EXPECT_EQ(agg.passed(), 3u);
  EXPECT_DOUBLE_EQ(agg.coverage(), 0.75);
  EXPECT_EQ(agg.operators.at("2").passed_in, (std::set<std::string>{"A", "B"}));
  EXPECT_FALSE(agg.operators.at("4").passed);
  ASSERT_EQ(agg.members.size(), 2u);
  EXPECT_DOUBLE_EQ(agg.members.at("A").coverage(), 0.5);
}

TEST(AggregateTest, SingleRunIsThatRun) {
  Gen gen(5);
  for (int i = 0; i < 50; ++i) {
    const auto r = random_run(gen, 30);
    const auto agg = aggregate_runs({r});
    EXPECT_EQ(agg.passed(), r.passed());
    EXPECT_DOUBLE_EQ(agg.coverage(), r.coverage());
    EXPECT_EQ(cumulative_curve(agg), cumulative_curve(r));
    EXPECT_EQ(coverage_by_category(agg), coverage_by_category(r));
  }
}

TEST(AggregateTest, FiftyFiveAndFortyUnionToSixtyFour) {
  const auto a = run_report_from_json(nlohmann::json::parse(testkit::read_fixture("reports/run_a.json")));
  const auto b = run_report_from_json(nlohmann::json::parse(testkit::read_fixture("reports/run_b.json")));
  EXPECT_DOUBLE_EQ(a.coverage(), 0.55);
  EXPECT_DOUBLE_EQ(b.coverage(), 0.40);
  const auto agg = aggregate_runs({a, b});
  EXPECT_EQ(agg.operators.size(), 100u);
  EXPECT_EQ(agg.passed(), 64u);
  EXPECT_DOUBLE_EQ(agg.coverage(), 0.64);
}

TEST(AggregateTest, MinimumCallsWin) {
  const auto a = run("A", {rec("x", true, 9)});
  const auto b = run("B", {rec("x", true, 4)});
  EXPECT_EQ(aggregate_runs({a, b}).operators.at("x").min_calls_to_success, 4);
}

TEST(AggregateTest, CatalogMismatchIsRejected) {
  const auto a = run("A", {rec("x", true)}, "fp1");
  const auto b = run("B", {rec("x", true)}, "fp2");
  try {
    aggregate_runs({a, b});
    FAIL() << "expected CatalogMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCatalogMismatch);
  }
}

TEST(AggregateTest, EmptyIsIdentity) {
  Gen gen(8);
  const auto a = from_run(random_run(gen, 10));
  EXPECT_EQ(merge(AggregateReport{}, a), a);
  EXPECT_EQ(merge(a, AggregateReport{}), a);
  EXPECT_EQ(aggregate_runs({}).operators.size(), 0u);
}

TEST(AggregateTest, MergeIsCommutativeAssociativeIdempotent) {
  Gen gen(2024);
  for (int iter = 0; iter < 500; ++iter) {
    const int universe = gen.range(1, 25);
    const auto a = from_run(random_run(gen, universe));
    const auto b = from_run(random_run(gen, universe));
    const auto c = from_run(random_run(gen, universe));
    ASSERT_EQ(merge(a, b), merge(b, a));
    ASSERT_EQ(merge(merge(a, b), c), merge(a, merge(b, c)));
    ASSERT_EQ(merge(a, a), a);
    ASSERT_EQ(merge(merge(a, b), b), merge(a, b));
  }
}

TEST(AggregateTest, UnionDominatesEveryMember) {
  Gen gen(77);
  for (int iter = 0; iter < 300; ++iter) {
    const int universe = gen.range(1, 30);
    std::vector<RunReport> runs;
    for (int k = gen.range(1, 4); k > 0; --k) runs.push_back(random_run(gen, universe));
    const auto agg = aggregate_runs(runs);
    const auto agg_curve = cumulative_curve(agg);
    for (const auto& r : runs) {
      EXPECT_GE(agg.passed(), r.passed());
      const auto member = cumulative_curve(r);
      ASSERT_EQ(member.size(), agg_curve.size());
      for (std::size_t i = 0; i < member.size(); ++i) ASSERT_GE(agg_curve[i].passes, member[i].passes);
    }
    // Members may cover fewer operators than the union, so compare counts.
    std::size_t best_passed = 0;
    for (const auto& [id, m] : agg.members) best_passed = std::max(best_passed, m.passed);
    EXPECT_GE(agg.passed(), best_passed);
  }
}

TEST(RenderTest, CsvAndSummaryShapes) {
  auto r = run("demo", {rec("a,b", true, 2), rec("c", false, std::nullopt, OperatorCategory::kReduction)});
  r.max_calls_per_operator = 3;
  const auto ops = render_operators_csv(r);
  EXPECT_EQ(ops,
            "operator,category,status,failure_stage,infrastructure,llm_calls_used,attempts,"
            "calls_to_success\n"
            "\"a,b\",Elementwise,passed,none,false,2,0,2\n"
            "c,Reduction,failed,lint,false,45,0,\n");
  const auto cats = render_categories_csv(coverage_by_category(r));
  EXPECT_NE(cats.find("Elementwise,1,1,100.0\n"), std::string::npos);
  EXPECT_NE(cats.find("Reduction,1,0,0.0\n"), std::string::npos);
  EXPECT_EQ(std::count(cats.begin(), cats.end(), '\n'), 8);
  EXPECT_EQ(render_curve_csv(cumulative_curve(r)), "llm_calls,cumulative_passes\n1,0\n2,1\n3,1\n");
  const auto summary = render_summary(r);
  EXPECT_NE(summary.find("coverage: 50.0%"), std::string::npos);
  EXPECT_NE(summary.find("lint: 1"), std::string::npos);
}

TEST(RecoveryTest, RecordsRebuildTheReport) {
  testkit::TempDir dir;
  const auto r = run("rec", {rec("x", true, 3), rec("y", false)});
  nlohmann::json header = {{"run_id", r.run_id},
                           {"catalog_fingerprint", r.catalog_fingerprint},
                           {"max_calls_per_operator", r.max_calls_per_operator},
                           {"config", r.config},
                           {"operators", {"x", "y"}}};
  util::write_file_atomic(dir.path() / kRunHeaderFile, header.dump());
  for (const auto& o : r.operators) {
    util::write_file_atomic(dir.path() / kRecordsDir / record_file_name(o.name), to_json(o).dump());
  }
  EXPECT_EQ(recover_report(dir.path()), r);

  std::filesystem::remove(dir.path() / kRecordsDir / "y.json");
  const auto partial = recover_report(dir.path());
  EXPECT_FALSE(partial.complete);
  EXPECT_EQ(partial.operators.size(), 1u);
}

}  // namespace
}  // namespace opforge::report
