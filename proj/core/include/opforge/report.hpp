#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "opforge/catalog.hpp"
#include "opforge/fsm.hpp"

namespace opforge::report {

/// Outcome of one operator within one run.
struct OperatorRecord {
  std::string name;
  catalog::OperatorCategory category = catalog::OperatorCategory::kOther;
  bool passed = false;
  fsm::FailureStage failure_stage = fsm::FailureStage::kNone;
  bool infrastructure = false;
  int llm_calls_used = 0;
  int summarizer_calls = 0;
  std::optional<int> calls_to_success;
  std::vector<fsm::AttemptSummary> attempts;
  /// Passed by re-verifying a stored artifact, without new generation.
  bool replayed = false;
  std::string diagnostic;

  bool operator==(const OperatorRecord&) const = default;
};

nlohmann::json to_json(const OperatorRecord& record);
OperatorRecord operator_record_from_json(const nlohmann::json& j);

struct RunReport {
  std::string run_id;
  std::string catalog_fingerprint;
  nlohmann::json config = nlohmann::json::object();
  int max_calls_per_operator = 45;
  bool complete = true;
  std::string incomplete_reason;
  std::vector<OperatorRecord> operators;  // sorted by name

  std::size_t passed() const;
  std::size_t infrastructure_failures() const;
  /// passed / operators; 0 for an empty report.
  double coverage() const;
  const OperatorRecord* find(std::string_view name) const;

  bool operator==(const RunReport&) const = default;
};

nlohmann::json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::json& j);

/// Canonical bytes of report.json. Contains no wall-clock data.
std::string render_report_json(const RunReport& report);

struct RunTimings {
  double total_seconds = 0.0;
  std::map<std::string, double> operator_seconds;
};

nlohmann::json to_json(const RunTimings& timings);

/// Operators that did not pass; the input to a retry-failed run.
std::vector<std::string> failed_operators(const RunReport& report);

struct AggregateMember {
  std::string run_id;
  std::size_t operators = 0;
  std::size_t passed = 0;

  double coverage() const;
  bool operator==(const AggregateMember&) const = default;
};

struct AggregateOperator {
  catalog::OperatorCategory category = catalog::OperatorCategory::kOther;
  bool passed = false;
  std::optional<int> min_calls_to_success;
  std::set<std::string> passed_in;

  bool operator==(const AggregateOperator&) const = default;
};

/// Union of runs over one catalog. merge() is commutative, associative and
/// idempotent, and the empty aggregate is its identity.
struct AggregateReport {
  std::string catalog_fingerprint;
  int max_calls_per_operator = 0;
  std::map<std::string, AggregateMember> members;
  std::map<std::string, AggregateOperator> operators;

  std::size_t passed() const;
  double coverage() const;

  bool operator==(const AggregateReport&) const = default;
};

AggregateReport from_run(const RunReport& report);
/// Throws Error(kCatalogMismatch) when both sides are non-empty and their
/// fingerprints differ.
AggregateReport merge(const AggregateReport& a, const AggregateReport& b);
AggregateReport aggregate_runs(const std::vector<RunReport>& reports);

nlohmann::json to_json(const AggregateReport& aggregate);

struct CategoryRow {
  catalog::OperatorCategory category = catalog::OperatorCategory::kOther;
  std::size_t operators = 0;
  std::size_t passed = 0;

  double coverage_pct() const;
  bool operator==(const CategoryRow&) const = default;
};

using CategoryTable = std::array<CategoryRow, catalog::kCategoryCount>;

CategoryTable coverage_by_category(const RunReport& report);
CategoryTable coverage_by_category(const AggregateReport& aggregate);

struct CurvePoint {
  int llm_calls = 0;
  std::size_t passes = 0;

  bool operator==(const CurvePoint&) const = default;
};

/// Point x counts operators that passed within x calls, for x in 1..max_calls.
/// A replayed pass (0 calls) counts from x = 1.
std::vector<CurvePoint> cumulative_curve(const std::vector<std::optional<int>>& calls_to_success,
                                         int max_calls);
std::vector<CurvePoint> cumulative_curve(const RunReport& report);
std::vector<CurvePoint> cumulative_curve(const AggregateReport& aggregate);

std::string render_operators_csv(const RunReport& report);
std::string render_categories_csv(const CategoryTable& table);
std::string render_curve_csv(const std::vector<CurvePoint>& curve);
std::string render_summary(const RunReport& report);
std::string render_summary(const AggregateReport& aggregate);

/// Per-run files under <run_dir>.
inline constexpr std::string_view kRunHeaderFile = "run.json";
inline constexpr std::string_view kRecordsDir = "records";
inline constexpr std::string_view kReportFile = "report.json";

std::string record_file_name(std::string_view op_name);

/// Rebuilds a report from run.json and records/*.json. Operators listed in
/// the header without a record make the result incomplete.
RunReport recover_report(const std::filesystem::path& run_dir);

RunReport load_report(const std::filesystem::path& path);

}  // namespace opforge::report
