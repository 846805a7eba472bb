#include "opforge/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "opforge/error.hpp"
#include "opforge/util.hpp"

namespace opforge::report {

using nlohmann::json;

namespace {

std::string category_name(catalog::OperatorCategory c) { return std::string(catalog::to_string(c)); }

catalog::OperatorCategory category_from(const json& j) {
  const auto c = catalog::parse_category(j.get<std::string>());
  if (!c) throw Error(ErrorCode::kParseError, "unknown category: " + j.get<std::string>());
  return *c;
}

fsm::FailureStage stage_from(const json& j) {
  const auto s = fsm::parse_failure_stage(j.get<std::string>());
  if (!s) throw Error(ErrorCode::kParseError, "unknown failure stage: " + j.get<std::string>());
  return *s;
}

std::string fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

template <typename Fn>
CategoryTable tabulate(Fn&& for_each) {
  CategoryTable table;
  for (std::size_t i = 0; i < catalog::kCategoryCount; ++i) table[i].category = catalog::kAllCategories[i];
  for_each([&](catalog::OperatorCategory c, bool passed) {
    auto& row = table[static_cast<std::size_t>(c)];
    ++row.operators;
    if (passed) ++row.passed;
  });
  return table;
}

}  // namespace

json to_json(const OperatorRecord& r) {
  json attempts = json::array();
  for (const auto& a : r.attempts) {
    attempts.push_back({{"index", a.index},
                        {"status", fsm::to_string(a.status)},
                        {"failure_stage", fsm::to_string(a.failure_stage)},
                        {"llm_calls", a.llm_calls},
                        {"resumed", a.resumed}});
  }
  json j = {{"name", r.name},
            {"status", r.passed ? "passed" : "failed"},
            {"category", category_name(r.category)},
            {"failure_stage", fsm::to_string(r.failure_stage)},
            {"infrastructure", r.infrastructure},
            {"llm_calls_used", r.llm_calls_used},
            {"summarizer_calls", r.summarizer_calls},
            {"calls_to_success", r.calls_to_success ? json(*r.calls_to_success) : json(nullptr)},
            {"attempts", attempts},
            {"replayed", r.replayed},
            {"diagnostic", r.diagnostic}};
  return j;
}

OperatorRecord operator_record_from_json(const json& j) {
  try {
    OperatorRecord r;
    r.name = j.at("name").get<std::string>();
    r.passed = j.at("status").get<std::string>() == "passed";
    r.category = category_from(j.at("category"));
    r.failure_stage = stage_from(j.at("failure_stage"));
    r.infrastructure = j.at("infrastructure").get<bool>();
    r.llm_calls_used = j.at("llm_calls_used").get<int>();
    r.summarizer_calls = j.value("summarizer_calls", 0);
    if (const auto& c = j.at("calls_to_success"); !c.is_null()) r.calls_to_success = c.get<int>();
    for (const auto& a : j.at("attempts")) {
      fsm::AttemptSummary s;
      s.index = a.at("index").get<int>();
      const auto status = fsm::parse_session_status(a.at("status").get<std::string>());
      if (!status) throw Error(ErrorCode::kParseError, "bad attempt status");
      s.status = *status;
      s.failure_stage = stage_from(a.at("failure_stage"));
      s.llm_calls = a.at("llm_calls").get<int>();
      s.resumed = a.at("resumed").get<bool>();
      r.attempts.push_back(s);
    }
    r.replayed = j.value("replayed", false);
    r.diagnostic = j.value("diagnostic", "");
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("operator record: ") + e.what());
  }
}

std::size_t RunReport::passed() const {
  return static_cast<std::size_t>(
      std::count_if(operators.begin(), operators.end(), [](const auto& r) { return r.passed; }));
}

std::size_t RunReport::infrastructure_failures() const {
  return static_cast<std::size_t>(std::count_if(operators.begin(), operators.end(),
                                                [](const auto& r) { return r.infrastructure; }));
}

double RunReport::coverage() const { return ratio(passed(), operators.size()); }

const OperatorRecord* RunReport::find(std::string_view name) const {
  for (const auto& r : operators) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

json to_json(const RunReport& report) {
  json ops = json::array();
  for (const auto& r : report.operators) ops.push_back(to_json(r));
  return {{"run_id", report.run_id},
          {"catalog_fingerprint", report.catalog_fingerprint},
          {"complete", report.complete},
          {"incomplete_reason", report.incomplete_reason},
          {"max_calls_per_operator", report.max_calls_per_operator},
          {"config", report.config},
          {"totals",
           {{"operators", report.operators.size()},
            {"passed", report.passed()},
            {"infrastructure_failures", report.infrastructure_failures()},
            {"coverage", report.coverage()}}},
          {"operators", ops}};
}

RunReport run_report_from_json(const json& j) {
  try {
    RunReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.catalog_fingerprint = j.at("catalog_fingerprint").get<std::string>();
    r.complete = j.value("complete", true);
    r.incomplete_reason = j.value("incomplete_reason", "");
    r.max_calls_per_operator = j.at("max_calls_per_operator").get<int>();
    r.config = j.value("config", json::object());
    for (const auto& o : j.at("operators")) r.operators.push_back(operator_record_from_json(o));
    std::sort(r.operators.begin(), r.operators.end(),
              [](const auto& a, const auto& b) { return a.name < b.name; });
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("run report: ") + e.what());
  }
}

std::string render_report_json(const RunReport& report) { return to_json(report).dump(2) + "\n"; }

json to_json(const RunTimings& timings) {
  return {{"total_seconds", timings.total_seconds}, {"operator_seconds", timings.operator_seconds}};
}

std::vector<std::string> failed_operators(const RunReport& report) {
  std::vector<std::string> out;
  for (const auto& r : report.operators) {
    if (!r.passed) out.push_back(r.name);
  }
  return out;
}

double AggregateMember::coverage() const { return ratio(passed, operators); }

std::size_t AggregateReport::passed() const {
  return static_cast<std::size_t>(
      std::count_if(operators.begin(), operators.end(), [](const auto& kv) { return kv.second.passed; }));
}

double AggregateReport::coverage() const { return ratio(passed(), operators.size()); }

AggregateReport from_run(const RunReport& report) {
  AggregateReport agg;
  agg.catalog_fingerprint = report.catalog_fingerprint;
  agg.max_calls_per_operator = report.max_calls_per_operator;
  agg.members[report.run_id] = {report.run_id, report.operators.size(), report.passed()};
  for (const auto& r : report.operators) {
    AggregateOperator op;
    op.category = r.category;
    op.passed = r.passed;
    if (r.passed) {
      op.min_calls_to_success = r.calls_to_success.value_or(r.llm_calls_used);
      op.passed_in.insert(report.run_id);
    }
    agg.operators[r.name] = std::move(op);
  }
  return agg;
}

AggregateReport merge(const AggregateReport& a, const AggregateReport& b) {
  if (a.members.empty() && a.operators.empty()) return b;
  if (b.members.empty() && b.operators.empty()) return a;
  if (a.catalog_fingerprint != b.catalog_fingerprint) {
    throw Error(ErrorCode::kCatalogMismatch, "cannot aggregate runs over different catalogs (" +
                                                 a.catalog_fingerprint + " vs " +
                                                 b.catalog_fingerprint + ")");
  }
  AggregateReport out = a;
  out.max_calls_per_operator = std::max(a.max_calls_per_operator, b.max_calls_per_operator);
  for (const auto& [id, m] : b.members) {
    auto [it, inserted] = out.members.emplace(id, m);
    // A run id seen twice with different contents keeps the larger tally, so
    // the choice does not depend on merge order.
    if (!inserted && std::tie(m.passed, m.operators) > std::tie(it->second.passed, it->second.operators)) {
      it->second = m;
    }
  }
  for (const auto& [name, op] : b.operators) {
    auto [it, inserted] = out.operators.emplace(name, op);
    if (inserted) continue;
    auto& cur = it->second;
    cur.category = std::min(cur.category, op.category);
    cur.passed = cur.passed || op.passed;
    if (op.min_calls_to_success) {
      cur.min_calls_to_success = cur.min_calls_to_success
                                     ? std::min(*cur.min_calls_to_success, *op.min_calls_to_success)
                                     : op.min_calls_to_success;
    }
    cur.passed_in.insert(op.passed_in.begin(), op.passed_in.end());
  }
  return out;
}

AggregateReport aggregate_runs(const std::vector<RunReport>& reports) {
  AggregateReport agg;
  for (const auto& r : reports) agg = merge(agg, from_run(r));
  return agg;
}

json to_json(const AggregateReport& agg) {
  json members = json::array();
  for (const auto& [id, m] : agg.members) {
    members.push_back({{"run_id", id},
                       {"operators", m.operators},
                       {"passed", m.passed},
                       {"coverage", m.coverage()}});
  }
  json ops = json::array();
  for (const auto& [name, op] : agg.operators) {
    ops.push_back({{"name", name},
                   {"category", category_name(op.category)},
                   {"status", op.passed ? "passed" : "failed"},
                   {"min_calls_to_success",
                    op.min_calls_to_success ? json(*op.min_calls_to_success) : json(nullptr)},
                   {"passed_in", op.passed_in}});
  }
  return {{"catalog_fingerprint", agg.catalog_fingerprint},
          {"max_calls_per_operator", agg.max_calls_per_operator},
          {"members", members},
          {"totals",
           {{"operators", agg.operators.size()},
            {"passed", agg.passed()},
            {"coverage", agg.coverage()}}},
          {"operators", ops}};
}

double CategoryRow::coverage_pct() const { return 100.0 * ratio(passed, operators); }

CategoryTable coverage_by_category(const RunReport& report) {
  return tabulate([&](auto&& add) {
    for (const auto& r : report.operators) add(r.category, r.passed);
  });
}

CategoryTable coverage_by_category(const AggregateReport& agg) {
  return tabulate([&](auto&& add) {
    for (const auto& [name, op] : agg.operators) add(op.category, op.passed);
  });
}

std::vector<CurvePoint> cumulative_curve(const std::vector<std::optional<int>>& calls_to_success,
                                         int max_calls) {
  std::vector<std::size_t> at(static_cast<std::size_t>(std::max(max_calls, 0)) + 1, 0);
  for (const auto& c : calls_to_success) {
    if (!c) continue;
    const int x = std::max(*c, 1);
    if (x <= max_calls) ++at[static_cast<std::size_t>(x)];
  }
  std::vector<CurvePoint> curve;
  std::size_t running = 0;
  for (int x = 1; x <= max_calls; ++x) {
    running += at[static_cast<std::size_t>(x)];
    curve.push_back({x, running});
  }
  return curve;
}

std::vector<CurvePoint> cumulative_curve(const RunReport& report) {
  std::vector<std::optional<int>> calls;
  for (const auto& r : report.operators) {
    if (r.passed) calls.push_back(r.calls_to_success.value_or(r.llm_calls_used));
  }
  return cumulative_curve(calls, report.max_calls_per_operator);
}

std::vector<CurvePoint> cumulative_curve(const AggregateReport& agg) {
  std::vector<std::optional<int>> calls;
  for (const auto& [name, op] : agg.operators) {
    if (op.passed) calls.push_back(op.min_calls_to_success);
  }
  return cumulative_curve(calls, agg.max_calls_per_operator);
}

std::string render_operators_csv(const RunReport& report) {
  std::ostringstream out;
  out << "operator,category,status,failure_stage,infrastructure,llm_calls_used,attempts,"
         "calls_to_success\n";
  for (const auto& r : report.operators) {
    out << csv_field(r.name) << ',' << catalog::to_string(r.category) << ','
        << (r.passed ? "passed" : "failed") << ',' << fsm::to_string(r.failure_stage) << ','
        << (r.infrastructure ? "true" : "false") << ',' << r.llm_calls_used << ','
        << r.attempts.size() << ','
        << (r.calls_to_success ? std::to_string(*r.calls_to_success) : std::string()) << '\n';
  }
  return out.str();
}

std::string render_categories_csv(const CategoryTable& table) {
  std::ostringstream out;
  out << "category,operators,passed,coverage_pct\n";
  for (const auto& row : table) {
    out << catalog::to_string(row.category) << ',' << row.operators << ',' << row.passed << ','
        << fixed(row.coverage_pct(), 1) << '\n';
  }
  return out.str();
}

std::string render_curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out << "llm_calls,cumulative_passes\n";
  for (const auto& p : curve) out << p.llm_calls << ',' << p.passes << '\n';
  return out.str();
}

namespace {

void render_table(std::ostringstream& out, const CategoryTable& table) {
  out << "\nCategory             Ops  Passed  Coverage\n";
  for (const auto& row : table) {
    char line[128];
    std::snprintf(line, sizeof line, "%-19s %5zu %7zu %8s%%\n",
                  std::string(catalog::to_string(row.category)).c_str(), row.operators,
                  row.passed, fixed(row.coverage_pct(), 1).c_str());
    out << line;
  }
}

}  // namespace

std::string render_summary(const RunReport& report) {
  std::ostringstream out;
  out << "run " << report.run_id << (report.complete ? "" : " (incomplete)") << '\n';
  out << "operators: " << report.operators.size() << ", passed: " << report.passed()
      << ", coverage: " << fixed(100.0 * report.coverage(), 1) << "%\n";
  out << "infrastructure failures: " << report.infrastructure_failures() << '\n';
  if (!report.complete) out << "note: " << report.incomplete_reason << '\n';
  render_table(out, coverage_by_category(report));
  std::map<std::string, std::size_t> stages;
  for (const auto& r : report.operators) {
    if (!r.passed) ++stages[std::string(fsm::to_string(r.failure_stage))];
  }
  if (!stages.empty()) {
    out << "\nFailures by stage\n";
    for (const auto& [stage, n] : stages) out << "  " << stage << ": " << n << '\n';
  }
  return out.str();
}

std::string render_summary(const AggregateReport& agg) {
  std::ostringstream out;
  out << "aggregate of " << agg.members.size() << " run(s)\n";
  for (const auto& [id, m] : agg.members) {
    out << "  " << id << ": " << m.passed << '/' << m.operators << " ("
        << fixed(100.0 * m.coverage(), 1) << "%)\n";
  }
  out << "union: " << agg.passed() << '/' << agg.operators.size() << " ("
      << fixed(100.0 * agg.coverage(), 1) << "%)\n";
  render_table(out, coverage_by_category(agg));
  return out.str();
}

std::string record_file_name(std::string_view op_name) {
  std::string stem(op_name);
  std::replace(stem.begin(), stem.end(), '/', '_');
  return stem + ".json";
}

RunReport recover_report(const std::filesystem::path& run_dir) {
  const json header = json::parse(util::read_file(run_dir / kRunHeaderFile), nullptr, false);
  if (header.is_discarded()) throw Error(ErrorCode::kParseError, "corrupt run header in " + run_dir.string());
  RunReport report;
  try {
    report.run_id = header.at("run_id").get<std::string>();
    report.catalog_fingerprint = header.at("catalog_fingerprint").get<std::string>();
    report.max_calls_per_operator = header.at("max_calls_per_operator").get<int>();
    report.config = header.at("config");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("run header: ") + e.what());
  }
  const auto records_dir = run_dir / kRecordsDir;
  std::size_t missing = 0;
  for (const auto& name : header.at("operators")) {
    const auto path = records_dir / record_file_name(name.get<std::string>());
    if (!std::filesystem::exists(path)) {
      ++missing;
      continue;
    }
    report.operators.push_back(operator_record_from_json(json::parse(util::read_file(path))));
  }
  std::sort(report.operators.begin(), report.operators.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  if (const auto& reason = header.value("incomplete_reason", std::string()); !reason.empty()) {
    report.complete = false;
    report.incomplete_reason = reason;
  }
  if (missing > 0) {
    report.complete = false;
    report.incomplete_reason = std::to_string(missing) + " operator(s) have no record";
  }
  return report;
}

RunReport load_report(const std::filesystem::path& path) {
  const json j = json::parse(util::read_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kParseError, "not a JSON report: " + path.string());
  return run_report_from_json(j);
}

}  // namespace opforge::report
