#include "opforge/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <set>
#include <thread>

#include "opforge/error.hpp"
#include "opforge/util.hpp"

namespace opforge::campaign {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string file_stem(const std::string& op_name) {
  std::string stem = op_name;
  std::replace(stem.begin(), stem.end(), '/', '_');
  return stem;
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::string_view kind_name(protocol::WorkerSpec::Kind kind) {
  switch (kind) {
    case protocol::WorkerSpec::Kind::kSubprocess: return "subprocess";
    case protocol::WorkerSpec::Kind::kRemote: return "remote";
    case protocol::WorkerSpec::Kind::kInProcess: return "in_process";
  }
  return "in_process";
}

protocol::WorkerSpec worker_spec_from_json(const json& j, const fs::path& base_dir) {
  protocol::WorkerSpec spec;
  const auto kind = j.value("kind", std::string("subprocess"));
  if (kind == "subprocess") {
    spec.kind = protocol::WorkerSpec::Kind::kSubprocess;
  } else if (kind == "remote") {
    spec.kind = protocol::WorkerSpec::Kind::kRemote;
  } else if (kind == "in_process") {
    spec.kind = protocol::WorkerSpec::Kind::kInProcess;
  } else {
    throw Error(ErrorCode::kParseError, "unknown worker kind '" + kind + "'");
  }
  if (j.contains("command")) spec.command = j["command"].get<std::vector<std::string>>();
  if (j.contains("backend")) {
    const auto b = protocol::parse_backend(j["backend"].get<std::string>());
    if (!b) throw Error(ErrorCode::kParseError, "unknown backend " + j["backend"].dump());
    spec.backend = *b;
  }
  if (j.contains("mock_script")) {
    const auto path = resolve(base_dir, j["mock_script"].get<std::string>());
    spec.mock_script_path = path.string();
    if (spec.kind == protocol::WorkerSpec::Kind::kInProcess) {
      spec.in_process_script = protocol::load_mock_script(util::read_file(path));
    }
  }
  spec.use_tcp = j.value("tcp", false);
  spec.host = j.value("host", spec.host);
  spec.port = j.value("port", 0);
  return spec;
}

report::OperatorRecord record_from(const catalog::OperatorSpec& op, const fsm::OperatorResult& r) {
  report::OperatorRecord rec;
  rec.name = op.name;
  rec.category = op.category;
  rec.passed = r.success;
  rec.failure_stage = r.failure_stage;
  rec.infrastructure = fsm::is_infrastructure(r.failure_stage);
  rec.llm_calls_used = r.total_llm_calls;
  rec.summarizer_calls = r.summarizer_calls;
  rec.calls_to_success = r.calls_to_success;
  rec.attempts = r.attempts;
  rec.diagnostic = r.diagnostic;
  return rec;
}

report::OperatorRecord infrastructure_record(const catalog::OperatorSpec& op, fsm::FailureStage stage,
                                             std::string diagnostic) {
  report::OperatorRecord rec;
  rec.name = op.name;
  rec.category = op.category;
  rec.failure_stage = stage;
  rec.infrastructure = true;
  rec.diagnostic = std::move(diagnostic);
  return rec;
}

/// Serializes record and artifact writes from concurrent sessions.
class RecordSink {
 public:
  RecordSink(fs::path records_dir, ArtifactStore store, std::string run_id)
      : records_dir_(std::move(records_dir)), store_(std::move(store)), run_id_(std::move(run_id)) {}

  void write(const report::OperatorRecord& rec, const std::optional<prompt::CandidateArtifact>& artifact) {
    std::lock_guard lock(mu_);
    util::write_file_atomic(records_dir_ / report::record_file_name(rec.name),
                            report::to_json(rec).dump(2) + "\n");
    if (artifact) {
      store_.put({rec.name, run_id_, artifact->module_source, rec.passed, rec.failure_stage});
    }
  }

 private:
  std::mutex mu_;
  fs::path records_dir_;
  ArtifactStore store_;
  std::string run_id_;
};

json run_header(const RunConfig& config, const catalog::OperatorCatalog& catalog,
                const std::vector<catalog::OperatorSpec>& ops, const std::string& incomplete_reason) {
  json names = json::array();
  for (const auto& op : ops) names.push_back(op.name);
  return {{"run_id", config.run_id},
          {"catalog_fingerprint", catalog.fingerprint()},
          {"max_calls_per_operator", config.session.max_attempts * config.session.max_llm_calls},
          {"config", config_snapshot(config)},
          {"incomplete_reason", incomplete_reason},
          {"operators", names}};
}

}  // namespace

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find('/') != std::string::npos || run_id == "." || run_id == "..") {
    throw Error(ErrorCode::kInvalidArgument, "run_id must be a plain non-empty name");
  }
  if (parallelism < 1) throw Error(ErrorCode::kInvalidArgument, "parallelism must be at least 1");
  session.validate();
  generation.validate();
  summarizer.validate();
}

json filter_policy_to_json(const catalog::FilterPolicy& policy) {
  json dtypes = json::array();
  for (auto d : policy.allowed_dtypes) dtypes.push_back(to_string(d));
  return {{"max_test_count", policy.max_test_count},
          {"exclude_tags", policy.exclude_tags},
          {"allowed_dtypes", dtypes}};
}

catalog::FilterPolicy filter_policy_from_json(const json& j) {
  catalog::FilterPolicy p;
  try {
    p.max_test_count = j.value("max_test_count", p.max_test_count);
    if (j.contains("exclude_tags")) p.exclude_tags = j["exclude_tags"].get<std::set<std::string>>();
    if (j.contains("allowed_dtypes")) {
      p.allowed_dtypes.clear();
      for (const auto& name : j["allowed_dtypes"]) {
        const auto d = parse_dtype(name.get<std::string>());
        if (!d) throw Error(ErrorCode::kParseError, "unknown dtype " + name.dump());
        p.allowed_dtypes.insert(*d);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("filter policy: ") + e.what());
  }
  return p;
}

json config_snapshot(const RunConfig& config) {
  json workers = json::array();
  for (const auto& w : config.workers) {
    workers.push_back({{"kind", kind_name(w.kind)}, {"backend", protocol::to_string(w.backend)}});
  }
  return {{"filter", filter_policy_to_json(config.filter)},
          {"operators", config.operators},
          {"session", fsm::to_json(config.session)},
          {"generation", llm::to_json(config.generation)},
          {"summarizer", llm::to_json(config.summarizer)},
          {"workers", workers},
          {"parallelism", config.parallelism},
          {"captured_plans", config.captured_plans_dir.has_value()}};
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir, RunConfig base) {
  if (!j.is_object()) throw Error(ErrorCode::kParseError, "run config must be an object");
  RunConfig c = std::move(base);
  try {
    c.run_id = j.value("run_id", c.run_id);
    if (j.contains("filter")) c.filter = filter_policy_from_json(j["filter"]);
    if (j.contains("operators")) c.operators = j["operators"].get<std::vector<std::string>>();
    if (j.contains("session")) {
      json merged = fsm::to_json(c.session);
      merged.update(j["session"]);
      c.session = fsm::session_config_from_json(merged);
    }
    if (j.contains("generation")) {
      json merged = llm::to_json(c.generation);
      merged.update(j["generation"]);
      c.generation = llm::model_params_from_json(merged);
    }
    if (j.contains("summarizer")) {
      json merged = llm::to_json(c.summarizer);
      merged.update(j["summarizer"]);
      c.summarizer = llm::model_params_from_json(merged);
    }
    if (j.contains("workers")) {
      c.workers.clear();
      for (const auto& w : j["workers"]) {
        const auto spec = worker_spec_from_json(w, base_dir);
        const int count = w.value("count", 1);
        for (int i = 0; i < count; ++i) c.workers.push_back(spec);
      }
    }
    if (j.contains("pool")) {
      const auto& p = j["pool"];
      auto secs = [&](const char* key, std::chrono::milliseconds current) {
        return p.contains(key) ? std::chrono::milliseconds(static_cast<long long>(
                                     p[key].get<double>() * 1000.0))
                               : current;
      };
      c.pool.lease_timeout = secs("lease_timeout_s", c.pool.lease_timeout);
      c.pool.health_timeout = secs("health_timeout_s", c.pool.health_timeout);
      c.pool.compile_timeout = secs("compile_timeout_s", c.pool.compile_timeout);
      c.pool.test_timeout = secs("test_timeout_s", c.pool.test_timeout);
      c.pool.restart_cap = p.value("restart_cap", c.pool.restart_cap);
    }
    c.parallelism = j.value("parallelism", c.parallelism);
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());
    if (j.contains("artifact_dir")) {
      c.artifact_dir = resolve(base_dir, j["artifact_dir"].get<std::string>());
    }
    if (j.contains("captured_plans_dir")) {
      c.captured_plans_dir = resolve(base_dir, j["captured_plans_dir"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<catalog::OperatorSpec> select_operators(const RunConfig& config,
                                                    const catalog::OperatorCatalog& catalog) {
  auto ops = catalog::filter_operators(catalog.operators(), config.filter);
  if (config.operators.empty()) return ops;
  std::set<std::string, std::less<>> wanted(config.operators.begin(), config.operators.end());
  for (const auto& name : wanted) {
    if (!catalog.find(name)) throw Error(ErrorCode::kUnknownOperator, "unknown operator '" + name + "'");
  }
  std::erase_if(ops, [&](const auto& op) { return !wanted.contains(op.name); });
  return ops;
}

testing::TestPlan resolve_plan(const catalog::OperatorSpec& op, const fsm::SessionConfig& session,
                               const std::optional<fs::path>& captured_plans_dir) {
  testing::TestPlan plan;
  plan.operator_name = op.name;
  if (session.test_source != fsm::TestSourceMode::kCaptured) {
    plan = testing::make_opinfo_plan(op.name, op.dtypes,
                                     static_cast<std::size_t>(session.cases_per_dtype));
  }
  if (session.test_source != fsm::TestSourceMode::kOpInfo && captured_plans_dir) {
    const auto path = *captured_plans_dir / (file_stem(op.name) + ".json");
    if (fs::exists(path)) {
      auto captured = testing::test_plan_from_json(json::parse(util::read_file(path)));
      std::set<std::string> ids;
      for (const auto& c : plan.cases) ids.insert(c.case_id);
      for (auto& c : captured.cases) {
        if (!op.dtypes.contains(c.dtype)) continue;
        if (ids.contains(c.case_id)) c.case_id = "captured." + c.case_id;
        ids.insert(c.case_id);
        plan.cases.push_back(std::move(c));
      }
    }
  }
  plan.sort_dtype_major();
  plan.validate();
  return plan;
}

void ArtifactStore::put(const StoredArtifact& a) const {
  const auto src = source_path(a.op_name, a.run_id);
  fs::create_directories(src.parent_path());
  util::write_file_atomic(src, a.module_source);
  const json meta = {{"operator", a.op_name},
                     {"run_id", a.run_id},
                     {"status", a.passed ? "passed" : "failed"},
                     {"failure_stage", fsm::to_string(a.failure_stage)}};
  util::write_file_atomic(src.parent_path() / (a.run_id + ".meta.json"), meta.dump(2) + "\n");
}

fs::path ArtifactStore::source_path(const std::string& op_name, const std::string& run_id) const {
  return root_ / file_stem(op_name) / (run_id + ".src");
}

std::optional<StoredArtifact> ArtifactStore::get(const std::string& op_name,
                                                 const std::string& run_id) const {
  const auto src = source_path(op_name, run_id);
  const auto meta_path = src.parent_path() / (run_id + ".meta.json");
  if (!fs::exists(src) || !fs::exists(meta_path)) return std::nullopt;
  const json meta = json::parse(util::read_file(meta_path), nullptr, false);
  if (meta.is_discarded()) throw Error(ErrorCode::kParseError, "corrupt artifact metadata " + meta_path.string());
  StoredArtifact a;
  a.op_name = meta.value("operator", op_name);
  a.run_id = run_id;
  a.module_source = util::read_file(src);
  a.passed = meta.value("status", "") == "passed";
  a.failure_stage =
      fsm::parse_failure_stage(meta.value("failure_stage", "none")).value_or(fsm::FailureStage::kNone);
  return a;
}

std::vector<StoredArtifact> ArtifactStore::list(const std::string& run_id) const {
  std::vector<StoredArtifact> out;
  if (!fs::is_directory(root_)) return out;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory()) continue;
    const auto meta_path = entry.path() / (run_id + ".meta.json");
    if (!fs::exists(meta_path)) continue;
    const json meta = json::parse(util::read_file(meta_path), nullptr, false);
    if (meta.is_discarded() || !meta.contains("operator")) continue;
    if (auto a = get(meta["operator"].get<std::string>(), run_id)) out.push_back(std::move(*a));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.op_name < b.op_name; });
  return out;
}

std::map<std::string, prompt::CandidateArtifact> load_seeds(const ArtifactStore& store,
                                                            const std::string& run_id) {
  std::map<std::string, prompt::CandidateArtifact> seeds;
  for (auto& a : store.list(run_id)) {
    seeds.emplace(a.op_name, prompt::make_artifact("", a.module_source));
  }
  return seeds;
}

fsm::FsmEvent replay_artifact(protocol::WorkerPool& pool, const std::string& module_source,
                              const testing::TestPlan& plan,
                              const testing::TolerancePolicy& policy) {
  auto lease = pool.lease();
  return fsm::execute_plan(*lease, module_source, plan, policy);
}

RunResult dispatch_run(const RunConfig& config, const RunServices& services) {
  config.validate();
  if (!services.catalog || !services.gateway) {
    throw Error(ErrorCode::kInvalidArgument, "dispatch_run needs a catalog and an LLM gateway");
  }
  const auto& catalog = *services.catalog;
  const auto run_dir = config.run_dir();
  if (fs::exists(run_dir / report::kRunHeaderFile) || fs::exists(run_dir / report::kReportFile)) {
    throw Error(ErrorCode::kInvalidArgument,
                "run '" + config.run_id + "' already exists in " + config.output_dir.string());
  }
  const auto ops = select_operators(config, catalog);
  fs::create_directories(run_dir / report::kRecordsDir);
  util::write_file_atomic(run_dir / report::kRunHeaderFile,
                          run_header(config, catalog, ops, "").dump(2) + "\n");

  std::unique_ptr<protocol::WorkerPool> owned_pool;
  protocol::WorkerPool* pool = services.pool;
  if (!pool) {
    if (config.workers.empty()) throw Error(ErrorCode::kInvalidArgument, "no workers configured");
    owned_pool = std::make_unique<protocol::WorkerPool>(config.workers, config.pool);
    pool = owned_pool.get();
  }

  fsm::SessionDeps session_deps;
  session_deps.gateway = services.gateway;
  session_deps.summarizer = services.summarizer;
  session_deps.generation_params = config.generation;
  session_deps.summarizer_params = config.summarizer;
  session_deps.lint_config = services.lint_config ? services.lint_config : &lint::default_lint_config();
  session_deps.docstrings = &catalog.dag();
  session_deps.examples =
      services.examples ? services.examples : &prompt::default_reference_examples();

  RecordSink sink(run_dir / report::kRecordsDir, ArtifactStore(config.artifact_dir), config.run_id);
  std::vector<report::OperatorRecord> records(ops.size());
  std::vector<double> seconds(ops.size(), 0.0);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> in_flight{0};
  std::atomic<std::size_t> peak{0};
  std::atomic<bool> pool_lost{false};
  const auto run_start = std::chrono::steady_clock::now();

  auto run_one = [&](const catalog::OperatorSpec& op) -> report::OperatorRecord {
    std::optional<prompt::CandidateArtifact> artifact;
    report::OperatorRecord rec;
    try {
      const auto plan = resolve_plan(op, config.session, config.captured_plans_dir);
      const prompt::CandidateArtifact* seed = nullptr;
      if (auto it = services.seeds.find(op.name); it != services.seeds.end()) seed = &it->second;

      if (seed && services.replay_seeds && !plan.cases.empty()) {
        std::optional<fsm::FsmEvent> replayed;
        try {
          replayed = replay_artifact(*pool, seed->module_source, plan, config.session.tolerance);
        } catch (const Error&) {
          // The session below leases again and records the worker failure.
        }
        if (replayed && replayed->kind == fsm::EventKind::kAllTestsPassed) {
          rec.name = op.name;
          rec.category = op.category;
          rec.passed = true;
          rec.replayed = true;
          rec.calls_to_success = 0;
          sink.write(rec, *seed);
          return rec;
        }
      }

      fsm::OperatorDeps deps;
      deps.session = session_deps;
      deps.pool = pool;
      deps.transcript_dir = run_dir / file_stem(op.name);
      if (services.on_lease) {
        deps.on_lease = [&](protocol::WorkerHandle& w) { services.on_lease(op.name, w); };
      }
      const auto result = fsm::run_operator(op, plan, config.session, deps, seed);
      if (result.lease_error == ErrorCode::kWorkerSpawnFailed) pool_lost = true;
      rec = record_from(op, result);
      artifact = result.final_artifact ? result.final_artifact : result.latest_artifact;
    } catch (const std::exception& e) {
      rec = infrastructure_record(op, fsm::FailureStage::kSessionPanic,
                                  std::string("session panicked: ") + e.what());
    } catch (...) {
      rec = infrastructure_record(op, fsm::FailureStage::kSessionPanic,
                                  "session panicked with a non-standard exception");
    }
    sink.write(rec, artifact);
    return rec;
  };

  auto worker_loop = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= ops.size()) return;
      const auto& op = ops[i];
      if (pool_lost) {
        records[i] = infrastructure_record(op, fsm::FailureStage::kWorkerLost,
                                           "not run: worker pool lost");
        sink.write(records[i], std::nullopt);
        continue;
      }
      const std::size_t now = in_flight.fetch_add(1) + 1;
      std::size_t seen = peak.load();
      while (now > seen && !peak.compare_exchange_weak(seen, now)) {
      }
      if (services.on_in_flight) services.on_in_flight(now);
      const auto start = std::chrono::steady_clock::now();
      records[i] = run_one(op);
      seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      in_flight.fetch_sub(1);
    }
  };

  const std::size_t threads =
      std::min<std::size_t>(static_cast<std::size_t>(config.parallelism), std::max<std::size_t>(ops.size(), 1));
  std::vector<std::thread> pool_threads;
  pool_threads.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool_threads.emplace_back(worker_loop);
  for (auto& t : pool_threads) t.join();

  RunResult out;
  out.run_dir = run_dir;
  out.peak_in_flight = peak.load();
  auto& rep = out.report;
  rep.run_id = config.run_id;
  rep.catalog_fingerprint = catalog.fingerprint();
  rep.config = config_snapshot(config);
  rep.max_calls_per_operator = config.session.max_attempts * config.session.max_llm_calls;
  rep.operators = std::move(records);
  std::sort(rep.operators.begin(), rep.operators.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  if (pool_lost) {
    rep.complete = false;
    rep.incomplete_reason = "worker pool lost; later operators were not run";
    util::write_file_atomic(run_dir / report::kRunHeaderFile,
                            run_header(config, catalog, ops, rep.incomplete_reason).dump(2) + "\n");
  }

  out.timings.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
  for (std::size_t i = 0; i < ops.size(); ++i) out.timings.operator_seconds[ops[i].name] = seconds[i];

  util::write_file_atomic(run_dir / report::kReportFile, report::render_report_json(rep));
  util::write_file_atomic(run_dir / "timings.json", report::to_json(out.timings).dump(2) + "\n");
  util::write_file_atomic(run_dir / "operators.csv", report::render_operators_csv(rep));
  util::write_file_atomic(run_dir / "categories.csv",
                          report::render_categories_csv(report::coverage_by_category(rep)));
  util::write_file_atomic(run_dir / "curve.csv", report::render_curve_csv(report::cumulative_curve(rep)));
  util::write_file_atomic(run_dir / "summary.txt", report::render_summary(rep));
  return out;
}

}  // namespace opforge::campaign
