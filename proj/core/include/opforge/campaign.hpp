#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opforge/catalog.hpp"
#include "opforge/fsm.hpp"
#include "opforge/lint.hpp"
#include "opforge/llm.hpp"
#include "opforge/prompt.hpp"
#include "opforge/report.hpp"
#include "opforge/worker_pool.hpp"

namespace opforge::campaign {

struct RunConfig {
  std::string run_id = "run";
  catalog::FilterPolicy filter;
  /// Restricts the filtered set to these names when non-empty.
  std::vector<std::string> operators;
  fsm::SessionConfig session;
  llm::ModelParams generation;
  llm::ModelParams summarizer;
  std::vector<protocol::WorkerSpec> workers;
  protocol::PoolOptions pool;
  int parallelism = 8;
  std::filesystem::path output_dir = "runs";
  std::filesystem::path artifact_dir = "artifacts";
  /// Holds <operator>.json test plans with captured inputs.
  std::optional<std::filesystem::path> captured_plans_dir;

  /// Throws Error(kInvalidArgument).
  void validate() const;
  std::filesystem::path run_dir() const { return output_dir / run_id; }
};

/// The parts of a config that shape results. Paths and endpoints are left
/// out so identical campaigns in different directories report identically.
nlohmann::json config_snapshot(const RunConfig& config);

/// Reads a run config document. Relative paths resolve against `base_dir`.
/// Keys that are absent keep the values already in `base`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                               RunConfig base = {});

nlohmann::json filter_policy_to_json(const catalog::FilterPolicy& policy);
catalog::FilterPolicy filter_policy_from_json(const nlohmann::json& j);

/// Filtered catalog operators, narrowed to RunConfig::operators when set.
/// Throws Error(kUnknownOperator) for a requested name the catalog lacks.
std::vector<catalog::OperatorSpec> select_operators(const RunConfig& config,
                                                    const catalog::OperatorCatalog& catalog);

/// OpInfo-style, captured, or both, per SessionConfig::test_source. A
/// missing captured plan contributes no cases.
testing::TestPlan resolve_plan(const catalog::OperatorSpec& op, const fsm::SessionConfig& session,
                               const std::optional<std::filesystem::path>& captured_plans_dir);

struct StoredArtifact {
  std::string op_name;
  std::string run_id;
  std::string module_source;
  bool passed = false;
  fsm::FailureStage failure_stage = fsm::FailureStage::kNone;
};

/// artifacts/<operator>/<run_id>.src with a <run_id>.meta.json sidecar.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {}

  void put(const StoredArtifact& artifact) const;
  std::optional<StoredArtifact> get(const std::string& op_name, const std::string& run_id) const;
  /// Every artifact stored under `run_id`, sorted by operator.
  std::vector<StoredArtifact> list(const std::string& run_id) const;
  std::filesystem::path source_path(const std::string& op_name, const std::string& run_id) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

struct RunServices {
  const catalog::OperatorCatalog* catalog = nullptr;
  llm::LlmGateway* gateway = nullptr;
  llm::LlmGateway* summarizer = nullptr;
  const lint::LintConfig* lint_config = nullptr;
  const std::vector<prompt::ReferenceExample>* examples = nullptr;
  /// Built from RunConfig::workers when null.
  protocol::WorkerPool* pool = nullptr;
  /// Candidates that seed an operator's first session (InitResume).
  std::map<std::string, prompt::CandidateArtifact> seeds;
  /// Re-verify a seed against the plan before spending any LLM call.
  bool replay_seeds = false;
  /// Fault injection and instrumentation.
  std::function<void(const std::string& op, protocol::WorkerHandle&)> on_lease;
  std::function<void(std::size_t in_flight)> on_in_flight;
};

struct RunResult {
  report::RunReport report;
  report::RunTimings timings;
  std::filesystem::path run_dir;
  std::size_t peak_in_flight = 0;
};

/// Runs every selected operator once, at most `parallelism` at a time.
/// A session that throws or loses its worker is recorded as an
/// infrastructure failure and the rest carry on. Per-operator records are
/// written as each finishes; report.json and the tables at the end. Losing
/// the whole pool marks unscheduled operators and the report incomplete.
/// Throws Error(kInvalidArgument) when the run directory already holds a run.
RunResult dispatch_run(const RunConfig& config, const RunServices& services);

/// Seeds for a refine pass: the artifacts a prior run stored.
std::map<std::string, prompt::CandidateArtifact> load_seeds(const ArtifactStore& store,
                                                            const std::string& run_id);

/// Re-verifies one module against a plan on a leased worker.
fsm::FsmEvent replay_artifact(protocol::WorkerPool& pool, const std::string& module_source,
                              const testing::TestPlan& plan,
                              const testing::TolerancePolicy& policy);

}  // namespace opforge::campaign
