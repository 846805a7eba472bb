// opforge: campaign driver. Subcommands run, lint, report, aggregate,
// refine and replay. Failed operators are results, not errors; `run` and
// `refine` exit 0 whenever a report was written.

#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "opforge/campaign.hpp"
#include "opforge/error.hpp"
#include "opforge/lint.hpp"
#include "opforge/llm.hpp"
#include "opforge/report.hpp"
#include "opforge/util.hpp"

namespace fs = std::filesystem;
using namespace opforge;
using nlohmann::json;

namespace {

struct WorkerFlags {
  std::string command;
  int count = 1;
  std::string backend = "mock";
  std::string script;
  bool tcp = false;
  std::vector<std::string> remotes;

  void add_to(CLI::App& app) {
    app.add_option("--worker-cmd", command, "worker executable (and leading args); in-process mock when empty");
    app.add_option("--workers", count, "number of worker slots")->check(CLI::PositiveNumber);
    app.add_option("--backend", backend, "worker backend: jit, interpreter or mock");
    app.add_option("--worker-script", script, "mock worker outcome script");
    app.add_flag("--worker-tcp", tcp, "talk to spawned workers over TCP instead of stdio");
    app.add_option("--remote", remotes, "host:port of a running worker (repeatable)");
  }

  std::vector<protocol::WorkerSpec> specs() const {
    std::vector<protocol::WorkerSpec> out;
    const auto backend_kind = protocol::parse_backend(backend);
    if (!backend_kind) throw Error(ErrorCode::kInvalidArgument, "unknown backend '" + backend + "'");
    for (const auto& r : remotes) {
      const auto colon = r.rfind(':');
      if (colon == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "--remote needs host:port");
      protocol::WorkerSpec s;
      s.kind = protocol::WorkerSpec::Kind::kRemote;
      s.host = r.substr(0, colon);
      s.port = std::stoi(r.substr(colon + 1));
      out.push_back(s);
    }
    if (!out.empty()) return out;
    protocol::WorkerSpec s;
    s.backend = *backend_kind;
    if (!command.empty()) {
      s.kind = protocol::WorkerSpec::Kind::kSubprocess;
      std::istringstream words(command);
      for (std::string w; words >> w;) s.command.push_back(w);
      s.mock_script_path = script;
      s.use_tcp = tcp;
    } else {
      s.kind = protocol::WorkerSpec::Kind::kInProcess;
      if (!script.empty()) s.in_process_script = protocol::load_mock_script(util::read_file(script));
    }
    return std::vector<protocol::WorkerSpec>(static_cast<std::size_t>(count), s);
  }
};

struct LlmFlags {
  std::string mock_script;
  std::string mock_summarizer_script;

  void add_to(CLI::App& app) {
    app.add_option("--mock-llm", mock_script, "answer generation requests from a mock LLM script");
    app.add_option("--mock-summarizer", mock_summarizer_script,
                   "answer summarization requests from a mock LLM script");
  }
};

/// Generation and summarizer gateways. Endpoints and keys come from
/// OPFORGE_LLM_* and OPFORGE_SUMMARIZER_* unless a mock script is given.
struct Gateways {
  std::unique_ptr<llm::LlmGateway> generation;
  std::unique_ptr<llm::LlmGateway> summarizer;

  explicit Gateways(const LlmFlags& flags) {
    auto make = [](const std::string& script, const std::string& env_prefix,
                   bool required) -> std::shared_ptr<llm::ChatBackend> {
      if (!script.empty()) {
        const fs::path path(script);
        return std::make_shared<llm::MockChatBackend>(
            llm::load_mock_llm_script(util::read_file(path), path.parent_path().string()));
      }
      if (auto endpoint = llm::endpoint_from_env(env_prefix)) {
        return std::make_shared<llm::HttpChatBackend>(*endpoint);
      }
      if (required) {
        throw Error(ErrorCode::kInvalidArgument,
                    "no LLM configured: set " + env_prefix + "_URL or pass --mock-llm");
      }
      return nullptr;
    };
    auto gen = make(flags.mock_script, "OPFORGE_LLM", true);
    generation = std::make_unique<llm::LlmGateway>(gen);
    if (auto sum = make(flags.mock_summarizer_script, "OPFORGE_SUMMARIZER", false)) {
      summarizer = std::make_unique<llm::LlmGateway>(sum);
    }
  }
};

/// Flags shared by `run` and `refine`; a --config file overrides them.
struct RunFlags {
  std::string catalog_path;
  std::string config_path;
  std::string lint_config_path;
  campaign::RunConfig config;
  std::string test_source;
  std::vector<std::string> dtypes;
  std::string captured;
  bool no_linter = false;
  bool no_summarization = false;
  int deadline_s = 0;
  WorkerFlags workers;
  LlmFlags llm;

  void add_to(CLI::App& app) {
    app.add_option("--catalog", catalog_path, "operator catalog (JSON)")->required();
    app.add_option("--config", config_path, "run config (JSON); overrides flags");
    app.add_option("--lint-config", lint_config_path, "lint config (YAML)");
    app.add_option("--run-id", config.run_id, "unique name within the output directory");
    app.add_option("--output-dir", config.output_dir, "directory holding runs");
    app.add_option("--artifact-dir", config.artifact_dir, "artifact store root");
    app.add_option("--parallelism", config.parallelism, "concurrent sessions")->check(CLI::PositiveNumber);
    app.add_option("--operators", config.operators, "restrict to these operators");
    app.add_option("--dtypes", dtypes, "allowed dtypes");
    app.add_option("--max-test-count", config.filter.max_test_count, "skip operators with this many tests or more");
    app.add_option("--max-llm-calls", config.session.max_llm_calls, "generation calls per session");
    app.add_option("--max-attempts", config.session.max_attempts, "sessions per operator");
    app.add_option("--cases-per-dtype", config.session.cases_per_dtype, "OpInfo-style cases per dtype");
    app.add_option("--test-source", test_source, "opinfo, captured or both");
    app.add_option("--captured-plans", captured, "directory of <operator>.json captured plans");
    app.add_option("--deadline", deadline_s, "per-operator wall-clock cap in seconds");
    app.add_flag("--no-linter", no_linter, "skip the lint stage (ablation)");
    app.add_flag("--no-summarization", no_summarization, "embed raw compile logs (ablation)");
    app.add_option("--model", config.generation.model_id, "generation model id");
    app.add_option("--temperature", config.generation.temperature, "generation temperature");
    app.add_option("--summarizer-model", config.summarizer.model_id, "summarizer model id");
    workers.add_to(app);
    llm.add_to(app);
  }

  campaign::RunConfig resolve() {
    auto c = config;
    if (!dtypes.empty()) {
      c.filter.allowed_dtypes.clear();
      for (const auto& d : dtypes) {
        const auto parsed = parse_dtype(d);
        if (!parsed) throw Error(ErrorCode::kInvalidArgument, "unknown dtype '" + d + "'");
        c.filter.allowed_dtypes.insert(*parsed);
      }
    }
    if (!test_source.empty()) {
      const auto mode = fsm::parse_test_source_mode(test_source);
      if (!mode) throw Error(ErrorCode::kInvalidArgument, "unknown test source '" + test_source + "'");
      c.session.test_source = *mode;
    }
    if (!captured.empty()) c.captured_plans_dir = fs::path(captured);
    if (no_linter) c.session.linter_enabled = false;
    if (no_summarization) c.session.summarization_enabled = false;
    if (deadline_s > 0) c.session.operator_deadline = std::chrono::seconds(deadline_s);
    c.workers = workers.specs();
    if (!config_path.empty()) {
      const fs::path path(config_path);
      c = campaign::run_config_from_json(json::parse(util::read_file(path)), path.parent_path(), c);
    }
    c.validate();
    return c;
  }
};

int finish_run(const campaign::RunResult& result) {
  std::cout << report::render_summary(result.report);
  std::cout << "\nreport: " << (result.run_dir / report::kReportFile).string() << '\n';
  return 0;
}

int cmd_run(RunFlags& flags, const std::string& retry_from) {
  auto config = flags.resolve();
  if (!retry_from.empty()) {
    config.operators = report::failed_operators(report::load_report(retry_from));
    if (config.operators.empty()) {
      std::cout << "no failed operators in " << retry_from << "; nothing to run\n";
      return 0;
    }
  }
  const auto catalog = catalog::load_catalog(util::read_file(flags.catalog_path));
  std::optional<lint::LintConfig> lint_config;
  if (!flags.lint_config_path.empty()) lint_config = lint::load_lint_config(util::read_file(flags.lint_config_path));
  Gateways gateways(flags.llm);
  campaign::RunServices services;
  services.catalog = &catalog;
  services.gateway = gateways.generation.get();
  services.summarizer = gateways.summarizer.get();
  services.lint_config = lint_config ? &*lint_config : nullptr;
  return finish_run(campaign::dispatch_run(config, services));
}

int cmd_refine(RunFlags& flags, const std::string& prior_run) {
  if (flags.test_source.empty()) flags.test_source = "captured";
  auto config = flags.resolve();
  const auto catalog = catalog::load_catalog(util::read_file(flags.catalog_path));
  Gateways gateways(flags.llm);
  campaign::RunServices services;
  services.catalog = &catalog;
  services.gateway = gateways.generation.get();
  services.summarizer = gateways.summarizer.get();
  services.seeds = campaign::load_seeds(campaign::ArtifactStore(config.artifact_dir), prior_run);
  services.replay_seeds = true;
  if (services.seeds.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no artifacts stored for run '" + prior_run + "' under " + config.artifact_dir.string());
  }
  if (config.operators.empty()) {
    for (const auto& [op, artifact] : services.seeds) {
      if (catalog.find(op)) config.operators.push_back(op);
    }
  }
  return finish_run(campaign::dispatch_run(config, services));
}

int cmd_lint(const std::string& file, const std::string& config_path, const std::string& format) {
  const auto config = config_path.empty() ? lint::default_lint_config()
                                          : lint::load_lint_config(util::read_file(config_path));
  const auto rep = lint::lint_source(util::read_file(file), config);
  std::cout << (format == "json" ? rep.to_json() + "\n" : rep.render());
  if (format != "json" && rep.pass()) std::cout << file << ": clean\n";
  return rep.pass() ? 0 : 1;
}

void emit(const std::string& text, const std::string& out_dir, const std::string& file) {
  if (out_dir.empty()) {
    std::cout << text;
  } else {
    util::write_file_atomic(fs::path(out_dir) / file, text);
  }
}

int cmd_report(const std::string& path, const std::string& format, const std::string& out_dir) {
  const auto rep = report::load_report(path);
  if (format == "summary") emit(report::render_summary(rep), out_dir, "summary.txt");
  else if (format == "operators") emit(report::render_operators_csv(rep), out_dir, "operators.csv");
  else if (format == "categories") emit(report::render_categories_csv(report::coverage_by_category(rep)), out_dir, "categories.csv");
  else if (format == "curve") emit(report::render_curve_csv(report::cumulative_curve(rep)), out_dir, "curve.csv");
  else if (format == "json") emit(report::render_report_json(rep), out_dir, "report.json");
  else throw Error(ErrorCode::kInvalidArgument, "unknown format '" + format + "'");
  return 0;
}

int cmd_aggregate(const std::vector<std::string>& paths, const std::string& format,
                  const std::string& out_dir) {
  std::vector<report::RunReport> reports;
  for (const auto& p : paths) reports.push_back(report::load_report(p));
  const auto agg = report::aggregate_runs(reports);
  if (!out_dir.empty()) {
    util::write_file_atomic(fs::path(out_dir) / "aggregate.json", report::to_json(agg).dump(2) + "\n");
    util::write_file_atomic(fs::path(out_dir) / "categories.csv",
                            report::render_categories_csv(report::coverage_by_category(agg)));
    util::write_file_atomic(fs::path(out_dir) / "curve.csv", report::render_curve_csv(report::cumulative_curve(agg)));
    util::write_file_atomic(fs::path(out_dir) / "summary.txt", report::render_summary(agg));
  }
  if (format == "summary") std::cout << report::render_summary(agg);
  else if (format == "json") std::cout << report::to_json(agg).dump(2) << '\n';
  else if (format == "categories") std::cout << report::render_categories_csv(report::coverage_by_category(agg));
  else if (format == "curve") std::cout << report::render_curve_csv(report::cumulative_curve(agg));
  else throw Error(ErrorCode::kInvalidArgument, "unknown format '" + format + "'");
  return 0;
}

struct ReplayFlags {
  std::string catalog_path;
  std::string op;
  std::string artifact_file;
  std::string artifact_dir = "artifacts";
  std::string from_run;
  std::string test_source = "opinfo";
  std::string captured;
  int cases_per_dtype = 3;
  WorkerFlags workers;
};

int cmd_replay(const ReplayFlags& f) {
  const auto catalog = catalog::load_catalog(util::read_file(f.catalog_path));
  const auto* op = catalog.find(f.op);
  if (!op) throw Error(ErrorCode::kUnknownOperator, "unknown operator '" + f.op + "'");
  std::string source;
  if (!f.artifact_file.empty()) {
    source = util::read_file(f.artifact_file);
  } else {
    const auto stored = campaign::ArtifactStore(f.artifact_dir).get(f.op, f.from_run);
    if (!stored) throw Error(ErrorCode::kInvalidArgument, "no artifact for " + f.op + " in run '" + f.from_run + "'");
    source = stored->module_source;
  }
  fsm::SessionConfig session;
  session.cases_per_dtype = f.cases_per_dtype;
  const auto mode = fsm::parse_test_source_mode(f.test_source);
  if (!mode) throw Error(ErrorCode::kInvalidArgument, "unknown test source '" + f.test_source + "'");
  session.test_source = *mode;
  std::optional<fs::path> captured;
  if (!f.captured.empty()) captured = fs::path(f.captured);
  const auto plan = campaign::resolve_plan(*op, session, captured);
  if (plan.cases.empty()) {
    std::cout << "NO TESTS " << f.op << '\n';
    return 1;
  }
  protocol::WorkerPool pool(f.workers.specs());
  const auto event = campaign::replay_artifact(pool, source, plan, session.tolerance);
  if (event.kind == fsm::EventKind::kAllTestsPassed) {
    std::cout << "PASSED " << f.op << " (" << plan.cases.size() << " cases)\n";
    return 0;
  }
  std::cout << "FAILED " << f.op << ": " << fsm::to_string(event.kind) << '\n';
  if (const auto* text = std::get_if<std::string>(&event.payload)) std::cout << *text << '\n';
  if (const auto* acc = std::get_if<testing::AccuracyPayload>(&event.payload)) {
    std::cout << "device: " << acc->device_summary.render() << "\ncpu:    " << acc->cpu_summary.render() << '\n';
  }
  if (const auto* crash = std::get_if<testing::CrashReport>(&event.payload)) {
    std::cout << crash->render() << '\n';
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"opforge: LLM-driven kernel generation campaigns"};
  app.require_subcommand(1);

  RunFlags run_flags;
  std::string retry_from;
  auto* run = app.add_subcommand("run", "run a campaign over the catalog");
  run_flags.add_to(*run);
  run->add_option("--retry-failed-from", retry_from, "prior report.json; schedule only its failures");

  RunFlags refine_flags;
  std::string prior_run;
  auto* refine = app.add_subcommand("refine", "re-verify stored artifacts on captured inputs, resume failures");
  refine_flags.add_to(*refine);
  refine->add_option("--from-run", prior_run, "run whose artifacts seed this one")->required();

  std::string lint_file, lint_config, lint_format = "text";
  auto* lint_cmd = app.add_subcommand("lint", "lint one candidate module");
  lint_cmd->add_option("file", lint_file, "candidate source")->required();
  lint_cmd->add_option("--config", lint_config, "lint config (YAML)");
  lint_cmd->add_option("--format", lint_format, "text or json");

  std::string report_path, report_format = "summary", report_out;
  auto* report_cmd = app.add_subcommand("report", "render tables and curves from a report");
  report_cmd->add_option("report", report_path, "report.json")->required();
  report_cmd->add_option("--format", report_format, "summary, operators, categories, curve or json");
  report_cmd->add_option("--out", report_out, "write to a file in this directory instead of stdout");

  std::vector<std::string> agg_paths;
  std::string agg_format = "summary", agg_out;
  auto* agg_cmd = app.add_subcommand("aggregate", "union of several runs");
  agg_cmd->add_option("reports", agg_paths, "report.json files")->required();
  agg_cmd->add_option("--format", agg_format, "summary, json, categories or curve");
  agg_cmd->add_option("--out", agg_out, "also write aggregate files here");

  ReplayFlags replay_flags;
  auto* replay = app.add_subcommand("replay", "re-verify a stored artifact");
  replay->add_option("--catalog", replay_flags.catalog_path, "operator catalog (JSON)")->required();
  replay->add_option("--op", replay_flags.op, "operator name")->required();
  replay->add_option("--artifact", replay_flags.artifact_file, "module source file");
  replay->add_option("--artifact-dir", replay_flags.artifact_dir, "artifact store root");
  replay->add_option("--from-run", replay_flags.from_run, "run id inside the artifact store");
  replay->add_option("--test-source", replay_flags.test_source, "opinfo, captured or both");
  replay->add_option("--captured-plans", replay_flags.captured, "captured plan directory");
  replay->add_option("--cases-per-dtype", replay_flags.cases_per_dtype, "OpInfo-style cases per dtype");
  replay_flags.workers.add_to(*replay);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_flags, retry_from);
    if (*refine) return cmd_refine(refine_flags, prior_run);
    if (*lint_cmd) return cmd_lint(lint_file, lint_config, lint_format);
    if (*report_cmd) return cmd_report(report_path, report_format, report_out);
    if (*agg_cmd) return cmd_aggregate(agg_paths, agg_format, agg_out);
    if (*replay) {
      if (replay_flags.artifact_file.empty() && replay_flags.from_run.empty()) {
        std::cerr << "opforge replay: pass --artifact or --from-run\n";
        return 2;
      }
      return cmd_replay(replay_flags);
    }
  } catch (const Error& e) {
    std::cerr << "opforge: " << e.what() << " [" << to_string(e.code()) << "]\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "opforge: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
