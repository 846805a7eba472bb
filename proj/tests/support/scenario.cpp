#include "scenario.hpp"

#include <cstdio>
#include <stdexcept>

#include "opforge/prompt.hpp"
#include "test_support.hpp"

namespace opforge::testkit {

std::string fenced(const std::string& module_source) {
  return "Here is the implementation.\n\n```python\n" + module_source + "```\n";
}

std::string exp_module(const std::string& marker) {
  std::string src = prompt::default_reference_examples().front().module_source();
  if (!marker.empty()) {
    const std::string anchor = "    BLOCK_SIZE = 128\n";
    const auto pos = src.find(anchor);
    if (pos == std::string::npos) throw std::logic_error("exp example changed shape");
    src.insert(pos + anchor.size(), "    marker_" + marker + " = 0\n");
  }
  return src;
}

std::string log1p_module() { return read_fixture("lint/logsigmoid_v1.py"); }

const catalog::OperatorCatalog& small_catalog() {
  static const auto cat = catalog::load_catalog(read_fixture("catalog/small.json"));
  return cat;
}

const catalog::OperatorSpec& catalog_op(const std::string& name) {
  const auto* op = small_catalog().find(name);
  if (!op) throw std::logic_error("small catalog lacks " + name);
  return *op;
}

std::string synthetic_name(std::size_t i, const std::string& prefix) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%03zu", i);
  return prefix + buf;
}

std::string synthetic_catalog_json(std::size_t n, const std::string& prefix) {
  nlohmann::json ops = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const auto name = synthetic_name(i, prefix);
    ops.push_back({{"name", name},
                   {"docstring", name + "(input) -> Tensor\nSynthetic operator " + std::to_string(i) + "."},
                   {"dtypes", {"float32"}},
                   {"test_count", 10},
                   {"tags", nlohmann::json::array()},
                   {"category", catalog::to_string(catalog::kAllCategories[i % catalog::kCategoryCount])}});
  }
  return nlohmann::json{{"schema_version", 1}, {"operators", ops}}.dump(2);
}

catalog::OperatorCatalog synthetic_catalog(std::size_t n, const std::string& prefix) {
  return catalog::load_catalog(synthetic_catalog_json(n, prefix));
}

llm::MockEntry reply(std::string text, std::optional<std::size_t> call,
                     std::optional<std::string> tag) {
  llm::MockEntry e;
  e.text = std::move(text);
  e.call = call;
  e.tag = std::move(tag);
  return e;
}

Harness::Harness(llm::MockLlmScript script, const std::string& worker_script,
                 llm::ModelParams generation, std::size_t workers) {
  backend = std::make_shared<llm::MockChatBackend>(std::move(script));
  llm::MockLlmScript summaries;
  llm::MockEntry s = reply("SUMMARY: error: unsupported layout at kernel line 7");
  s.repeat = true;
  summaries.entries.push_back(s);
  summarizer_backend = std::make_shared<llm::MockChatBackend>(summaries);
  llm::GatewayOptions options;
  options.sleeper = [](std::chrono::milliseconds) {};
  gateway = std::make_unique<llm::LlmGateway>(backend, options);
  summarizer = std::make_unique<llm::LlmGateway>(summarizer_backend, options);

  std::vector<protocol::WorkerSpec> specs;
  for (std::size_t i = 0; i < workers; ++i) {
    protocol::WorkerSpec spec;
    spec.kind = protocol::WorkerSpec::Kind::kInProcess;
    spec.in_process_script = protocol::load_mock_script(worker_script);
    specs.push_back(spec);
  }
  pool = std::make_unique<protocol::WorkerPool>(specs);

  deps.session.gateway = gateway.get();
  deps.session.summarizer = summarizer.get();
  deps.session.generation_params = generation;
  deps.session.lint_config = &lint::default_lint_config();
  deps.session.docstrings = &small_catalog().dag();
  deps.session.examples = &prompt::default_reference_examples();
  deps.pool = pool.get();
}

testing::TestPlan Harness::plan(const catalog::OperatorSpec& op, int cases_per_dtype) const {
  auto p = testing::make_opinfo_plan(op.name, op.dtypes, cases_per_dtype);
  p.sort_dtype_major();
  return p;
}

}  // namespace opforge::testkit
