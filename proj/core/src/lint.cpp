#include "opforge/lint.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "opforge/error.hpp"
#include "opforge/resources.hpp"

namespace opforge::lint {
namespace {

constexpr std::array<std::pair<RuleId, std::string_view>, 10> kRuleNames = {{
    {RuleId::kSyntaxError, "syntax_error"},
    {RuleId::kOutputFormat, "output_format"},
    {RuleId::kStructure, "structure"},
    {RuleId::kJitDecorator, "jit_decorator"},
    {RuleId::kNoImports, "no_imports"},
    {RuleId::kModuleRestrictions, "module_restrictions"},
    {RuleId::kModuleScopeRestrictions, "module_scope_restrictions"},
    {RuleId::kForbiddenTensorMethods, "forbidden_tensor_methods"},
    {RuleId::kForbiddenFunctionArguments, "forbidden_function_arguments"},
    {RuleId::kForbiddenFunctions, "forbidden_functions"},
}};

[[noreturn]] void config_error(const std::string& msg) {
  throw Error(ErrorCode::kParseError, "lint config: " + msg);
}

std::string join(const std::set<std::string>& items, std::string_view sep = ", ") {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

std::string root_of(std::string_view path) {
  return std::string(path.substr(0, path.find('.')));
}

// -- YAML helpers -----------------------------------------------------------

void check_keys(const YAML::Node& node, const std::string& where,
                std::initializer_list<std::string_view> allowed) {
  if (!node.IsMap()) config_error(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

bool read_bool(const YAML::Node& node, const char* key, bool fallback) {
  if (!node[key]) return fallback;
  try {
    return node[key].as<bool>();
  } catch (const YAML::Exception&) {
    config_error(std::string(key) + " must be a boolean");
  }
}

std::string read_string(const YAML::Node& node, const char* key, std::string fallback) {
  if (!node[key]) return fallback;
  if (!node[key].IsScalar()) config_error(std::string(key) + " must be a string");
  return node[key].as<std::string>();
}

std::set<std::string> read_string_set(const YAML::Node& node, const char* key) {
  std::set<std::string> out;
  if (!node[key]) return out;
  if (!node[key].IsSequence()) config_error(std::string(key) + " must be a list");
  for (const auto& item : node[key]) {
    if (!item.IsScalar()) config_error(std::string(key) + " entries must be strings");
    out.insert(item.as<std::string>());
  }
  return out;
}

void read_module_restrictions(const YAML::Node& block, LintConfig& cfg) {
  check_keys(block, "module_restrictions", {"enabled", "description", "modules"});
  cfg.module_restrictions_enabled = read_bool(block, "enabled", true);
  if (block["modules"] && !block["modules"].IsSequence()) config_error("modules must be a list");
  for (const auto& m : block["modules"]) {
    check_keys(m, "module_restrictions.modules entry", {"module_name", "allowed_functions"});
    const auto name = read_string(m, "module_name", "");
    if (name.empty()) config_error("module_restrictions entry without module_name");
    auto allowed = read_string_set(m, "allowed_functions");
    for (const auto& fn : allowed) {
      if (fn.rfind(name + ".", 0) != 0) {
        config_error("allowed function '" + fn + "' is not under module '" + name + "'");
      }
    }
    if (cfg.module_restrictions_enabled && allowed.empty()) {
      config_error("module '" + name + "' has an empty allowlist");
    }
    if (!cfg.module_allowlists.emplace(name, std::move(allowed)).second) {
      config_error("module '" + name + "' listed twice");
    }
  }
  if (cfg.module_restrictions_enabled && cfg.module_allowlists.empty()) {
    config_error("module_restrictions is enabled but lists no modules");
  }
}

void read_scope_restrictions(const YAML::Node& block, LintConfig& cfg) {
  check_keys(block, "module_scope_restrictions", {"enabled", "description", "restrictions"});
  cfg.scope_restrictions_enabled = read_bool(block, "enabled", true);
  if (block["restrictions"] && !block["restrictions"].IsSequence()) {
    config_error("restrictions must be a list");
  }
  for (const auto& r : block["restrictions"]) {
    check_keys(r, "module_scope_restrictions entry", {"module", "allowed_scope_patterns"});
    const auto module = read_string(r, "module", "");
    if (module.empty()) config_error("scope restriction without module");
    ScopeRestriction sr;
    if (r["allowed_scope_patterns"] && !r["allowed_scope_patterns"].IsSequence()) {
      config_error("allowed_scope_patterns must be a list");
    }
    for (const auto& p : r["allowed_scope_patterns"]) {
      auto pattern = p.as<std::string>();
      if (pattern.empty() || pattern.front() != '^') {
        config_error("scope pattern '" + pattern + "' must be anchored with '^'");
      }
      try {
        sr.compiled.emplace_back(pattern, std::regex::ECMAScript);
      } catch (const std::regex_error&) {
        config_error("invalid scope pattern '" + pattern + "'");
      }
      sr.patterns.push_back(std::move(pattern));
    }
    if (cfg.scope_restrictions_enabled && sr.patterns.empty()) {
      config_error("module '" + module + "' has no allowed scope patterns");
    }
    if (!cfg.scope_restrictions.emplace(module, std::move(sr)).second) {
      config_error("scope restriction for '" + module + "' listed twice");
    }
  }
  if (cfg.scope_restrictions_enabled && cfg.scope_restrictions.empty()) {
    config_error("module_scope_restrictions is enabled but lists no restrictions");
  }
}

void read_tensor_methods(const YAML::Node& block, LintConfig& cfg) {
  check_keys(block, "forbidden_tensor_methods", {"enabled", "description", "forbidden_methods"});
  cfg.forbidden_tensor_methods_enabled = read_bool(block, "enabled", true);
  cfg.forbidden_tensor_methods = read_string_set(block, "forbidden_methods");
  if (cfg.forbidden_tensor_methods_enabled && cfg.forbidden_tensor_methods.empty()) {
    config_error("forbidden_tensor_methods is enabled but lists no methods");
  }
}

void read_function_args(const YAML::Node& block, LintConfig& cfg) {
  check_keys(block, "forbidden_function_arguments", {"enabled", "description", "restrictions"});
  cfg.forbidden_function_args_enabled = read_bool(block, "enabled", true);
  if (block["restrictions"] && !block["restrictions"].IsSequence()) {
    config_error("restrictions must be a list");
  }
  for (const auto& r : block["restrictions"]) {
    check_keys(r, "forbidden_function_arguments entry", {"function", "forbidden_string_args"});
    const auto fn = read_string(r, "function", "");
    if (fn.empty()) config_error("forbidden_function_arguments entry without function");
    auto args = read_string_set(r, "forbidden_string_args");
    if (cfg.forbidden_function_args_enabled && args.empty()) {
      config_error("function '" + fn + "' has no forbidden_string_args");
    }
    cfg.forbidden_function_args[fn].merge(args);
  }
  if (cfg.forbidden_function_args_enabled && cfg.forbidden_function_args.empty()) {
    config_error("forbidden_function_arguments is enabled but lists no restrictions");
  }
}

void read_builtins(const YAML::Node& block, LintConfig& cfg) {
  check_keys(block, "forbidden_functions", {"enabled", "description", "forbidden_functions"});
  cfg.forbidden_builtins_enabled = read_bool(block, "enabled", true);
  cfg.forbidden_builtins = read_string_set(block, "forbidden_functions");
  if (cfg.forbidden_builtins_enabled && cfg.forbidden_builtins.empty()) {
    config_error("forbidden_functions is enabled but lists no functions");
  }
}

void read_structural(const YAML::Node& block, LintConfig& cfg) {
  check_keys(block, "structural",
             {"enabled", "description", "require_wrapper", "kernel_name_prefix",
              "forbid_imports", "jit_decorator"});
  auto& s = cfg.structural;
  s.enabled = read_bool(block, "enabled", true);
  s.require_wrapper = read_bool(block, "require_wrapper", true);
  s.kernel_name_prefix = read_string(block, "kernel_name_prefix", "kernel");
  s.forbid_imports = read_bool(block, "forbid_imports", true);
  s.jit_decorator = read_string(block, "jit_decorator", "triton.jit");
  if (s.enabled && s.kernel_name_prefix.empty()) config_error("kernel_name_prefix must be nonempty");
}

// -- rule application -------------------------------------------------------

void sort_by_line(std::vector<Violation>& v, std::size_t from) {
  std::stable_sort(v.begin() + static_cast<std::ptrdiff_t>(from), v.end(),
                   [](const Violation& a, const Violation& b) { return a.line < b.line; });
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

void check_structure(const SyntaxTree& tree, const StructuralRules& rules,
                     std::vector<Violation>& out) {
  const auto fns = tree.functions();
  const std::string& prefix = rules.kernel_name_prefix;
  if (rules.require_wrapper) {
    std::vector<const FunctionNode*> wrappers;
    for (const auto* f : fns) {
      if (f->name == "wrapper") wrappers.push_back(f);
    }
    if (wrappers.empty()) {
      out.push_back({RuleId::kStructure, "Missing required function 'wrapper'", 0,
                     "The module must define exactly one top-level function named wrapper"});
    } else {
      for (std::size_t i = 1; i < wrappers.size(); ++i) {
        out.push_back({RuleId::kStructure, "Duplicate definition of function 'wrapper'",
                       wrappers[i]->line,
                       "The module must define exactly one top-level function named wrapper"});
      }
    }
  }
  const bool has_kernel = std::any_of(fns.begin(), fns.end(), [&](const FunctionNode* f) {
    return starts_with(f->name, prefix);
  });
  if (!has_kernel) {
    out.push_back({RuleId::kStructure, "No kernel function found", 0,
                   "Kernel function names must all start with \"" + prefix + "\""});
  }
}

void check_jit(const SyntaxTree& tree, const StructuralRules& rules, std::vector<Violation>& out) {
  for (const auto* f : tree.functions()) {
    if (!starts_with(f->name, rules.kernel_name_prefix)) continue;
    const auto& d = f->decorator_names;
    if (std::find(d.begin(), d.end(), rules.jit_decorator) == d.end()) {
      out.push_back({RuleId::kJitDecorator,
                     "Kernel function '" + f->name + "' is missing the @" + rules.jit_decorator +
                         " decorator",
                     f->line, "Every kernel function must be decorated with @" + rules.jit_decorator});
    }
  }
}

void check_imports(const SyntaxTree& tree, std::vector<Violation>& out) {
  for (const auto& imp : tree.imports) {
    out.push_back({RuleId::kNoImports, "Import statements are not allowed: " + imp.module,
                   imp.line, "triton, tl and torch are already available; remove all imports"});
  }
}

void check_modules(const SyntaxTree& tree, const LintConfig& cfg, std::vector<Violation>& out) {
  for (const auto& ref : tree.references) {
    const auto root = root_of(ref.path);
    const auto it = cfg.module_allowlists.find(root);
    if (it == cfg.module_allowlists.end() || it->second.contains(ref.path)) continue;
    out.push_back({RuleId::kModuleRestrictions,
                   "Forbidden " + root + " module usage: " + ref.path, ref.line,
                   "Allowed " + root + " functions: " + join(it->second)});
  }
}

void check_scopes(const SyntaxTree& tree, const LintConfig& cfg, std::vector<Violation>& out) {
  for (const auto& ref : tree.references) {
    const auto root = root_of(ref.path);
    const auto it = cfg.scope_restrictions.find(root);
    if (it == cfg.scope_restrictions.end()) continue;
    const auto& compiled = it->second.compiled;
    const bool ok = std::any_of(compiled.begin(), compiled.end(), [&](const std::regex& re) {
      return std::regex_search(ref.scope, re);
    });
    if (ok) continue;
    std::string where = ref.scope.empty() ? "at module level" : "in function '" + ref.scope + "'";
    std::string patterns;
    for (const auto& p : it->second.patterns) {
      if (!patterns.empty()) patterns += ", ";
      patterns += p;
    }
    out.push_back({RuleId::kModuleScopeRestrictions,
                   "Forbidden " + root + " usage " + where + ": " + ref.path, ref.line,
                   root + " may only be used inside functions matching: " + patterns});
  }
}

void check_tensor_methods(const SyntaxTree& tree, const LintConfig& cfg,
                          std::vector<Violation>& out) {
  for (const auto& m : tree.members) {
    if (!cfg.forbidden_tensor_methods.contains(m.member)) continue;
    // torch.cuda and friends are module references, handled by the allowlist.
    if (cfg.module_restrictions_enabled && !m.object_path.empty() &&
        cfg.module_allowlists.contains(root_of(m.object_path))) {
      continue;
    }
    out.push_back({RuleId::kForbiddenTensorMethods,
                   "Forbidden tensor method: ." + m.member + "()", m.line,
                   "Tensors must stay on the accelerator; forbidden methods: " +
                       join(cfg.forbidden_tensor_methods)});
  }
}

void check_function_args(const SyntaxTree& tree, const LintConfig& cfg,
                         std::vector<Violation>& out, std::vector<std::string>& warnings) {
  for (const auto& call : tree.calls) {
    const auto it = cfg.forbidden_function_args.find(call.callee);
    if (it == cfg.forbidden_function_args.end()) continue;
    for (const auto& arg : call.string_args) {
      if (!it->second.contains(arg)) continue;
      out.push_back({RuleId::kForbiddenFunctionArguments,
                     "Forbidden argument \"" + arg + "\" in call to " + call.callee, call.line,
                     "Forbidden string arguments for " + call.callee + ": " + join(it->second)});
    }
    if (call.has_non_literal_args) {
      warnings.push_back(call.callee + " called with a non-literal argument (line " +
                         std::to_string(call.line) + ")");
    }
  }
}

void check_builtins(const SyntaxTree& tree, const LintConfig& cfg, std::vector<Violation>& out) {
  for (const auto& ref : tree.references) {
    if (!cfg.forbidden_builtins.contains(ref.path)) continue;
    out.push_back({RuleId::kForbiddenFunctions, "Forbidden function: " + ref.path, ref.line,
                   "Dynamic code execution is not allowed; forbidden functions: " +
                       join(cfg.forbidden_builtins)});
  }
}

}  // namespace

std::string_view to_string(RuleId rule) {
  for (const auto& [id, name] : kRuleNames) {
    if (id == rule) return name;
  }
  return "unknown";
}

std::optional<RuleId> parse_rule_id(std::string_view name) {
  for (const auto& [id, n] : kRuleNames) {
    if (n == name) return id;
  }
  return std::nullopt;
}

LintConfig LintConfig::disabled() {
  LintConfig cfg;
  cfg.module_restrictions_enabled = false;
  cfg.scope_restrictions_enabled = false;
  cfg.forbidden_tensor_methods_enabled = false;
  cfg.forbidden_function_args_enabled = false;
  cfg.forbidden_builtins_enabled = false;
  cfg.structural.enabled = false;
  return cfg;
}

LintConfig load_lint_config(std::string_view yaml_text) {
  YAML::Node doc;
  try {
    doc = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    config_error(e.what());
  }
  LintConfig cfg = LintConfig::disabled();
  if (doc.IsNull()) return cfg;
  if (!doc.IsMap()) config_error("document must be a mapping of rule blocks");
  for (const auto& kv : doc) {
    const auto key = kv.first.as<std::string>();
    const YAML::Node& block = kv.second;
    try {
      if (key == "module_restrictions") {
        read_module_restrictions(block, cfg);
      } else if (key == "module_scope_restrictions") {
        read_scope_restrictions(block, cfg);
      } else if (key == "forbidden_tensor_methods") {
        read_tensor_methods(block, cfg);
      } else if (key == "forbidden_function_arguments") {
        read_function_args(block, cfg);
      } else if (key == "forbidden_functions") {
        read_builtins(block, cfg);
      } else if (key == "structural") {
        read_structural(block, cfg);
      } else {
        throw Error(ErrorCode::kUnknownRule, "lint config: unknown rule '" + key + "'");
      }
    } catch (const YAML::Exception& e) {
      config_error(key + ": " + e.what());
    }
  }
  return cfg;
}

const LintConfig& default_lint_config() {
  static const LintConfig cfg = load_lint_config(resources::get("data/default_lint.yaml"));
  return cfg;
}

LintReport lint(const SyntaxTree& tree, const LintConfig& cfg) {
  LintReport report;
  auto& v = report.violations;
  if (cfg.structural.enabled) {
    std::size_t start = v.size();
    check_structure(tree, cfg.structural, v);
    if (!cfg.structural.jit_decorator.empty()) check_jit(tree, cfg.structural, v);
    sort_by_line(v, start);
    if (cfg.structural.forbid_imports) check_imports(tree, v);
  }
  if (cfg.module_restrictions_enabled) {
    std::size_t start = v.size();
    check_modules(tree, cfg, v);
    sort_by_line(v, start);
  }
  if (cfg.scope_restrictions_enabled) {
    std::size_t start = v.size();
    check_scopes(tree, cfg, v);
    sort_by_line(v, start);
  }
  if (cfg.forbidden_tensor_methods_enabled) {
    std::size_t start = v.size();
    check_tensor_methods(tree, cfg, v);
    sort_by_line(v, start);
  }
  if (cfg.forbidden_function_args_enabled) {
    std::size_t start = v.size();
    check_function_args(tree, cfg, v, report.warnings);
    sort_by_line(v, start);
  }
  if (cfg.forbidden_builtins_enabled) {
    std::size_t start = v.size();
    check_builtins(tree, cfg, v);
    sort_by_line(v, start);
  }
  return report;
}

LintReport lint_source(std::string_view source, const LintConfig& config) {
  try {
    return lint(parse_candidate(source), config);
  } catch (const SyntaxError& e) {
    LintReport report;
    report.violations.push_back({RuleId::kSyntaxError, std::string("Syntax error: ") + e.what(),
                                 e.line(), "The module must be valid Python syntax"});
    return report;
  }
}

LintReport output_format_report(std::string_view message) {
  LintReport report;
  report.violations.push_back(
      {RuleId::kOutputFormat, std::string(message), 0,
       "Return the complete kernel and wrapper in a single ```python code block"});
  return report;
}

std::string LintReport::render() const {
  std::string out = "Found " + std::to_string(violations.size()) + " linting violation(s):";
  for (const auto& v : violations) {
    out += "\n[";
    out += to_string(v.rule);
    out += "] " + v.message;
    if (v.line > 0) out += " (line " + std::to_string(v.line) + ")";
    if (!v.details.empty()) out += "\nDetails: " + v.details;
  }
  return out;
}

std::string LintReport::to_json() const {
  nlohmann::json j;
  j["pass"] = pass();
  j["violations"] = nlohmann::json::array();
  for (const auto& v : violations) {
    j["violations"].push_back({{"rule_id", std::string(to_string(v.rule))},
                               {"message", v.message},
                               {"line", v.line},
                               {"details", v.details}});
  }
  j["warnings"] = warnings;
  return j.dump();
}

}  // namespace opforge::lint
