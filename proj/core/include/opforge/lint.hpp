#pragma once

#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "opforge/syntax_tree.hpp"

namespace opforge::lint {

enum class RuleId {
  kSyntaxError,
  kOutputFormat,
  kStructure,
  kJitDecorator,
  kNoImports,
  kModuleRestrictions,
  kModuleScopeRestrictions,
  kForbiddenTensorMethods,
  kForbiddenFunctionArguments,
  kForbiddenFunctions,
};

std::string_view to_string(RuleId rule);
std::optional<RuleId> parse_rule_id(std::string_view name);

struct ScopeRestriction {
  std::vector<std::string> patterns;
  std::vector<std::regex> compiled;
};

struct StructuralRules {
  bool enabled = true;
  bool require_wrapper = true;
  std::string kernel_name_prefix = "kernel";
  bool forbid_imports = true;
  std::string jit_decorator = "triton.jit";  // empty disables the check
};

struct LintConfig {
  bool module_restrictions_enabled = true;
  std::map<std::string, std::set<std::string>> module_allowlists;

  bool scope_restrictions_enabled = true;
  std::map<std::string, ScopeRestriction> scope_restrictions;

  bool forbidden_tensor_methods_enabled = true;
  std::set<std::string> forbidden_tensor_methods;

  bool forbidden_function_args_enabled = true;
  std::map<std::string, std::set<std::string>> forbidden_function_args;

  bool forbidden_builtins_enabled = true;
  std::set<std::string> forbidden_builtins;

  StructuralRules structural;

  /// Every rule off; useful as a base for targeted tests.
  static LintConfig disabled();
};

/// Throws Error(kParseError) or Error(kUnknownRule).
LintConfig load_lint_config(std::string_view yaml_text);
const LintConfig& default_lint_config();

struct Violation {
  RuleId rule = RuleId::kSyntaxError;
  std::string message;
  int line = 0;
  std::string details;

  bool operator==(const Violation&) const = default;
};

struct LintReport {
  std::vector<Violation> violations;
  std::vector<std::string> warnings;

  bool pass() const { return violations.empty(); }
  /// "Found N linting violation(s):" followed by one block per violation.
  std::string render() const;
  std::string to_json() const;

  bool operator==(const LintReport&) const = default;
};

LintReport lint(const SyntaxTree& tree, const LintConfig& config);

/// Parses then lints; a parse failure becomes a single syntax_error violation.
LintReport lint_source(std::string_view source, const LintConfig& config);

/// Report for a response with no usable code block.
LintReport output_format_report(std::string_view message);

}  // namespace opforge::lint
