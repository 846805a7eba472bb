#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "opforge/catalog.hpp"
#include "opforge/lint.hpp"
#include "opforge/test_model.hpp"

namespace opforge::prompt {

enum class PromptKind {
  kInit,
  kInitResume,
  kLintFeedback,
  kCompileFeedback,
  kAccuracyFeedback,
  kCrashFeedback,
};

std::string_view to_string(PromptKind kind);

enum class Role { kPreamble, kUser };

/// ceil(chars / 4): a model-agnostic stand-in for a tokenizer.
std::size_t estimate_tokens(std::string_view text);

struct Prompt {
  Role role = Role::kUser;
  PromptKind kind = PromptKind::kInit;
  std::string text;
  std::size_t token_estimate = 0;

  bool operator==(const Prompt&) const = default;
};

/// Replaces `{name}` placeholders; `{{` and `}}` are literal braces.
/// Substituted values are not rescanned. Throws Error(kTemplateError) on an
/// unbalanced brace or a placeholder missing from `values`.
std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values);

/// Embedded template by short name ("init", "lint_feedback", ...), with the
/// file's final newline removed.
std::string load_template(std::string_view name);

struct ReferenceExample {
  std::string op_name;
  std::string kernel_source;
  std::string wrapper_source;

  std::string module_source() const;
};

/// The bundled exp, argmax and diag examples.
const std::vector<ReferenceExample>& default_reference_examples();

struct CandidateArtifact {
  std::string raw_response;
  std::string module_source;
  bool has_wrapper = false;
  std::vector<std::string> kernels;

  bool operator==(const CandidateArtifact&) const = default;
};

/// Fills in wrapper/kernels from module_source. A module that fails to
/// parse yields an artifact with no wrapper and no kernels; the linter
/// reports the syntax error downstream.
CandidateArtifact make_artifact(std::string raw_response, std::string module_source);

/// System-equivalent first turn of every dialog.
Prompt build_preamble();

/// Init when `prior` is absent, InitResume embedding prior->module_source
/// otherwise. Throws Error(kMissingDocstring) when the operator's docstring
/// is absent from the catalog or empty.
Prompt build_initial(const catalog::OperatorSpec& op, const DtypeSet& dtypes,
                     const catalog::DocstringDag& docstrings,
                     const std::vector<ReferenceExample>& examples,
                     const CandidateArtifact* prior = nullptr);

using FeedbackPayload = std::variant<lint::LintReport, std::string,
                                     testing::AccuracyPayload, testing::CrashReport>;

/// The compile-log payload is embedded as given; summarization or
/// truncation happens before this call. Throws Error(kPayloadKindMismatch)
/// when the payload does not fit `kind`.
Prompt build_feedback(PromptKind kind, const FeedbackPayload& payload);

/// Summarizer instruction wrapping a raw compile log.
std::string build_summarization_prompt(std::string_view compile_log);

struct ParseOptions {
  bool strict = false;  // more than one fenced block is an error
};

/// Extracts the last fenced code block. Throws Error(kNoCodeBlock) or, in
/// strict mode, Error(kMultipleModules).
CandidateArtifact parse_response(std::string_view response, const ParseOptions& options = {});

}  // namespace opforge::prompt
