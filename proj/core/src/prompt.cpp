#include "opforge/prompt.hpp"

#include <cctype>

#include "opforge/error.hpp"
#include "opforge/resources.hpp"
#include "opforge/syntax_tree.hpp"
#include "opforge/util.hpp"

namespace opforge::prompt {

namespace {

[[noreturn]] void template_error(const std::string& what) {
  throw Error(ErrorCode::kTemplateError, what);
}

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

Prompt make_prompt(PromptKind kind, std::string text, Role role = Role::kUser) {
  Prompt p;
  p.role = role;
  p.kind = kind;
  p.text = std::move(text);
  p.token_estimate = estimate_tokens(p.text);
  return p;
}

std::string render_examples(const std::vector<ReferenceExample>& examples) {
  const std::string tmpl = load_template("reference_example");
  std::string out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (i) out += "\n";
    out += render_template(tmpl, {{"op_name", examples[i].op_name},
                                  {"kernel_source", util::trim(examples[i].kernel_source)},
                                  {"wrapper_source", util::trim(examples[i].wrapper_source)}});
  }
  return out;
}

struct Fence {
  std::size_t indent = 0;
  std::size_t ticks = 0;
};

// A line opening or closing a fenced block: up to three spaces, then three
// or more backticks.
std::optional<Fence> fence_of(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && i < 3 && line[i] == ' ') ++i;
  std::size_t ticks = 0;
  while (i + ticks < line.size() && line[i + ticks] == '`') ++ticks;
  if (ticks < 3) return std::nullopt;
  return Fence{i, ticks};
}

}  // namespace

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::kInit: return "init";
    case PromptKind::kInitResume: return "init_resume";
    case PromptKind::kLintFeedback: return "lint_feedback";
    case PromptKind::kCompileFeedback: return "compile_feedback";
    case PromptKind::kAccuracyFeedback: return "accuracy_feedback";
    case PromptKind::kCrashFeedback: return "crash_feedback";
  }
  return "unknown";
}

std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    if (c == '}') {
      if (i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
        out += '}';
        ++i;
        continue;
      }
      template_error("unmatched '}' at offset " + std::to_string(i));
    }
    if (c != '{') {
      out += c;
      continue;
    }
    if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      out += '{';
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < tmpl.size() && is_ident_char(tmpl[j])) ++j;
    if (j == i + 1 || j >= tmpl.size() || tmpl[j] != '}') {
      template_error("malformed placeholder at offset " + std::to_string(i));
    }
    const std::string name(tmpl.substr(i + 1, j - i - 1));
    auto it = values.find(name);
    if (it == values.end()) template_error("no value for placeholder {" + name + "}");
    out += it->second;
    i = j;
  }
  return out;
}

std::string load_template(std::string_view name) {
  const std::string path = "templates/" + std::string(name) + ".txt";
  if (!resources::contains(path)) template_error("unknown template '" + std::string(name) + "'");
  std::string text(resources::get(path));
  if (!text.empty() && text.back() == '\n') text.pop_back();
  return text;
}

std::string ReferenceExample::module_source() const {
  return util::trim(kernel_source) + "\n\n\n" + util::trim(wrapper_source) + "\n";
}

const std::vector<ReferenceExample>& default_reference_examples() {
  static const std::vector<ReferenceExample> examples = [] {
    std::vector<ReferenceExample> out;
    for (const char* op : {"exp", "argmax", "diag"}) {
      const std::string base = std::string("reference/") + op;
      out.push_back({op, std::string(resources::get(base + "/kernel.py")),
                     std::string(resources::get(base + "/wrapper.py"))});
    }
    return out;
  }();
  return examples;
}

CandidateArtifact make_artifact(std::string raw_response, std::string module_source) {
  CandidateArtifact a;
  a.raw_response = std::move(raw_response);
  a.module_source = std::move(module_source);
  try {
    const auto tree = lint::parse_candidate(a.module_source);
    for (const auto* fn : tree.functions()) {
      if (fn->name == "wrapper") {
        a.has_wrapper = true;
      } else if (fn->name.rfind("kernel", 0) == 0) {
        a.kernels.push_back(fn->name);
      }
    }
  } catch (const SyntaxError&) {
  }
  return a;
}

Prompt build_preamble() {
  return make_prompt(PromptKind::kInit, load_template("preamble"), Role::kPreamble);
}

Prompt build_initial(const catalog::OperatorSpec& op, const DtypeSet& dtypes,
                     const catalog::DocstringDag& docstrings,
                     const std::vector<ReferenceExample>& examples,
                     const CandidateArtifact* prior) {
  if (examples.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "at least one reference example is required");
  }
  if (!docstrings.contains(op.name) || util::trim(docstrings.docstring(op.name)).empty()) {
    throw Error(ErrorCode::kMissingDocstring, "no docstring for operator " + op.name);
  }
  const auto resolved = catalog::resolve_docstring_chain(op.name, docstrings);
  std::string supplemental;
  for (std::size_t i = 0; i < resolved.supplemental.size(); ++i) {
    if (i) supplemental += "\n";
    supplemental += resolved.supplemental[i];
  }
  const std::string rules =
      render_template(load_template("task_rules"),
                      {{"op_name", op.name},
                       {"docstring", resolved.primary},
                       {"supplemental_docstrings", supplemental},
                       {"reference_kernels", render_examples(examples)}});
  std::map<std::string, std::string> values = {
      {"op_name", op.name}, {"dtypes", render_dtype_list(dtypes)}, {"task_rules", rules}};
  if (!prior) return make_prompt(PromptKind::kInit, render_template(load_template("init"), values));
  values["current_implementation"] = prior->module_source;
  return make_prompt(PromptKind::kInitResume,
                     render_template(load_template("init_resume"), values));
}

Prompt build_feedback(PromptKind kind, const FeedbackPayload& payload) {
  auto mismatch = [&]() -> Error {
    return Error(ErrorCode::kPayloadKindMismatch,
                 "payload does not match feedback kind " + std::string(to_string(kind)));
  };
  switch (kind) {
    case PromptKind::kLintFeedback: {
      const auto* report = std::get_if<lint::LintReport>(&payload);
      if (!report) throw mismatch();
      return make_prompt(kind, render_template(load_template("lint_feedback"),
                                               {{"lint_report", report->render()}}));
    }
    case PromptKind::kCompileFeedback: {
      const auto* log = std::get_if<std::string>(&payload);
      if (!log) throw mismatch();
      return make_prompt(kind, render_template(load_template("compile_feedback"),
                                               {{"compile_log", *log}}));
    }
    case PromptKind::kAccuracyFeedback: {
      const auto* p = std::get_if<testing::AccuracyPayload>(&payload);
      if (!p) throw mismatch();
      return make_prompt(kind, render_template(load_template("accuracy_feedback"),
                                               {{"cpu_summary", p->cpu_summary.render()},
                                                {"device_summary", p->device_summary.render()},
                                                {"input_signature", p->input_signature},
                                                {"output_signature", p->output_signature},
                                                {"input_shape", testing::render_shape(p->input_shape)},
                                                {"input_tensor", p->input_tensor_excerpt},
                                                {"input_args", p->input_args},
                                                {"input_kwargs", p->input_kwargs}}));
    }
    case PromptKind::kCrashFeedback: {
      const auto* r = std::get_if<testing::CrashReport>(&payload);
      if (!r) throw mismatch();
      return make_prompt(kind, render_template(load_template("crash_feedback"),
                                               {{"crash_report", r->render()}}));
    }
    case PromptKind::kInit:
    case PromptKind::kInitResume:
      break;
  }
  throw mismatch();
}

std::string build_summarization_prompt(std::string_view compile_log) {
  return render_template(load_template("summarize_log"), {{"compile_log", std::string(compile_log)}});
}

CandidateArtifact parse_response(std::string_view response, const ParseOptions& options) {
  std::vector<std::string> blocks;
  std::optional<Fence> open;
  std::string current;
  std::size_t pos = 0;
  while (pos <= response.size()) {
    std::size_t end = response.find('\n', pos);
    if (end == std::string_view::npos) end = response.size();
    std::string_view line = response.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto fence = fence_of(line);
    if (!open) {
      if (fence) {
        open = fence;
        current.clear();
      }
    } else if (fence && fence->ticks >= open->ticks &&
               util::trim(line.substr(fence->indent + fence->ticks)).empty()) {
      blocks.push_back(current);
      open.reset();
    } else {
      current.append(line);
      current += '\n';
    }
    if (end == response.size()) break;
    pos = end + 1;
  }
  // A reply cut off mid-block still yields its code.
  if (open && !util::trim(current).empty()) blocks.push_back(current);

  if (blocks.empty()) {
    throw Error(ErrorCode::kNoCodeBlock, "response contains no fenced code block");
  }
  if (options.strict && blocks.size() > 1) {
    throw Error(ErrorCode::kMultipleModules,
                "response contains " + std::to_string(blocks.size()) + " code blocks");
  }
  return make_artifact(std::string(response), blocks.back());
}

}  // namespace opforge::prompt
