#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace opforge::lint {

// Syntax tree for the Python subset candidate modules are written in:
// function definitions with decorators, loops, conditionals, calls,
// attribute access, literals and assignments. Everything else is rejected
// with SyntaxError so exotic syntax cannot slip past the rules.

enum class ExprKind {
  kName,
  kAttribute,   // children[0].value
  kCall,        // children[0](children[1..], keywords)
  kSubscript,   // children[0][children[1]]
  kSlice,       // lower:upper:step, absent parts are null children
  kNumber,
  kString,      // value holds the decoded literal
  kFString,     // children are the parsed replacement fields
  kConstant,    // None, True, False, ...
  kBinaryOp,
  kUnaryOp,
  kBoolOp,
  kCompare,     // ops[i] sits between children[i] and children[i + 1]
  kIfExp,       // children = {body, test, orelse}
  kTuple,
  kList,
  kSet,
  kDict,        // children alternate key, value; a null key means **value
  kStarred,     // *value or **value (value of op)
  kComprehension,
};

struct Expr;
using ExprPtr = std::unique_ptr<Expr>;

struct Keyword {
  std::string name;  // empty for **kwargs
  ExprPtr value;
};

struct Expr {
  ExprKind kind = ExprKind::kName;
  int line = 0;
  std::string value;
  std::vector<ExprPtr> children;
  std::vector<std::string> ops;
  std::vector<Keyword> keywords;
};

enum class StmtKind {
  kExpr,
  kAssign,       // exprs = targets..., value
  kAugAssign,    // exprs = {target, value}, op
  kAnnAssign,    // exprs = {target, annotation[, value]}
  kReturn,
  kRaise,
  kAssert,
  kPass,
  kBreak,
  kContinue,
  kIf,           // exprs = {test}, body, orelse
  kFor,          // exprs = {target, iter}, body, orelse
  kWhile,        // exprs = {test}, body, orelse
  kFunctionDef,
  kImport,       // names holds the imported module paths
};

struct Stmt;
using StmtPtr = std::unique_ptr<Stmt>;

struct Parameter {
  enum class Kind { kPositional, kVarArgs, kKeywordOnly, kVarKeywords };
  std::string name;
  Kind kind = Kind::kPositional;
  ExprPtr annotation;
  ExprPtr default_value;
  int line = 0;
};

struct FunctionNode {
  std::string name;
  int line = 0;
  std::vector<Parameter> params;
  std::vector<ExprPtr> decorators;
  std::vector<std::string> decorator_names;  // dotted paths, e.g. "triton.jit"
  std::vector<StmtPtr> body;
};

struct Stmt {
  StmtKind kind = StmtKind::kPass;
  int line = 0;
  std::string op;
  std::vector<ExprPtr> exprs;
  std::vector<StmtPtr> body;
  std::vector<StmtPtr> orelse;
  std::unique_ptr<FunctionNode> function;
  std::vector<std::string> names;
};

/// A call expression with its dotted callee path ("tl.load", "input.cpu",
/// "kernel[]" for kernel[grid](...)) and every string literal argument.
struct CallSite {
  std::string callee;
  std::vector<std::string> string_args;
  bool has_non_literal_args = false;
  int line = 0;
  std::string scope;  // enclosing top-level function, empty at module level
};

/// Every maximal dotted reference rooted at a plain name ("tl.float32",
/// "torch.empty", "eval").
struct NameRef {
  std::string path;
  int line = 0;
  std::string scope;
};

/// Attribute accesses by member name, regardless of what the object is.
struct MemberRef {
  std::string member;
  std::string object_path;  // empty when the object is not a dotted name
  int line = 0;
  std::string scope;
};

struct ImportRef {
  std::string module;
  int line = 0;
  std::string scope;
};

class SyntaxTree {
 public:
  std::vector<StmtPtr> statements;

  /// Top-level function definitions in source order.
  std::vector<const FunctionNode*> functions() const;
  /// Top-level statements that are not function definitions.
  std::vector<const Stmt*> top_level_statements() const;

  std::vector<CallSite> calls;
  std::vector<NameRef> references;
  std::vector<MemberRef> members;
  std::vector<ImportRef> imports;
};

/// Throws opforge::SyntaxError with the offending line number.
SyntaxTree parse_candidate(std::string_view source);

/// "a.b.c" for a chain of attributes rooted at a name, otherwise empty.
std::string dotted_path(const Expr& expr);

}  // namespace opforge::lint
