#include <algorithm>
#include <array>
#include <cctype>
#include <cstring>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "opforge/error.hpp"
#include "opforge/syntax_tree.hpp"

namespace opforge::lint {
namespace {

// ---------------------------------------------------------------------------
// Tokenizer

enum class Tok { kName, kNumber, kString, kOp, kNewline, kIndent, kDedent, kEnd };

struct Token {
  Tok kind = Tok::kEnd;
  std::string text;    // identifier, operator, number text, or decoded string
  std::string prefix;  // lowercase string prefix (r, b, f, rb, ...)
  std::string raw;     // undecoded string body, used for f-string fields
  int line = 0;
};

const std::set<std::string_view> kKeywords = {
    "False", "None",     "True",  "and",    "as",     "assert", "async",
    "await", "break",    "class", "continue", "def",  "del",    "elif",
    "else",  "except",   "finally", "for",  "from",   "global", "if",
    "import", "in",      "is",    "lambda", "nonlocal", "not",  "or",
    "pass",  "raise",    "return", "try",   "while",  "with",   "yield"};

constexpr std::array<std::string_view, 47> kOperators = {
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>",
    "<=",  ">=",  "==",  "!=",  "+=",  "-=", "*=", "/=", "%=", "&=", "|=",
    "^=",  "@=",  "+",   "-",   "*",   "/",  "%",  "@",  "&",  "|",  "^",
    "~",   "<",   ">",   "(",   ")",   "[",  "]",  "{",  "}",  ",",  ":",
    ".",   ";",   "="};

bool is_ident_start(unsigned char c) {
  return std::isalpha(c) || c == '_' || c >= 0x80;
}
bool is_ident_char(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

class Tokenizer {
 public:
  Tokenizer(std::string_view source, int first_line)
      : src_(normalize(source)), line_(first_line) {}

  std::vector<Token> run() {
    std::vector<int> indents = {0};
    bool line_start = true;
    while (pos_ < src_.size()) {
      if (line_start && depth_ == 0) {
        line_start = false;
        int col = 0;
        std::size_t p = pos_;
        while (p < src_.size() && (src_[p] == ' ' || src_[p] == '\t' || src_[p] == '\f')) {
          col = src_[p] == '\t' ? (col / 8 + 1) * 8 : (src_[p] == '\f' ? 0 : col + 1);
          ++p;
        }
        if (p >= src_.size()) {
          pos_ = p;
          break;
        }
        if (src_[p] == '#' || src_[p] == '\n') {
          // Blank or comment-only line: no indentation semantics.
          while (p < src_.size() && src_[p] != '\n') ++p;
          pos_ = p;
          if (pos_ < src_.size()) {
            ++pos_;
            ++line_;
          }
          line_start = true;
          continue;
        }
        pos_ = p;
        if (col > indents.back()) {
          indents.push_back(col);
          emit(Tok::kIndent, "");
        } else {
          while (col < indents.back()) {
            indents.pop_back();
            emit(Tok::kDedent, "");
          }
          if (col != indents.back()) {
            throw SyntaxError(line_, "unindent does not match any outer indentation level");
          }
        }
      }

      const unsigned char c = static_cast<unsigned char>(src_[pos_]);
      if (c == ' ' || c == '\t' || c == '\f') {
        ++pos_;
        continue;
      }
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        continue;
      }
      if (c == '\\') {
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '\n') {
          pos_ += 2;
          ++line_;
          continue;
        }
        throw SyntaxError(line_, "unexpected character after line continuation character");
      }
      if (c == '\n') {
        if (depth_ == 0) {
          emit(Tok::kNewline, "");
          line_start = true;
        }
        ++pos_;
        ++line_;
        continue;
      }
      if (is_ident_start(c)) {
        std::size_t start = pos_;
        while (pos_ < src_.size() && is_ident_char(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        std::string word(src_.substr(start, pos_ - start));
        if (pos_ < src_.size() && (src_[pos_] == '\'' || src_[pos_] == '"')) {
          const auto pfx = lower(word);
          static const std::set<std::string> kPrefixes = {"r", "u", "b", "f", "br", "rb", "fr", "rf"};
          if (kPrefixes.contains(pfx)) {
            read_string(pfx);
            continue;
          }
        }
        emit(Tok::kName, std::move(word));
        continue;
      }
      if (std::isdigit(c) || (c == '.' && pos_ + 1 < src_.size() &&
                              std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        read_number();
        continue;
      }
      if (c == '\'' || c == '"') {
        read_string("");
        continue;
      }
      read_operator();
    }
    if (!open_lines_.empty()) throw SyntaxError(open_lines_.back(), "bracket was never closed");
    if (!tokens_.empty() && tokens_.back().kind != Tok::kNewline &&
        tokens_.back().kind != Tok::kDedent) {
      emit(Tok::kNewline, "");
    }
    while (indents.size() > 1) {
      indents.pop_back();
      emit(Tok::kDedent, "");
    }
    emit(Tok::kEnd, "");
    return std::move(tokens_);
  }

 private:
  static std::string normalize(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '\r') {
        out.push_back('\n');
        if (i + 1 < s.size() && s[i + 1] == '\n') ++i;
      } else {
        out.push_back(s[i]);
      }
    }
    return out;
  }

  void emit(Tok kind, std::string text) {
    Token t;
    t.kind = kind;
    t.text = std::move(text);
    t.line = line_;
    tokens_.push_back(std::move(t));
  }

  void read_number() {
    const std::size_t start = pos_;
    auto digits = [&](auto pred) {
      while (pos_ < src_.size() &&
             (pred(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        ++pos_;
      }
    };
    if (src_[pos_] == '0' && pos_ + 1 < src_.size() &&
        std::strchr("xXoObB", src_[pos_ + 1]) != nullptr) {
      pos_ += 2;
      digits([](unsigned char ch) { return std::isxdigit(ch) != 0; });
    } else {
      digits([](unsigned char ch) { return std::isdigit(ch) != 0; });
      if (pos_ < src_.size() && src_[pos_] == '.') {
        ++pos_;
        digits([](unsigned char ch) { return std::isdigit(ch) != 0; });
      }
      if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
        std::size_t save = pos_;
        ++pos_;
        if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
        if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
          digits([](unsigned char ch) { return std::isdigit(ch) != 0; });
        } else {
          pos_ = save;
        }
      }
      if (pos_ < src_.size() && (src_[pos_] == 'j' || src_[pos_] == 'J')) ++pos_;
    }
    if (pos_ < src_.size() && is_ident_start(static_cast<unsigned char>(src_[pos_]))) {
      throw SyntaxError(line_, "invalid decimal literal");
    }
    emit(Tok::kNumber, std::string(src_.substr(start, pos_ - start)));
  }

  void read_string(const std::string& prefix) {
    const int start_line = line_;
    const char quote = src_[pos_];
    const bool triple = pos_ + 2 < src_.size() && src_[pos_ + 1] == quote &&
                        src_[pos_ + 2] == quote;
    pos_ += triple ? 3 : 1;
    const std::size_t body_start = pos_;
    for (;;) {
      if (pos_ >= src_.size()) {
        throw SyntaxError(start_line, triple ? "unterminated triple-quoted string literal"
                                             : "unterminated string literal");
      }
      const char ch = src_[pos_];
      if (ch == '\\') {
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '\n') ++line_;
        pos_ += 2;
        continue;
      }
      if (ch == '\n') {
        if (!triple) throw SyntaxError(start_line, "unterminated string literal");
        ++line_;
        ++pos_;
        continue;
      }
      if (ch == quote) {
        if (!triple) break;
        if (pos_ + 2 < src_.size() && src_[pos_ + 1] == quote && src_[pos_ + 2] == quote) break;
      }
      ++pos_;
    }
    std::string raw(src_.substr(body_start, pos_ - body_start));
    pos_ += triple ? 3 : 1;
    Token t;
    t.kind = Tok::kString;
    t.prefix = prefix;
    t.raw = raw;
    t.text = prefix.find('r') != std::string::npos ? raw : decode(raw);
    t.line = start_line;
    tokens_.push_back(std::move(t));
  }

  static std::string decode(std::string_view raw) {
    std::string out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] != '\\' || i + 1 >= raw.size()) {
        out.push_back(raw[i]);
        continue;
      }
      const char e = raw[++i];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case '0': out.push_back('\0'); break;
        case '\\': out.push_back('\\'); break;
        case '\'': out.push_back('\''); break;
        case '"': out.push_back('"'); break;
        case '\n': break;
        case 'x':
          if (i + 2 < raw.size() + 0 && std::isxdigit(static_cast<unsigned char>(raw[i + 1])) &&
              std::isxdigit(static_cast<unsigned char>(raw[i + 2]))) {
            out.push_back(static_cast<char>(std::stoi(std::string(raw.substr(i + 1, 2)), nullptr, 16)));
            i += 2;
            break;
          }
          [[fallthrough]];
        default:
          out.push_back('\\');
          out.push_back(e);
      }
    }
    return out;
  }

  void read_operator() {
    for (auto op : kOperators) {
      if (src_.compare(pos_, op.size(), op) == 0) {
        if (op == "(" || op == "[" || op == "{") {
          ++depth_;
          open_lines_.push_back(line_);
        }
        if (op == ")" || op == "]" || op == "}") {
          if (depth_ == 0) throw SyntaxError(line_, "unmatched '" + std::string(op) + "'");
          --depth_;
          open_lines_.pop_back();
        }
        emit(Tok::kOp, std::string(op));
        pos_ += op.size();
        return;
      }
    }
    if (src_[pos_] == '!') throw SyntaxError(line_, "invalid syntax");
    throw SyntaxError(line_, std::string("invalid character '") + src_[pos_] + "'");
  }

  std::string src_;
  std::size_t pos_ = 0;
  int line_;
  int depth_ = 0;
  std::vector<int> open_lines_;
  std::vector<Token> tokens_;
};

// ---------------------------------------------------------------------------
// Parser

ExprPtr make_expr(ExprKind kind, int line, std::string value = {}) {
  auto e = std::make_unique<Expr>();
  e->kind = kind;
  e->line = line;
  e->value = std::move(value);
  return e;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  std::vector<StmtPtr> parse_module() {
    std::vector<StmtPtr> out;
    while (peek().kind != Tok::kEnd) {
      if (peek().kind == Tok::kNewline) {
        next();
        continue;
      }
      if (peek().kind == Tok::kIndent) throw SyntaxError(peek().line, "unexpected indent");
      for (auto& s : parse_statement()) out.push_back(std::move(s));
    }
    return out;
  }

  /// Entry point for f-string replacement fields.
  ExprPtr parse_standalone_expression() {
    while (peek().kind == Tok::kNewline) next();
    auto e = parse_testlist_star();
    while (peek().kind == Tok::kNewline) next();
    if (peek().kind != Tok::kEnd) fail("invalid syntax in f-string expression");
    return e;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(idx_ + ahead, toks_.size() - 1)];
  }
  const Token& next() {
    const Token& t = toks_[idx_];
    if (idx_ + 1 < toks_.size()) ++idx_;
    return t;
  }
  [[noreturn]] void fail(const std::string& msg) const { throw SyntaxError(peek().line, msg); }

  bool is_op(std::string_view op, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::kOp && peek(ahead).text == op;
  }
  bool is_kw(std::string_view kw, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::kName && peek(ahead).text == kw;
  }
  bool accept_op(std::string_view op) {
    if (!is_op(op)) return false;
    next();
    return true;
  }
  bool accept_kw(std::string_view kw) {
    if (!is_kw(kw)) return false;
    next();
    return true;
  }
  void expect_op(std::string_view op) {
    if (!accept_op(op)) fail("expected '" + std::string(op) + "'");
  }
  void expect_kw(std::string_view kw) {
    if (!accept_kw(kw)) fail("expected '" + std::string(kw) + "'");
  }
  std::string expect_name() {
    if (peek().kind != Tok::kName || kKeywords.contains(peek().text)) fail("expected identifier");
    return next().text;
  }
  void expect_newline() {
    if (peek().kind == Tok::kEnd) return;
    if (peek().kind != Tok::kNewline) fail("invalid syntax");
    next();
  }

  // -- statements ----------------------------------------------------------

  std::vector<StmtPtr> parse_statement() {
    std::vector<StmtPtr> out;
    if (is_op("@")) {
      out.push_back(parse_decorated());
      return out;
    }
    if (peek().kind == Tok::kName) {
      const auto& w = peek().text;
      if (w == "def") {
        out.push_back(parse_def({}));
        return out;
      }
      if (w == "if") {
        out.push_back(parse_if());
        return out;
      }
      if (w == "for") {
        out.push_back(parse_for());
        return out;
      }
      if (w == "while") {
        out.push_back(parse_while());
        return out;
      }
      if (w == "class" || w == "with" || w == "try" || w == "async" ||
          w == "lambda" || w == "yield" || w == "await" || w == "global" ||
          w == "nonlocal" || w == "del" || w == "except" || w == "finally") {
        fail("unsupported construct '" + w + "'");
      }
      if (w == "elif" || w == "else") fail("invalid syntax");
    }
    return parse_simple_statement();
  }

  std::vector<StmtPtr> parse_simple_statement() {
    std::vector<StmtPtr> out;
    out.push_back(parse_small_statement());
    while (accept_op(";")) {
      if (peek().kind == Tok::kNewline || peek().kind == Tok::kEnd) break;
      out.push_back(parse_small_statement());
    }
    expect_newline();
    return out;
  }

  StmtPtr new_stmt(StmtKind kind, int line) {
    auto s = std::make_unique<Stmt>();
    s->kind = kind;
    s->line = line;
    return s;
  }

  StmtPtr parse_small_statement() {
    const int line = peek().line;
    if (accept_kw("pass")) return new_stmt(StmtKind::kPass, line);
    if (accept_kw("break")) return new_stmt(StmtKind::kBreak, line);
    if (accept_kw("continue")) return new_stmt(StmtKind::kContinue, line);
    if (accept_kw("return")) {
      auto s = new_stmt(StmtKind::kReturn, line);
      if (!at_statement_end()) s->exprs.push_back(parse_testlist_star());
      return s;
    }
    if (accept_kw("raise")) {
      auto s = new_stmt(StmtKind::kRaise, line);
      if (!at_statement_end()) {
        s->exprs.push_back(parse_test());
        if (accept_kw("from")) s->exprs.push_back(parse_test());
      }
      return s;
    }
    if (accept_kw("assert")) {
      auto s = new_stmt(StmtKind::kAssert, line);
      s->exprs.push_back(parse_test());
      if (accept_op(",")) s->exprs.push_back(parse_test());
      return s;
    }
    if (accept_kw("import")) {
      auto s = new_stmt(StmtKind::kImport, line);
      do {
        s->names.push_back(parse_dotted_name());
        if (accept_kw("as")) expect_name();
      } while (accept_op(","));
      return s;
    }
    if (accept_kw("from")) {
      auto s = new_stmt(StmtKind::kImport, line);
      std::string module;
      while (is_op(".") || is_op("...")) module += next().text;
      if (!is_kw("import")) module += parse_dotted_name();
      expect_kw("import");
      s->names.push_back(module);
      if (accept_op("*")) return s;
      const bool paren = accept_op("(");
      do {
        if (paren && is_op(")")) break;
        expect_name();
        if (accept_kw("as")) expect_name();
      } while (accept_op(","));
      if (paren) expect_op(")");
      return s;
    }
    return parse_expression_statement();
  }

  bool at_statement_end() const {
    return peek().kind == Tok::kNewline || peek().kind == Tok::kEnd || is_op(";");
  }

  std::string parse_dotted_name() {
    std::string name = expect_name();
    while (accept_op(".")) name += "." + expect_name();
    return name;
  }

  StmtPtr parse_expression_statement() {
    const int line = peek().line;
    auto first = parse_testlist_star();
    if (is_op(":")) {
      next();
      check_target(*first);
      auto s = new_stmt(StmtKind::kAnnAssign, line);
      s->exprs.push_back(std::move(first));
      s->exprs.push_back(parse_test());
      if (accept_op("=")) s->exprs.push_back(parse_testlist_star());
      return s;
    }
    static const std::set<std::string_view> kAug = {"+=", "-=", "*=", "/=", "//=", "%=", "**=",
                                                    ">>=", "<<=", "&=", "|=", "^=", "@="};
    if (peek().kind == Tok::kOp && kAug.contains(peek().text)) {
      auto s = new_stmt(StmtKind::kAugAssign, line);
      s->op = next().text;
      if (first->kind != ExprKind::kName && first->kind != ExprKind::kAttribute &&
          first->kind != ExprKind::kSubscript) {
        throw SyntaxError(line, "illegal expression for augmented assignment");
      }
      s->exprs.push_back(std::move(first));
      s->exprs.push_back(parse_testlist_star());
      return s;
    }
    if (is_op("=")) {
      auto s = new_stmt(StmtKind::kAssign, line);
      s->exprs.push_back(std::move(first));
      while (accept_op("=")) s->exprs.push_back(parse_testlist_star());
      for (std::size_t i = 0; i + 1 < s->exprs.size(); ++i) check_target(*s->exprs[i]);
      return s;
    }
    if (is_op(":=")) fail("unsupported construct ':='");
    auto s = new_stmt(StmtKind::kExpr, line);
    s->exprs.push_back(std::move(first));
    return s;
  }

  void check_target(const Expr& e) const {
    switch (e.kind) {
      case ExprKind::kName:
      case ExprKind::kAttribute:
      case ExprKind::kSubscript:
        return;
      case ExprKind::kTuple:
      case ExprKind::kList:
        for (const auto& c : e.children) check_target(*c);
        return;
      case ExprKind::kStarred:
        check_target(*e.children[0]);
        return;
      default:
        throw SyntaxError(e.line, "cannot assign to expression");
    }
  }

  std::vector<StmtPtr> parse_suite() {
    std::vector<StmtPtr> body;
    if (peek().kind != Tok::kNewline) return parse_simple_statement();
    next();
    if (peek().kind != Tok::kIndent) fail("expected an indented block");
    next();
    while (peek().kind != Tok::kDedent && peek().kind != Tok::kEnd) {
      if (peek().kind == Tok::kNewline) {
        next();
        continue;
      }
      if (peek().kind == Tok::kIndent) fail("unexpected indent");
      for (auto& s : parse_statement()) body.push_back(std::move(s));
    }
    if (peek().kind == Tok::kDedent) next();
    return body;
  }

  StmtPtr parse_decorated() {
    std::vector<ExprPtr> decorators;
    while (accept_op("@")) {
      decorators.push_back(parse_test());
      expect_newline();
    }
    if (!is_kw("def")) fail("decorators are only supported on function definitions");
    return parse_def(std::move(decorators));
  }

  StmtPtr parse_def(std::vector<ExprPtr> decorators) {
    const int line = decorators.empty() ? peek().line : decorators.front()->line;
    const int def_line = peek().line;
    expect_kw("def");
    auto fn = std::make_unique<FunctionNode>();
    fn->name = expect_name();
    fn->line = def_line;
    expect_op("(");
    parse_parameters(fn->params);
    expect_op(")");
    if (accept_op("->")) {
      // Return annotations are accepted and dropped.
      (void)parse_test();
    }
    expect_op(":");
    fn->body = parse_suite();
    for (const auto& d : decorators) {
      const Expr* target = d.get();
      if (target->kind == ExprKind::kCall) target = target->children[0].get();
      fn->decorator_names.push_back(dotted_path(*target));
    }
    fn->decorators = std::move(decorators);
    auto s = new_stmt(StmtKind::kFunctionDef, line);
    s->function = std::move(fn);
    return s;
  }

  void parse_parameters(std::vector<Parameter>& params) {
    bool keyword_only = false;
    bool seen_default = false;
    std::set<std::string> names;
    while (!is_op(")")) {
      Parameter p;
      p.line = peek().line;
      if (accept_op("**")) {
        p.kind = Parameter::Kind::kVarKeywords;
        p.name = expect_name();
      } else if (accept_op("*")) {
        keyword_only = true;
        if (is_op(",") || is_op(")")) {
          if (!accept_op(",")) fail("named arguments must follow bare *");
          continue;
        }
        p.kind = Parameter::Kind::kVarArgs;
        p.name = expect_name();
      } else if (accept_op("/")) {
        if (!is_op(")")) expect_op(",");
        continue;
      } else {
        p.kind = keyword_only ? Parameter::Kind::kKeywordOnly : Parameter::Kind::kPositional;
        p.name = expect_name();
      }
      if (accept_op(":")) p.annotation = parse_test();
      if (accept_op("=")) {
        if (p.kind == Parameter::Kind::kVarArgs || p.kind == Parameter::Kind::kVarKeywords) {
          fail("var-positional or var-keyword parameter cannot have default value");
        }
        p.default_value = parse_test();
        if (p.kind == Parameter::Kind::kPositional) seen_default = true;
      } else if (p.kind == Parameter::Kind::kPositional && seen_default) {
        fail("non-default argument follows default argument");
      }
      if (!names.insert(p.name).second) fail("duplicate argument '" + p.name + "'");
      const bool last = p.kind == Parameter::Kind::kVarKeywords;
      params.push_back(std::move(p));
      if (!accept_op(",")) break;
      if (last && !is_op(")")) fail("arguments cannot follow var-keyword argument");
    }
  }

  StmtPtr parse_if() {
    const int line = peek().line;
    next();  // if / elif
    auto s = new_stmt(StmtKind::kIf, line);
    s->exprs.push_back(parse_test());
    expect_op(":");
    s->body = parse_suite();
    if (is_kw("elif")) {
      s->orelse.push_back(parse_if());
    } else if (accept_kw("else")) {
      expect_op(":");
      s->orelse = parse_suite();
    }
    return s;
  }

  StmtPtr parse_for() {
    const int line = peek().line;
    expect_kw("for");
    auto s = new_stmt(StmtKind::kFor, line);
    auto target = parse_target_list();
    check_target(*target);
    s->exprs.push_back(std::move(target));
    expect_kw("in");
    s->exprs.push_back(parse_testlist_star());
    expect_op(":");
    s->body = parse_suite();
    if (accept_kw("else")) {
      expect_op(":");
      s->orelse = parse_suite();
    }
    return s;
  }

  StmtPtr parse_while() {
    const int line = peek().line;
    expect_kw("while");
    auto s = new_stmt(StmtKind::kWhile, line);
    s->exprs.push_back(parse_test());
    expect_op(":");
    s->body = parse_suite();
    if (accept_kw("else")) {
      expect_op(":");
      s->orelse = parse_suite();
    }
    return s;
  }

  // -- expressions ---------------------------------------------------------

  /// Comma-separated targets for `for` loops and comprehensions.
  ExprPtr parse_target_list() {
    const int line = peek().line;
    auto first = parse_star_or(&Parser::parse_bitor);
    if (!is_op(",")) return first;
    auto tuple = make_expr(ExprKind::kTuple, line);
    tuple->children.push_back(std::move(first));
    while (accept_op(",")) {
      if (is_kw("in")) break;
      tuple->children.push_back(parse_star_or(&Parser::parse_bitor));
    }
    return tuple;
  }

  ExprPtr parse_star_or(ExprPtr (Parser::*inner)()) {
    if (is_op("*")) {
      const int line = next().line;
      auto e = make_expr(ExprKind::kStarred, line, "*");
      e->children.push_back(parse_bitor());
      return e;
    }
    return (this->*inner)();
  }

  bool starts_expression() const {
    const auto& t = peek();
    if (t.kind == Tok::kName) {
      return !kKeywords.contains(t.text) || t.text == "None" || t.text == "True" ||
             t.text == "False" || t.text == "not" || t.text == "lambda" || t.text == "await";
    }
    if (t.kind == Tok::kNumber || t.kind == Tok::kString) return true;
    if (t.kind == Tok::kOp) {
      static const std::set<std::string_view> kStarters = {"(", "[", "{", "-", "+", "~", "*", "..."};
      return kStarters.contains(t.text);
    }
    return false;
  }

  /// Bare tuples: `a, b` or `*rest, x`.
  ExprPtr parse_testlist_star() {
    const int line = peek().line;
    auto first = parse_star_or(&Parser::parse_test);
    if (!is_op(",")) return first;
    auto tuple = make_expr(ExprKind::kTuple, line);
    tuple->children.push_back(std::move(first));
    while (accept_op(",")) {
      if (!starts_expression()) break;
      tuple->children.push_back(parse_star_or(&Parser::parse_test));
    }
    return tuple;
  }

  ExprPtr parse_test() {
    if (is_kw("lambda")) fail("unsupported construct 'lambda'");
    if (is_kw("yield")) fail("unsupported construct 'yield'");
    auto body = parse_or();
    if (is_kw("if")) {
      const int line = next().line;
      auto cond = parse_or();
      expect_kw("else");
      auto orelse = parse_test();
      auto e = make_expr(ExprKind::kIfExp, line);
      e->children.push_back(std::move(body));
      e->children.push_back(std::move(cond));
      e->children.push_back(std::move(orelse));
      return e;
    }
    if (is_op(":=")) fail("unsupported construct ':='");
    return body;
  }

  ExprPtr parse_or() {
    auto left = parse_and();
    if (!is_kw("or")) return left;
    auto e = make_expr(ExprKind::kBoolOp, left->line, "or");
    e->children.push_back(std::move(left));
    while (accept_kw("or")) e->children.push_back(parse_and());
    return e;
  }

  ExprPtr parse_and() {
    auto left = parse_not();
    if (!is_kw("and")) return left;
    auto e = make_expr(ExprKind::kBoolOp, left->line, "and");
    e->children.push_back(std::move(left));
    while (accept_kw("and")) e->children.push_back(parse_not());
    return e;
  }

  ExprPtr parse_not() {
    if (is_kw("not")) {
      const int line = next().line;
      auto e = make_expr(ExprKind::kUnaryOp, line, "not");
      e->children.push_back(parse_not());
      return e;
    }
    return parse_comparison();
  }

  std::optional<std::string> comparison_op() {
    if (peek().kind == Tok::kOp) {
      static const std::set<std::string_view> kCmp = {"<", ">", "==", ">=", "<=", "!="};
      if (kCmp.contains(peek().text)) return next().text;
      return std::nullopt;
    }
    if (is_kw("in")) {
      next();
      return "in";
    }
    if (is_kw("not") && is_kw("in", 1)) {
      next();
      next();
      return "not in";
    }
    if (is_kw("is")) {
      next();
      if (accept_kw("not")) return "is not";
      return "is";
    }
    return std::nullopt;
  }

  ExprPtr parse_comparison() {
    auto left = parse_bitor();
    auto op = comparison_op();
    if (!op) return left;
    auto e = make_expr(ExprKind::kCompare, left->line);
    e->children.push_back(std::move(left));
    while (op) {
      e->ops.push_back(*op);
      e->children.push_back(parse_bitor());
      op = comparison_op();
    }
    return e;
  }

  ExprPtr binary_chain(ExprPtr (Parser::*inner)(), std::initializer_list<std::string_view> ops) {
    auto left = (this->*inner)();
    for (;;) {
      if (peek().kind != Tok::kOp) return left;
      const auto it = std::find(ops.begin(), ops.end(), peek().text);
      if (it == ops.end()) return left;
      const auto& t = next();
      auto e = make_expr(ExprKind::kBinaryOp, left->line, t.text);
      e->children.push_back(std::move(left));
      e->children.push_back((this->*inner)());
      left = std::move(e);
    }
  }

  ExprPtr parse_bitor() { return binary_chain(&Parser::parse_bitxor, {"|"}); }
  ExprPtr parse_bitxor() { return binary_chain(&Parser::parse_bitand, {"^"}); }
  ExprPtr parse_bitand() { return binary_chain(&Parser::parse_shift, {"&"}); }
  ExprPtr parse_shift() { return binary_chain(&Parser::parse_arith, {"<<", ">>"}); }
  ExprPtr parse_arith() { return binary_chain(&Parser::parse_term, {"+", "-"}); }
  ExprPtr parse_term() { return binary_chain(&Parser::parse_factor, {"*", "/", "//", "%", "@"}); }

  ExprPtr parse_factor() {
    if (is_op("-") || is_op("+") || is_op("~")) {
      const auto& t = next();
      auto e = make_expr(ExprKind::kUnaryOp, t.line, t.text);
      e->children.push_back(parse_factor());
      return e;
    }
    return parse_power();
  }

  ExprPtr parse_power() {
    if (is_kw("await")) fail("unsupported construct 'await'");
    auto base = parse_primary();
    if (is_op("**")) {
      next();
      auto e = make_expr(ExprKind::kBinaryOp, base->line, "**");
      e->children.push_back(std::move(base));
      e->children.push_back(parse_factor());
      return e;
    }
    return base;
  }

  ExprPtr parse_primary() {
    auto e = parse_atom();
    for (;;) {
      const int line = e->line;
      if (is_op(".")) {
        next();
        auto attr = make_expr(ExprKind::kAttribute, line, expect_name());
        attr->children.push_back(std::move(e));
        e = std::move(attr);
      } else if (is_op("(")) {
        next();
        auto call = make_expr(ExprKind::kCall, line);
        call->children.push_back(std::move(e));
        parse_call_arguments(*call);
        expect_op(")");
        e = std::move(call);
      } else if (is_op("[")) {
        next();
        auto sub = make_expr(ExprKind::kSubscript, line);
        sub->children.push_back(std::move(e));
        sub->children.push_back(parse_subscript_list());
        expect_op("]");
        e = std::move(sub);
      } else {
        return e;
      }
    }
  }

  void parse_call_arguments(Expr& call) {
    bool seen_keyword = false;
    while (!is_op(")")) {
      if (is_op("**")) {
        next();
        call.keywords.push_back({"", parse_test()});
        seen_keyword = true;
      } else if (is_op("*")) {
        const int line = next().line;
        auto star = make_expr(ExprKind::kStarred, line, "*");
        star->children.push_back(parse_test());
        call.children.push_back(std::move(star));
      } else if (peek().kind == Tok::kName && is_op("=", 1) &&
                 !kKeywords.contains(peek().text)) {
        std::string name = next().text;
        next();
        for (const auto& k : call.keywords) {
          if (k.name == name) fail("keyword argument repeated: " + name);
        }
        call.keywords.push_back({std::move(name), parse_test()});
        seen_keyword = true;
      } else {
        auto arg = parse_test();
        if (is_kw("for")) {
          if (!call.children.empty() && call.children.size() > 1) {
            fail("generator expression must be parenthesized");
          }
          arg = parse_comprehension(ExprKind::kComprehension, std::move(arg), nullptr, "()");
        } else if (seen_keyword) {
          fail("positional argument follows keyword argument");
        }
        call.children.push_back(std::move(arg));
      }
      if (!accept_op(",")) break;
    }
  }

  ExprPtr parse_subscript_list() {
    const int line = peek().line;
    auto first = parse_subscript_item();
    if (!is_op(",")) return first;
    auto tuple = make_expr(ExprKind::kTuple, line);
    tuple->children.push_back(std::move(first));
    while (accept_op(",")) {
      if (is_op("]")) break;
      tuple->children.push_back(parse_subscript_item());
    }
    return tuple;
  }

  ExprPtr parse_subscript_item() {
    const int line = peek().line;
    ExprPtr lower;
    if (!is_op(":")) {
      lower = parse_star_or(&Parser::parse_test);
      if (!is_op(":")) return lower;
    }
    expect_op(":");
    auto slice = make_expr(ExprKind::kSlice, line);
    slice->children.push_back(std::move(lower));
    slice->children.push_back(is_op(":") || is_op("]") || is_op(",") ? nullptr : parse_test());
    if (accept_op(":")) {
      slice->children.push_back(is_op("]") || is_op(",") ? nullptr : parse_test());
    } else {
      slice->children.push_back(nullptr);
    }
    return slice;
  }

  /// `elt for target in iter [if cond]...`; ops records the clause shape.
  ExprPtr parse_comprehension(ExprKind kind, ExprPtr elt, ExprPtr value, std::string brackets) {
    auto e = make_expr(kind, elt->line, std::move(brackets));
    e->children.push_back(std::move(elt));
    if (value) {
      e->children.push_back(std::move(value));
      e->ops.push_back("value");
    }
    while (accept_kw("for")) {
      auto target = parse_target_list();
      check_target(*target);
      expect_kw("in");
      e->children.push_back(std::move(target));
      e->children.push_back(parse_or());
      e->ops.push_back("for");
      while (is_kw("if")) {
        next();
        e->children.push_back(parse_or());
        e->ops.push_back("if");
      }
    }
    if (is_kw("async")) fail("unsupported construct 'async'");
    return e;
  }

  ExprPtr parse_atom() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::kNumber: {
        next();
        return make_expr(ExprKind::kNumber, t.line, t.text);
      }
      case Tok::kString:
        return parse_strings();
      case Tok::kName: {
        if (t.text == "None" || t.text == "True" || t.text == "False") {
          next();
          return make_expr(ExprKind::kConstant, t.line, t.text);
        }
        if (kKeywords.contains(t.text)) {
          fail(t.text == "lambda" || t.text == "yield" || t.text == "await"
                   ? "unsupported construct '" + t.text + "'"
                   : "invalid syntax");
        }
        next();
        return make_expr(ExprKind::kName, t.line, t.text);
      }
      case Tok::kOp:
        break;
      default:
        fail("invalid syntax");
    }
    const int line = t.line;
    if (accept_op("...")) return make_expr(ExprKind::kConstant, line, "...");
    if (accept_op("(")) {
      if (accept_op(")")) return make_expr(ExprKind::kTuple, line);
      auto first = parse_star_or(&Parser::parse_test);
      if (is_kw("for")) {
        auto gen = parse_comprehension(ExprKind::kComprehension, std::move(first), nullptr, "()");
        expect_op(")");
        return gen;
      }
      if (accept_op(")")) return first;
      auto tuple = make_expr(ExprKind::kTuple, line);
      tuple->children.push_back(std::move(first));
      while (accept_op(",")) {
        if (is_op(")")) break;
        tuple->children.push_back(parse_star_or(&Parser::parse_test));
      }
      expect_op(")");
      return tuple;
    }
    if (accept_op("[")) {
      auto list = make_expr(ExprKind::kList, line);
      if (accept_op("]")) return list;
      auto first = parse_star_or(&Parser::parse_test);
      if (is_kw("for")) {
        auto comp = parse_comprehension(ExprKind::kComprehension, std::move(first), nullptr, "[]");
        expect_op("]");
        return comp;
      }
      list->children.push_back(std::move(first));
      while (accept_op(",")) {
        if (is_op("]")) break;
        list->children.push_back(parse_star_or(&Parser::parse_test));
      }
      expect_op("]");
      return list;
    }
    if (accept_op("{")) {
      if (accept_op("}")) return make_expr(ExprKind::kDict, line);
      if (is_op("**")) return parse_dict_rest(line, nullptr);
      auto first = parse_star_or(&Parser::parse_test);
      if (accept_op(":")) return parse_dict_rest(line, std::move(first));
      auto set = make_expr(ExprKind::kSet, line);
      if (is_kw("for")) {
        auto comp = parse_comprehension(ExprKind::kComprehension, std::move(first), nullptr, "{}");
        expect_op("}");
        return comp;
      }
      set->children.push_back(std::move(first));
      while (accept_op(",")) {
        if (is_op("}")) break;
        set->children.push_back(parse_star_or(&Parser::parse_test));
      }
      expect_op("}");
      return set;
    }
    fail("invalid syntax");
  }

  /// Called after `{key:` or at `{**`.
  ExprPtr parse_dict_rest(int line, ExprPtr first_key) {
    auto dict = make_expr(ExprKind::kDict, line);
    if (first_key) {
      auto value = parse_test();
      if (is_kw("for")) {
        auto comp = parse_comprehension(ExprKind::kComprehension, std::move(first_key),
                                        std::move(value), "{}");
        expect_op("}");
        return comp;
      }
      dict->children.push_back(std::move(first_key));
      dict->children.push_back(std::move(value));
      if (!accept_op(",")) {
        expect_op("}");
        return dict;
      }
    }
    while (!is_op("}")) {
      if (accept_op("**")) {
        dict->children.push_back(nullptr);
        dict->children.push_back(parse_bitor());
      } else {
        dict->children.push_back(parse_test());
        expect_op(":");
        dict->children.push_back(parse_test());
      }
      if (!accept_op(",")) break;
    }
    expect_op("}");
    return dict;
  }

  ExprPtr parse_strings();

  std::vector<Token> toks_;
  std::size_t idx_ = 0;
};

// f-string replacement fields are parsed with a fresh tokenizer/parser pair so
// calls hidden inside them are visible to the rules.
void parse_fstring_fields(std::string_view body, int line, Expr& out) {
  std::size_t i = 0;
  int cur_line = line;
  while (i < body.size()) {
    const char c = body[i];
    if (c == '\n') ++cur_line;
    if (c == '{') {
      if (i + 1 < body.size() && body[i + 1] == '{') {
        i += 2;
        continue;
      }
      // Find the matching close brace, respecting nesting and quotes.
      std::size_t j = i + 1;
      int depth = 0;
      char quote = 0;
      std::size_t expr_end = std::string_view::npos;
      for (; j < body.size(); ++j) {
        const char d = body[j];
        if (quote) {
          if (d == quote) quote = 0;
          continue;
        }
        if (d == '\'' || d == '"') {
          quote = d;
        } else if (d == '(' || d == '[' || d == '{') {
          ++depth;
        } else if (d == ')' || d == ']') {
          --depth;
        } else if (d == '}') {
          if (depth == 0) break;
          --depth;
        } else if (depth == 0 && expr_end == std::string_view::npos &&
                   (d == ':' || (d == '!' && j + 1 < body.size() && body[j + 1] != '='))) {
          expr_end = j;
        }
      }
      if (j >= body.size()) throw SyntaxError(cur_line, "f-string: expecting '}'");
      std::string_view field = body.substr(i + 1, (expr_end == std::string_view::npos ? j : expr_end) - i - 1);
      std::string expr_text(field);
      // Self-documenting `{x=}`.
      auto trimmed_end = expr_text.find_last_not_of(" \t");
      if (trimmed_end != std::string::npos && expr_text[trimmed_end] == '=' &&
          (trimmed_end == 0 || std::string_view("=!<>").find(expr_text[trimmed_end - 1]) ==
                                   std::string_view::npos)) {
        expr_text.erase(trimmed_end);
      }
      if (expr_text.find_first_not_of(" \t\n") == std::string::npos) {
        throw SyntaxError(cur_line, "f-string: empty expression not allowed");
      }
      Tokenizer tk("(" + expr_text + ")", cur_line);
      Parser p(tk.run());
      out.children.push_back(p.parse_standalone_expression());
      if (expr_end != std::string_view::npos) {
        std::size_t spec = expr_end;
        if (body[spec] == '!') spec += 2;  // conversion is a single character
        if (spec < j && body[spec] == ':') {
          parse_fstring_fields(body.substr(spec + 1, j - spec - 1), cur_line, out);
        }
      }
      i = j + 1;
      continue;
    }
    if (c == '}') {
      if (i + 1 < body.size() && body[i + 1] == '}') {
        i += 2;
        continue;
      }
      throw SyntaxError(cur_line, "f-string: single '}' is not allowed");
    }
    ++i;
  }
}

ExprPtr Parser::parse_strings() {
  const int line = peek().line;
  bool formatted = false;
  auto e = make_expr(ExprKind::kString, line);
  while (peek().kind == Tok::kString) {
    const Token& t = next();
    if (t.prefix.find('f') != std::string::npos) {
      formatted = true;
      parse_fstring_fields(t.raw, t.line, *e);
    }
    e->value += t.text;
  }
  if (formatted) e->kind = ExprKind::kFString;
  return e;
}

// ---------------------------------------------------------------------------
// Index construction

class Indexer {
 public:
  explicit Indexer(SyntaxTree& tree) : tree_(tree) {}

  void run() {
    for (const auto& s : tree_.statements) stmt(*s);
  }

 private:
  void stmt(const Stmt& s) {
    if (s.kind == StmtKind::kImport) {
      for (const auto& n : s.names) tree_.imports.push_back({n, s.line, scope_});
    }
    if (s.kind == StmtKind::kFunctionDef) {
      const auto& fn = *s.function;
      const bool top = scope_.empty();
      if (top) scope_ = fn.name;
      for (const auto& d : fn.decorators) expr(*d, false);
      for (const auto& p : fn.params) {
        if (p.annotation) expr(*p.annotation, false);
        if (p.default_value) expr(*p.default_value, false);
      }
      for (const auto& b : fn.body) stmt(*b);
      if (top) scope_.clear();
      return;
    }
    for (const auto& e : s.exprs) {
      if (e) expr(*e, false);
    }
    for (const auto& b : s.body) stmt(*b);
    for (const auto& b : s.orelse) stmt(*b);
  }

  static bool is_literal(const Expr& e) {
    return e.kind == ExprKind::kString || e.kind == ExprKind::kNumber ||
           e.kind == ExprKind::kConstant;
  }

  void expr(const Expr& e, bool is_attribute_object) {
    switch (e.kind) {
      case ExprKind::kName:
        if (!is_attribute_object) tree_.references.push_back({e.value, e.line, scope_});
        return;
      case ExprKind::kAttribute: {
        tree_.members.push_back({e.value, dotted_path(*e.children[0]), e.line, scope_});
        if (!is_attribute_object) {
          auto path = dotted_path(e);
          if (!path.empty()) tree_.references.push_back({path, e.line, scope_});
        }
        expr(*e.children[0], true);
        return;
      }
      case ExprKind::kCall: {
        CallSite site;
        const Expr& callee = *e.children[0];
        site.callee = callee.kind == ExprKind::kSubscript
                          ? dotted_path(*callee.children[0]) + "[]"
                          : dotted_path(callee);
        site.line = e.line;
        site.scope = scope_;
        for (std::size_t i = 1; i < e.children.size(); ++i) {
          const Expr& a = *e.children[i];
          if (a.kind == ExprKind::kString) site.string_args.push_back(a.value);
          if (!is_literal(a)) site.has_non_literal_args = true;
        }
        for (const auto& k : e.keywords) {
          if (k.value->kind == ExprKind::kString) site.string_args.push_back(k.value->value);
          if (!is_literal(*k.value)) site.has_non_literal_args = true;
        }
        tree_.calls.push_back(std::move(site));
        break;
      }
      default:
        break;
    }
    for (const auto& c : e.children) {
      if (c) expr(*c, false);
    }
    for (const auto& k : e.keywords) expr(*k.value, false);
  }

  SyntaxTree& tree_;
  std::string scope_;
};

}  // namespace

std::string dotted_path(const Expr& expr) {
  if (expr.kind == ExprKind::kName) return expr.value;
  if (expr.kind == ExprKind::kAttribute) {
    auto base = dotted_path(*expr.children[0]);
    if (base.empty()) return {};
    return base + "." + expr.value;
  }
  return {};
}

std::vector<const FunctionNode*> SyntaxTree::functions() const {
  std::vector<const FunctionNode*> out;
  for (const auto& s : statements) {
    if (s->kind == StmtKind::kFunctionDef) out.push_back(s->function.get());
  }
  return out;
}

std::vector<const Stmt*> SyntaxTree::top_level_statements() const {
  std::vector<const Stmt*> out;
  for (const auto& s : statements) {
    if (s->kind != StmtKind::kFunctionDef) out.push_back(s.get());
  }
  return out;
}

SyntaxTree parse_candidate(std::string_view source) {
  Tokenizer tokenizer(source, 1);
  Parser parser(tokenizer.run());
  SyntaxTree tree;
  tree.statements = parser.parse_module();
  Indexer(tree).run();
  return tree;
}

}  // namespace opforge::lint
