#include "opforge/catalog.hpp"

#include <algorithm>
#include <queue>

#include <nlohmann/json.hpp>

#include "opforge/error.hpp"
#include "opforge/resources.hpp"
#include "opforge/util.hpp"

namespace opforge::catalog {

using nlohmann::json;

namespace {

constexpr int kCatalogSchemaVersion = 1;

const std::vector<std::string> kNoEdges;

}  // namespace

std::string_view to_string(OperatorCategory category) {
  switch (category) {
    case OperatorCategory::kElementwise: return "Elementwise";
    case OperatorCategory::kDeepLearning: return "DeepLearning";
    case OperatorCategory::kLinearAlgebra: return "LinearAlgebra";
    case OperatorCategory::kShapeManipulation: return "ShapeManipulation";
    case OperatorCategory::kReduction: return "Reduction";
    case OperatorCategory::kIndexingSelection: return "IndexingSelection";
    case OperatorCategory::kOther: return "Other";
  }
  return "Other";
}

std::optional<OperatorCategory> parse_category(std::string_view name) {
  for (auto c : kAllCategories) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// DocstringDag

void DocstringDag::add_node(std::string id, std::string docstring) {
  edges_.try_emplace(id);
  nodes_.insert_or_assign(std::move(id), std::move(docstring));
}

void DocstringDag::add_edge(const std::string& from, const std::string& to) {
  auto& out = edges_[from];
  if (std::find(out.begin(), out.end(), to) == out.end()) out.push_back(to);
}

bool DocstringDag::contains(std::string_view id) const {
  return nodes_.find(id) != nodes_.end();
}

const std::string& DocstringDag::docstring(std::string_view id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) {
    throw Error(ErrorCode::kUnknownOperator,
                "no docstring node '" + std::string(id) + "'");
  }
  return it->second;
}

const std::vector<std::string>& DocstringDag::edges(std::string_view id) const {
  auto it = edges_.find(id);
  return it == edges_.end() ? kNoEdges : it->second;
}

void DocstringDag::validate() const {
  for (const auto& [from, targets] : edges_) {
    if (!contains(from)) {
      throw Error(ErrorCode::kDanglingReference,
                  "edge source '" + from + "' has no docstring node");
    }
    for (const auto& to : targets) {
      if (!contains(to)) {
        throw Error(ErrorCode::kDanglingReference,
                    "'" + from + "' references unknown operator '" + to + "'");
      }
    }
  }
  // Kahn over the whole graph; leftovers sit on a cycle.
  std::map<std::string_view, int> indegree;
  for (const auto& [id, _] : nodes_) indegree[id];
  for (const auto& [_, targets] : edges_) {
    for (const auto& to : targets) ++indegree[to];
  }
  std::vector<std::string_view> ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push_back(id);
  }
  std::size_t visited = 0;
  while (!ready.empty()) {
    auto id = ready.back();
    ready.pop_back();
    ++visited;
    for (const auto& to : edges(id)) {
      if (--indegree[to] == 0) ready.push_back(to);
    }
  }
  if (visited != nodes_.size()) {
    std::string members;
    for (const auto& [id, d] : indegree) {
      if (d > 0) members += (members.empty() ? "" : ", ") + std::string(id);
    }
    throw Error(ErrorCode::kCycleDetected,
                "docstring references form a cycle among: " + members);
  }
}

// ---------------------------------------------------------------------------
// OperatorCatalog

OperatorCatalog::OperatorCatalog(std::vector<OperatorSpec> ops, DocstringDag dag,
                                 std::string fingerprint)
    : ops_(std::move(ops)), dag_(std::move(dag)),
      fingerprint_(std::move(fingerprint)) {
  std::sort(ops_.begin(), ops_.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
}

const OperatorSpec* OperatorCatalog::find(std::string_view name) const {
  auto it = std::lower_bound(
      ops_.begin(), ops_.end(), name,
      [](const OperatorSpec& op, std::string_view n) { return op.name < n; });
  if (it == ops_.end() || it->name != name) return nullptr;
  return &*it;
}

// ---------------------------------------------------------------------------
// Category rules

CategoryRules load_category_rules(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError,
                std::string("category rules: ") + e.what());
  }
  CategoryRules out;
  try {
    if (doc.contains("default")) {
      auto name = doc.at("default").get<std::string>();
      auto cat = parse_category(name);
      if (!cat) throw Error(ErrorCode::kParseError, "unknown category " + name);
      out.fallback = *cat;
    }
    for (const auto& entry : doc.at("rules")) {
      CategoryRule rule;
      const auto match = entry.at("match").get<std::string>();
      if (match == "exact") {
        rule.match = CategoryRule::Match::kExact;
      } else if (match == "prefix") {
        rule.match = CategoryRule::Match::kPrefix;
      } else if (match == "contains") {
        rule.match = CategoryRule::Match::kContains;
      } else {
        throw Error(ErrorCode::kParseError, "unknown match kind " + match);
      }
      rule.pattern = entry.at("pattern").get<std::string>();
      auto name = entry.at("category").get<std::string>();
      auto cat = parse_category(name);
      if (!cat) throw Error(ErrorCode::kParseError, "unknown category " + name);
      rule.category = *cat;
      out.rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError,
                std::string("category rules: ") + e.what());
  }
  return out;
}

const CategoryRules& default_category_rules() {
  static const CategoryRules rules =
      load_category_rules(resources::get("data/category_rules.json"));
  return rules;
}

OperatorCategory categorize(std::string_view op_name,
                            const CategoryRules& rules) {
  for (const auto& rule : rules.rules) {
    bool hit = false;
    switch (rule.match) {
      case CategoryRule::Match::kExact: hit = op_name == rule.pattern; break;
      case CategoryRule::Match::kPrefix:
        hit = op_name.starts_with(rule.pattern);
        break;
      case CategoryRule::Match::kContains:
        hit = op_name.find(rule.pattern) != std::string_view::npos;
        break;
    }
    if (hit) return rule.category;
  }
  return rules.fallback;
}

// ---------------------------------------------------------------------------
// load_catalog

namespace {

std::vector<std::string> string_list(const json& record, const char* key) {
  if (!record.contains(key)) return {};
  return record.at(key).get<std::vector<std::string>>();
}

}  // namespace

OperatorCatalog load_catalog(std::string_view json_text,
                             const CategoryRules& rules) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, std::string("catalog: ") + e.what());
  }

  std::vector<OperatorSpec> ops;
  DocstringDag dag;
  std::set<std::string> seen;

  try {
    if (!doc.is_object() || !doc.contains("schema_version")) {
      throw Error(ErrorCode::kParseError, "catalog: missing schema_version");
    }
    if (doc.at("schema_version").get<int>() != kCatalogSchemaVersion) {
      throw Error(ErrorCode::kParseError,
                  "catalog: unsupported schema_version " +
                      doc.at("schema_version").dump());
    }
    for (const auto& record : doc.at("operators")) {
      OperatorSpec op;
      op.name = record.at("name").get<std::string>();
      if (op.name.empty()) {
        throw Error(ErrorCode::kParseError, "catalog: empty operator name");
      }
      if (!seen.insert(op.name).second) {
        throw Error(ErrorCode::kDuplicateOperator,
                    "catalog: duplicate operator '" + op.name + "'");
      }
      op.docstring = record.value("docstring", "");
      op.referenced_ops = string_list(record, "references");
      for (const auto& d : string_list(record, "dtypes")) {
        auto dtype = parse_dtype(d);
        if (!dtype) {
          throw Error(ErrorCode::kParseError,
                      "catalog: operator '" + op.name +
                          "' has unsupported dtype '" + d + "'");
        }
        op.dtypes.insert(*dtype);
      }
      const auto count = record.value("test_count", std::int64_t{0});
      if (count < 0) {
        throw Error(ErrorCode::kParseError,
                    "catalog: negative test_count for '" + op.name + "'");
      }
      op.test_count = static_cast<std::uint32_t>(count);
      for (const auto& t : string_list(record, "tags")) op.tags.insert(t);
      if (record.contains("category")) {
        auto name = record.at("category").get<std::string>();
        auto cat = parse_category(name);
        if (!cat) {
          throw Error(ErrorCode::kParseError, "catalog: unknown category " + name);
        }
        op.category = *cat;
      } else {
        op.category = categorize(op.name, rules);
      }
      dag.add_node(op.name, op.docstring);
      ops.push_back(std::move(op));
    }
    // Documentation-only nodes: referenced prose that is not itself a target.
    if (doc.contains("docstrings")) {
      for (const auto& record : doc.at("docstrings")) {
        auto name = record.at("name").get<std::string>();
        if (!seen.insert(name).second) {
          throw Error(ErrorCode::kDuplicateOperator,
                      "catalog: duplicate docstring node '" + name + "'");
        }
        dag.add_node(name, record.value("docstring", ""));
        for (const auto& ref : string_list(record, "references")) {
          dag.add_edge(name, ref);
        }
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("catalog: ") + e.what());
  }

  for (const auto& op : ops) {
    for (const auto& ref : op.referenced_ops) dag.add_edge(op.name, ref);
  }
  dag.validate();

  std::sort(ops.begin(), ops.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  json canonical = json::array();
  for (const auto& op : ops) {
    json tags = json::array();
    for (const auto& t : op.tags) tags.push_back(t);
    json dtypes = json::array();
    for (auto d : op.dtypes) dtypes.push_back(to_string(d));
    canonical.push_back({{"name", op.name},
                         {"docstring", op.docstring},
                         {"references", op.referenced_ops},
                         {"dtypes", dtypes},
                         {"test_count", op.test_count},
                         {"tags", tags}});
  }
  auto fingerprint = util::hex64(util::fnv1a64(canonical.dump()));
  return OperatorCatalog(std::move(ops), std::move(dag), std::move(fingerprint));
}

// ---------------------------------------------------------------------------
// resolve_docstrings

std::string ResolvedDocstrings::text() const {
  std::string out = primary;
  for (const auto& s : supplemental) {
    out += "\n\n";
    out += s;
  }
  return out;
}

ResolvedDocstrings resolve_docstring_chain(std::string_view op_name,
                                           const DocstringDag& dag) {
  if (!dag.contains(op_name)) {
    throw Error(ErrorCode::kUnknownOperator,
                "no docstring node '" + std::string(op_name) + "'");
  }

  // Collect the reachable subgraph, rejecting back edges on the way.
  enum class Mark { kNone, kActive, kDone };
  std::map<std::string, Mark, std::less<>> marks;
  std::vector<std::string> reachable;
  auto visit = [&](auto&& self, const std::string& id) -> void {
    auto& mark = marks[id];
    if (mark == Mark::kDone) return;
    if (mark == Mark::kActive) {
      throw Error(ErrorCode::kCycleDetected,
                  "docstring reference cycle through '" + id + "'");
    }
    mark = Mark::kActive;
    for (const auto& to : dag.edges(id)) {
      if (!dag.contains(to)) {
        throw Error(ErrorCode::kDanglingReference,
                    "'" + id + "' references unknown operator '" + to + "'");
      }
      self(self, to);
    }
    marks[id] = Mark::kDone;
    reachable.push_back(id);
  };
  visit(visit, std::string(op_name));

  std::map<std::string_view, int> indegree;
  for (const auto& id : reachable) indegree[id];
  for (const auto& id : reachable) {
    for (const auto& to : dag.edges(id)) ++indegree[to];
  }
  std::priority_queue<std::string_view, std::vector<std::string_view>,
                      std::greater<>>
      ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push(id);
  }

  ResolvedDocstrings out;
  bool first = true;
  while (!ready.empty()) {
    auto id = ready.top();
    ready.pop();
    if (first) {
      out.primary = dag.docstring(id);
      first = false;
    } else {
      out.supplemental.push_back(dag.docstring(id));
    }
    for (const auto& to : dag.edges(id)) {
      if (--indegree[to] == 0) ready.push(to);
    }
  }
  return out;
}

std::string resolve_docstrings(std::string_view op_name,
                               const DocstringDag& dag) {
  return resolve_docstring_chain(op_name, dag).text();
}

// ---------------------------------------------------------------------------
// filter_operators

std::vector<OperatorSpec> filter_operators(const std::vector<OperatorSpec>& ops,
                                           const FilterPolicy& policy) {
  std::vector<OperatorSpec> out;
  for (const auto& op : ops) {
    const bool excluded_tag =
        std::any_of(op.tags.begin(), op.tags.end(), [&](const auto& t) {
          return policy.exclude_tags.contains(t);
        });
    if (excluded_tag) continue;
    if (op.test_count >= policy.max_test_count) continue;
    OperatorSpec kept = op;
    std::erase_if(kept.dtypes,
                  [&](Dtype d) { return !policy.allowed_dtypes.contains(d); });
    if (kept.dtypes.empty()) continue;
    out.push_back(std::move(kept));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

}  // namespace opforge::catalog
