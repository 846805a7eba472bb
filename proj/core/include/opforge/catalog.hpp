#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "opforge/dtype.hpp"

namespace opforge::catalog {

enum class OperatorCategory {
  kElementwise,
  kDeepLearning,
  kLinearAlgebra,
  kShapeManipulation,
  kReduction,
  kIndexingSelection,
  kOther,
};

inline constexpr std::size_t kCategoryCount = 7;
inline constexpr OperatorCategory kAllCategories[kCategoryCount] = {
    OperatorCategory::kElementwise,       OperatorCategory::kDeepLearning,
    OperatorCategory::kLinearAlgebra,     OperatorCategory::kShapeManipulation,
    OperatorCategory::kReduction,         OperatorCategory::kIndexingSelection,
    OperatorCategory::kOther};

std::string_view to_string(OperatorCategory category);
std::optional<OperatorCategory> parse_category(std::string_view name);

struct OperatorSpec {
  std::string name;
  std::string docstring;
  std::vector<std::string> referenced_ops;
  DtypeSet dtypes;
  std::uint32_t test_count = 0;
  std::set<std::string> tags;
  OperatorCategory category = OperatorCategory::kOther;

  bool operator==(const OperatorSpec&) const = default;
};

/// Docstrings keyed by operator id with "references" edges. Mutable while
/// being built; validate() establishes the acyclic/closed invariants.
class DocstringDag {
 public:
  void add_node(std::string id, std::string docstring);
  void add_edge(const std::string& from, const std::string& to);

  bool contains(std::string_view id) const;
  const std::string& docstring(std::string_view id) const;
  const std::vector<std::string>& edges(std::string_view id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Throws DanglingReference or CycleDetected.
  void validate() const;

 private:
  std::map<std::string, std::string, std::less<>> nodes_;
  std::map<std::string, std::vector<std::string>, std::less<>> edges_;
};

/// Immutable after load_catalog; safe to share across sessions.
class OperatorCatalog {
 public:
  OperatorCatalog() = default;
  OperatorCatalog(std::vector<OperatorSpec> ops, DocstringDag dag,
                  std::string fingerprint);

  const std::vector<OperatorSpec>& operators() const { return ops_; }
  const OperatorSpec* find(std::string_view name) const;
  const DocstringDag& dag() const { return dag_; }
  std::size_t size() const { return ops_.size(); }

  /// Stable hash over the canonical document, used to check that reports
  /// being aggregated came from the same catalog.
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  std::vector<OperatorSpec> ops_;  // sorted by name
  DocstringDag dag_;
  std::string fingerprint_;
};

struct CategoryRule {
  enum class Match { kExact, kPrefix, kContains };
  Match match = Match::kPrefix;
  std::string pattern;
  OperatorCategory category = OperatorCategory::kOther;
};

struct CategoryRules {
  std::vector<CategoryRule> rules;
  OperatorCategory fallback = OperatorCategory::kOther;
};

CategoryRules load_category_rules(std::string_view json_text);
const CategoryRules& default_category_rules();

/// First matching rule wins; unmatched names map to the fallback.
OperatorCategory categorize(std::string_view op_name,
                            const CategoryRules& rules);

/// Parses a catalog document (JSON, schema_version 1). Categories are
/// assigned with `rules` unless a record carries an explicit "category".
OperatorCatalog load_catalog(std::string_view json_text,
                             const CategoryRules& rules = default_category_rules());

struct ResolvedDocstrings {
  std::string primary;
  std::vector<std::string> supplemental;

  std::string text() const;
};

/// The operator's own docstring followed by every transitively referenced
/// docstring once, in topological order with lexicographic tie-break.
ResolvedDocstrings resolve_docstring_chain(std::string_view op_name,
                                           const DocstringDag& dag);
std::string resolve_docstrings(std::string_view op_name,
                               const DocstringDag& dag);

struct FilterPolicy {
  std::uint32_t max_test_count = 900;
  std::set<std::string> exclude_tags = {"complex", "random"};
  DtypeSet allowed_dtypes = {kAllDtypes.begin(), kAllDtypes.end()};
};

/// Drops excluded-tag ops and ops at or over the test cap, narrows dtypes to
/// the policy, and returns the survivors sorted by name.
std::vector<OperatorSpec> filter_operators(const std::vector<OperatorSpec>& ops,
                                           const FilterPolicy& policy);

}  // namespace opforge::catalog
