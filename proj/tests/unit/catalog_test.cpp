#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "opforge/catalog.hpp"
#include "opforge/error.hpp"
#include "test_support.hpp"

using namespace opforge::catalog;
using opforge::Dtype;
using opforge::ErrorCode;
using opforge::testkit::Gen;
using opforge::testkit::read_fixture;

namespace {

ErrorCode load_error(const std::string& text) {
  try {
    load_catalog(text);
  } catch (const opforge::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "catalog accepted";
  return ErrorCode::kIoError;
}

std::string op_record(const std::string& name, const std::string& refs = "[]") {
  return R"({"name":")" + name + R"(","docstring":"doc )" + name +
         R"(","references":)" + refs + R"(,"dtypes":["float32"],"test_count":1})";
}

std::string catalog_doc(const std::vector<std::string>& records) {
  std::string out = R"({"schema_version":1,"operators":[)";
  for (std::size_t i = 0; i < records.size(); ++i) out += (i ? "," : "") + records[i];
  return out + "]}";
}

// Independent ordering oracle: repeatedly emit the lexicographically smallest
// reachable node whose reachable predecessors have all been emitted.
std::vector<std::string> oracle_order(const std::string& start,
                                      const std::map<std::string, std::vector<std::string>>& g) {
  std::set<std::string> reach;
  std::vector<std::string> stack = {start};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!reach.insert(n).second) continue;
    if (auto it = g.find(n); it != g.end()) {
      for (const auto& m : it->second) stack.push_back(m);
    }
  }
  std::vector<std::string> out;
  std::set<std::string> emitted;
  while (emitted.size() < reach.size()) {
    for (const auto& cand : reach) {
      if (emitted.contains(cand)) continue;
      bool ready = true;
      for (const auto& p : reach) {
        if (emitted.contains(p)) continue;
        auto it = g.find(p);
        if (it != g.end() && std::count(it->second.begin(), it->second.end(), cand)) {
          ready = false;
          break;
        }
      }
      if (ready) {
        out.push_back(cand);
        emitted.insert(cand);
        break;
      }
    }
  }
  return out;
}

}  // namespace

TEST(Catalog, LoadsMinimalCatalog) {
  const auto cat = load_catalog(read_fixture("catalog/small.json"));
  ASSERT_EQ(cat.size(), 3u);
  EXPECT_EQ(cat.operators()[0].name, "argmax");
  EXPECT_EQ(cat.operators()[1].name, "diag");
  EXPECT_EQ(cat.operators()[2].name, "exp");
  EXPECT_EQ(cat.find("exp")->test_count, 120u);
  EXPECT_EQ(cat.find("exp")->category, OperatorCategory::kElementwise);
  EXPECT_EQ(cat.find("argmax")->category, OperatorCategory::kReduction);
  EXPECT_EQ(cat.find("missing"), nullptr);
  EXPECT_EQ(cat.dag().edges("argmax"), std::vector<std::string>{"max"});
  EXPECT_EQ(cat.fingerprint().size(), 16u);
}

TEST(Catalog, FingerprintIgnoresRecordOrder) {
  const auto a = load_catalog(catalog_doc({op_record("a"), op_record("b")}));
  const auto b = load_catalog(catalog_doc({op_record("b"), op_record("a")}));
  const auto c = load_catalog(catalog_doc({op_record("a"), op_record("c")}));
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Catalog, Errors) {
  EXPECT_EQ(load_error(catalog_doc({op_record("exp"), op_record("exp")})),
            ErrorCode::kDuplicateOperator);
  EXPECT_EQ(load_error(catalog_doc({op_record("argmax", R"(["max"])")})),
            ErrorCode::kDanglingReference);
  EXPECT_EQ(load_error(catalog_doc({op_record("a", R"(["b"])"), op_record("b", R"(["a"])")})),
            ErrorCode::kCycleDetected);
  EXPECT_EQ(load_error(catalog_doc({op_record("a", R"(["a"])")})), ErrorCode::kCycleDetected);
  EXPECT_EQ(load_error("{not json"), ErrorCode::kParseError);
  EXPECT_EQ(load_error(R"({"operators":[]})"), ErrorCode::kParseError);
  EXPECT_EQ(load_error(R"({"schema_version":2,"operators":[]})"), ErrorCode::kParseError);
  EXPECT_EQ(load_error(R"({"schema_version":1,"operators":[{"name":"x","dtypes":["complex64"]}]})"),
            ErrorCode::kParseError);
  EXPECT_EQ(load_error(R"({"schema_version":1,"operators":[{"name":"x","test_count":-1}]})"),
            ErrorCode::kParseError);
  EXPECT_EQ(load_error(R"({"schema_version":1,"operators":[{"docstring":"x"}]})"),
            ErrorCode::kParseError);
}

TEST(Docstrings, LeafHasOnlyItsOwnDocstring) {
  const auto cat = load_catalog(read_fixture("catalog/small.json"));
  EXPECT_EQ(resolve_docstrings("exp", cat.dag()), cat.find("exp")->docstring);
}

TEST(Docstrings, ArgmaxAppendsMaxOnce) {
  const auto cat = load_catalog(read_fixture("catalog/small.json"));
  const auto chain = resolve_docstring_chain("argmax", cat.dag());
  EXPECT_EQ(chain.primary, cat.find("argmax")->docstring);
  ASSERT_EQ(chain.supplemental.size(), 1u);
  EXPECT_EQ(chain.supplemental[0], cat.dag().docstring("max"));
  EXPECT_EQ(chain.text(), chain.primary + "\n\n" + chain.supplemental[0]);
}

TEST(Docstrings, DiamondEmitsSharedNodeOnce) {
  DocstringDag dag;
  dag.add_node("a", "A");
  dag.add_node("b", "B");
  dag.add_node("c", "C");
  dag.add_edge("a", "b");
  dag.add_edge("b", "c");
  dag.add_edge("a", "c");
  const auto text = resolve_docstrings("a", dag);
  EXPECT_EQ(text, "A\n\nB\n\nC");
}

TEST(Docstrings, CycleAndUnknown) {
  DocstringDag dag;
  dag.add_node("a", "A");
  dag.add_node("b", "B");
  dag.add_edge("a", "b");
  dag.add_edge("b", "a");
  EXPECT_THROW(resolve_docstrings("a", dag), opforge::Error);
  try {
    resolve_docstrings("a", dag);
  } catch (const opforge::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCycleDetected);
  }
  try {
    resolve_docstrings("zzz", dag);
    ADD_FAILURE();
  } catch (const opforge::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownOperator);
  }
}

TEST(DocstringsProperty, RandomDagsMatchOracle) {
  Gen gen(4242);
  for (int iter = 0; iter < 400; ++iter) {
    const int n = gen.range(1, 14);
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i) names.push_back(gen.ident(3) + "_" + std::to_string(i));
    // Edges only go forward in a random permutation, so the graph is acyclic.
    std::shuffle(names.begin(), names.end(), gen.engine());
    DocstringDag dag;
    std::map<std::string, std::vector<std::string>> g;
    for (const auto& nm : names) dag.add_node(nm, "doc:" + nm);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (gen.coin(0.3)) {
          dag.add_edge(names[static_cast<std::size_t>(i)], names[static_cast<std::size_t>(j)]);
          g[names[static_cast<std::size_t>(i)]].push_back(names[static_cast<std::size_t>(j)]);
        }
      }
    }
    ASSERT_NO_THROW(dag.validate());
    const auto& start = names[static_cast<std::size_t>(gen.range(0, n - 1))];
    const auto chain = resolve_docstring_chain(start, dag);
    std::vector<std::string> got = {chain.primary};
    got.insert(got.end(), chain.supplemental.begin(), chain.supplemental.end());
    std::vector<std::string> want;
    for (const auto& id : oracle_order(start, g)) want.push_back("doc:" + id);
    ASSERT_EQ(got, want) << "start=" << start;
    std::set<std::string> unique(got.begin(), got.end());
    EXPECT_EQ(unique.size(), got.size());
  }
}

TEST(Filter, ExclusionRules) {
  std::vector<OperatorSpec> ops(5);
  ops[0].name = "fft.fft";
  ops[0].tags = {"complex"};
  ops[1].name = "at_cap";
  ops[1].test_count = 900;
  ops[2].name = "below_cap";
  ops[2].test_count = 899;
  ops[3].name = "bernoulli";
  ops[3].tags = {"random"};
  ops[4].name = "int_only";
  ops[4].dtypes = {Dtype::kInt64};
  for (std::size_t i = 0; i < 4; ++i) ops[i].dtypes = {Dtype::kFloat32, Dtype::kInt32};

  FilterPolicy policy;
  policy.allowed_dtypes = {Dtype::kFloat32, Dtype::kInt32};
  const auto out = filter_operators(ops, policy);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].name, "below_cap");
  EXPECT_TRUE(filter_operators({}, FilterPolicy{}).empty());
}

TEST(Filter, NarrowsDtypes) {
  std::vector<OperatorSpec> ops(1);
  ops[0].name = "exp";
  ops[0].dtypes = {Dtype::kFloat32, Dtype::kBfloat16, Dtype::kInt64};
  FilterPolicy policy;
  policy.allowed_dtypes = {Dtype::kFloat32, Dtype::kInt64};
  const auto out = filter_operators(ops, policy);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].dtypes, (opforge::DtypeSet{Dtype::kFloat32, Dtype::kInt64}));
}

TEST(FilterProperty, IdempotentAndSorted) {
  Gen gen(31);
  const std::vector<std::string> tags = {"complex", "random", "inplace", "view"};
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<OperatorSpec> ops(static_cast<std::size_t>(gen.range(0, 30)));
    for (auto& op : ops) {
      op.name = gen.ident(6);
      op.test_count = static_cast<std::uint32_t>(gen.range(0, 1200));
      for (auto d : opforge::kAllDtypes) {
        if (gen.coin()) op.dtypes.insert(d);
      }
      for (const auto& t : tags) {
        if (gen.coin(0.15)) op.tags.insert(t);
      }
    }
    FilterPolicy policy;
    policy.max_test_count = static_cast<std::uint32_t>(gen.range(1, 1200));
    for (auto d : opforge::kAllDtypes) {
      if (!gen.coin(0.3)) continue;
      policy.allowed_dtypes.erase(d);
    }
    const auto once = filter_operators(ops, policy);
    EXPECT_EQ(filter_operators(once, policy), once);
    EXPECT_TRUE(std::is_sorted(once.begin(), once.end(),
                               [](const auto& a, const auto& b) { return a.name < b.name; }));
    for (const auto& op : once) {
      EXPECT_LT(op.test_count, policy.max_test_count);
      EXPECT_FALSE(op.tags.contains("complex") || op.tags.contains("random"));
      for (auto d : op.dtypes) EXPECT_TRUE(policy.allowed_dtypes.contains(d));
    }
  }
}

TEST(Categorize, MatchesHandLabeledSample) {
  const auto sample = nlohmann::json::parse(read_fixture("catalog/category_sample.json"));
  ASSERT_EQ(sample.size(), 20u);
  for (const auto& [name, label] : sample.items()) {
    EXPECT_EQ(to_string(categorize(name, default_category_rules())), label.get<std::string>())
        << name;
  }
}

TEST(Categorize, FirstRuleWinsAndFallback) {
  const auto rules = load_category_rules(R"({"default":"Reduction","rules":[
    {"match":"prefix","pattern":"nn.","category":"DeepLearning"},
    {"match":"contains","pattern":"norm","category":"LinearAlgebra"}]})");
  EXPECT_EQ(categorize("nn.functional.layer_norm", rules), OperatorCategory::kDeepLearning);
  EXPECT_EQ(categorize("linalg.vector_norm", rules), OperatorCategory::kLinearAlgebra);
  EXPECT_EQ(categorize("unknown", rules), OperatorCategory::kReduction);
  EXPECT_EQ(categorize("zzz_unknown", default_category_rules()), OperatorCategory::kOther);
  EXPECT_THROW(load_category_rules(R"({"rules":[{"match":"regex","pattern":"x","category":"Other"}]})"),
               opforge::Error);
  EXPECT_THROW(load_category_rules(R"({"rules":[{"match":"exact","pattern":"x","category":"Nope"}]})"),
               opforge::Error);
}

TEST(Categorize, SevenCategories) {
  std::set<std::string_view> names;
  for (auto c : kAllCategories) {
    names.insert(to_string(c));
    EXPECT_EQ(parse_category(to_string(c)), c);
  }
  EXPECT_EQ(names.size(), 7u);
  EXPECT_FALSE(parse_category("Misc").has_value());
}

TEST(Catalog, ExplicitCategoryOverridesRules) {
  const auto cat = load_catalog(
      R"({"schema_version":1,"operators":[{"name":"exp","category":"Other","dtypes":["float32"]}]})");
  EXPECT_EQ(cat.find("exp")->category, OperatorCategory::kOther);
}
