#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace opforge {

/// The five element types candidates are tested against.
enum class Dtype { kBfloat16, kFloat16, kFloat32, kInt32, kInt64 };

inline constexpr std::array<Dtype, 5> kAllDtypes = {
    Dtype::kBfloat16, Dtype::kFloat16, Dtype::kFloat32, Dtype::kInt32,
    Dtype::kInt64};

/// Execution order for test plans: float32 first, integers last.
inline constexpr std::array<Dtype, 5> kTestOrder = {
    Dtype::kFloat32, Dtype::kBfloat16, Dtype::kFloat16, Dtype::kInt32,
    Dtype::kInt64};

using DtypeSet = std::set<Dtype>;

std::string_view to_string(Dtype dtype);
std::optional<Dtype> parse_dtype(std::string_view name);

/// Renders like a Python list literal: ['bfloat16', 'float32'].
std::string render_dtype_list(const DtypeSet& dtypes);

constexpr bool is_floating(Dtype dtype) {
  return dtype == Dtype::kBfloat16 || dtype == Dtype::kFloat16 ||
         dtype == Dtype::kFloat32;
}

}  // namespace opforge
