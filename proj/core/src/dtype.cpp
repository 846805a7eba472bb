#include "opforge/dtype.hpp"

namespace opforge {

std::string_view to_string(Dtype dtype) {
  switch (dtype) {
    case Dtype::kBfloat16: return "bfloat16";
    case Dtype::kFloat16: return "float16";
    case Dtype::kFloat32: return "float32";
    case Dtype::kInt32: return "int32";
    case Dtype::kInt64: return "int64";
  }
  return "unknown";
}

std::optional<Dtype> parse_dtype(std::string_view name) {
  for (Dtype d : kAllDtypes) {
    if (to_string(d) == name) return d;
  }
  return std::nullopt;
}

std::string render_dtype_list(const DtypeSet& dtypes) {
  std::string out = "[";
  bool first = true;
  for (Dtype d : kAllDtypes) {
    if (!dtypes.contains(d)) continue;
    if (!first) out += ", ";
    out += '\'';
    out += to_string(d);
    out += '\'';
    first = false;
  }
  out += ']';
  return out;
}

}  // namespace opforge
