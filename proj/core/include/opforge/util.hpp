#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace opforge::util {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

/// JSON has no NaN/Inf; non-finite values travel as "nan", "inf", "-inf".
nlohmann::json encode_double(double value);
double decode_double(const nlohmann::json& value);

/// NaN-aware equality used for value-semantics comparisons of decoded data.
bool same_double(double a, double b);

/// Keeps the trailing `max_chars` characters of `text`.
std::string tail(std::string_view text, std::size_t max_chars);

std::string trim(std::string_view text);

}  // namespace opforge::util
