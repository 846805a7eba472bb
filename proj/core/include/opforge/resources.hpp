#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace opforge::resources {

/// Files under core/resources/ compiled into the library, keyed by their
/// relative path (e.g. "templates/init.txt"). Throws on unknown names.
std::string_view get(std::string_view name);

bool contains(std::string_view name);
std::vector<std::string> list();

}  // namespace opforge::resources
