#pragma once

#include <string>

#include "json.hpp"

namespace varlab::detail {

using OrderedJson = nlohmann::ordered_json;

// Compact (indent < 0) or pretty JSON with every float written as %.17g.
std::string dump_json(const OrderedJson& j, int indent = -1);

}  // namespace varlab::detail
