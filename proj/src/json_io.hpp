#pragma once

#include <string>

#include <json.hpp>

#include "lgcnet/error.hpp"
#include "lgcnet/searchspace.hpp"

namespace lgc::detail {

using json = nlohmann::json;

template <typename T, typename E = ParseError>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw E(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw E(where + ": bad value for '" + key + "': " + e.what());
  }
}

json topology_to_json(const Topology& t);
Topology topology_from_json(const json& j);

}  // namespace lgc::detail
