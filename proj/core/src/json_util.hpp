#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mssm/error.hpp"

namespace mssm::detail {

inline std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline const nlohmann::json& require_key(const nlohmann::json& obj, const std::string& prefix, const std::string& key) {
  if (!obj.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw ConfigError(join_key(prefix, key), "missing required field");
  return *it;
}

template <typename V>
V read_value(const nlohmann::json& value, const std::string& field) {
  try {
    return value.get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(field, "has the wrong type (" + std::string(value.type_name()) + ")");
  }
}

template <typename V>
V required(const nlohmann::json& obj, const std::string& prefix, const std::string& key) {
  return read_value<V>(require_key(obj, prefix, key), join_key(prefix, key));
}

template <typename V>
V optional_or(const nlohmann::json& obj, const std::string& prefix, const std::string& key, V fallback) {
  if (!obj.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  return read_value<V>(*it, join_key(prefix, key));
}

}  // namespace mssm::detail
