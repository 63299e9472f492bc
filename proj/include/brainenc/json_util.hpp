#pragma once

#include <initializer_list>
#include <set>
#include <type_traits>
#include <string>

#include "brainenc/errors.hpp"
#include "json.hpp"

namespace brainenc {

/// Reads one JSON object under a dotted path, rejecting unknown keys and
/// reporting type errors with the full key path.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
    std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j_.items())
      if (!keys.count(key)) throw ConfigError("unknown key '" + child(key) + "'");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) const {
    if (!j_.contains(key)) throw ConfigError("missing key '" + child(key) + "'");
    return convert<T>(key);
  }

  const nlohmann::json& raw(const std::string& key) const { return j_.at(key); }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "configuration" : "'" + path_ + "'"; }

  template <typename T>
  T convert(const std::string& key) const {
    const auto& v = j_.at(key);
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<long long>() >= 0))
        throw ConfigError("'" + child(key) + "' must be a non-negative integer");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("'" + child(key) + "' must be true or false");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("'" + child(key) + "' must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("'" + child(key) + "' must be a string");
    }
    try {
      return v.template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("'" + child(key) + "': " + e.what());
    }
  }

  const nlohmann::json& j_;
  std::string path_;
};

}  // namespace brainenc
