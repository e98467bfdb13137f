#pragma once

#include <set>
#include <string>
#include <utility>

#include "bioage/errors.hpp"
#include "json.hpp"

namespace bioage {

using json = nlohmann::json;

// Strict reader for JSON config objects: every key must be consumed, unknown
// keys are rejected by name. Catches typos in experiment configs early.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : obj_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + ": expected a JSON object");
  }

  bool has(const char* key) const { return obj_->contains(key); }

  template <typename T>
  T require(const char* key) {
    if (!obj_->contains(key)) throw ConfigError(path_ + "." + key + ": missing required field");
    return convert<T>(key);
  }

  template <typename T>
  T get_or(const char* key, T fallback) {
    if (!obj_->contains(key)) return fallback;
    return convert<T>(key);
  }

  // Consume a nested value for manual handling.
  const json& raw(const char* key) {
    if (!obj_->contains(key)) throw ConfigError(path_ + "." + key + ": missing required field");
    seen_.insert(key);
    return (*obj_)[key];
  }

  const json& raw_or_null(const char* key) {
    static const json null_value;
    if (!obj_->contains(key)) return null_value;
    seen_.insert(key);
    return (*obj_)[key];
  }

  std::string path() const { return path_; }

  // Rejects any key that was never consumed.
  void finish() const {
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (seen_.find(it.key()) == seen_.end()) {
        throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  template <typename T>
  T convert(const char* key) {
    seen_.insert(key);
    try {
      return (*obj_)[key].get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  const json* obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON (" + e.what() + ")");
  }
}

}  // namespace bioage
