#pragma once

// Run configuration for the command-line tool: a JSON document of defaults,
// overlaid by a config file and then by dotted-key overrides. Keys outside
// the defaults are rejected and value types must match.

#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace drivex::cli {

/// Any problem with the user's configuration (exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RunConfig {
 public:
  explicit RunConfig(nlohmann::json defaults) : value_(std::move(defaults)) {}

  /// Overlays a JSON object. Throws ConfigError on unknown keys or type mismatches.
  void merge(const nlohmann::json& overlay);
  void merge_file(const std::filesystem::path& path);
  /// "a.b.c=value"; value is parsed as JSON when possible, else taken as a string.
  void apply_override(const std::string& assignment);
  /// Sets a leaf by dotted key (must exist) without marking it as user-set.
  void set_default(const std::string& key, const nlohmann::json& value);
  /// Sets a leaf by dotted key and marks it as user-set.
  void set(const std::string& key, const nlohmann::json& value);

  bool user_set(const std::string& key) const { return touched_.count(key) > 0; }
  const nlohmann::json& at(const std::string& key) const;
  const nlohmann::json& resolved() const { return value_; }

 private:
  nlohmann::json& leaf(const std::string& key);
  void assign(nlohmann::json& slot, const nlohmann::json& value, const std::string& key);
  void merge_into(nlohmann::json& base, const nlohmann::json& overlay, const std::string& prefix);

  nlohmann::json value_;
  std::set<std::string> touched_;
};

}  // namespace drivex::cli
