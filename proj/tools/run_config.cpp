#include "run_config.hpp"

#include <fstream>
#include <sstream>

namespace drivex::cli {

using nlohmann::json;

namespace {

std::vector<std::string> split_key(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream in(key);
  std::string part;
  while (std::getline(in, part, '.')) {
    if (part.empty()) throw ConfigError("malformed config key '" + key + "'");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError("empty config key");
  return parts;
}

const char* kind(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  return "null";
}

}  // namespace

void RunConfig::assign(json& slot, const json& value, const std::string& key) {
  if (slot.is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
  const bool ok = (slot.is_boolean() && value.is_boolean()) || (slot.is_string() && value.is_string()) ||
                  (slot.is_number_integer() && value.is_number_integer()) ||
                  (slot.is_number_float() && value.is_number()) || (slot.is_array() && value.is_array());
  if (!ok) {
    throw ConfigError("config key '" + key + "' expects " + kind(slot) + ", got " + kind(value));
  }
  if (slot.is_number_unsigned() && value.is_number_integer() && value.get<long long>() < 0) {
    throw ConfigError("config key '" + key + "' must be non-negative");
  }
  if (slot.is_number_float()) {
    slot = value.get<double>();
  } else if (slot.is_number_unsigned()) {
    slot = value.get<std::uint64_t>();
  } else {
    slot = value;
  }
  touched_.insert(key);
}

void RunConfig::merge_into(json& base, const json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [k, v] : overlay.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[k];
    if (slot.is_object()) {
      merge_into(slot, v, key);
    } else {
      assign(slot, v, key);
    }
  }
}

void RunConfig::merge(const json& overlay) { merge_into(value_, overlay, ""); }

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  merge(j);
}

json& RunConfig::leaf(const std::string& key) {
  json* node = &value_;
  for (const auto& part : split_key(key)) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  return *node;
}

const json& RunConfig::at(const std::string& key) const { return const_cast<RunConfig*>(this)->leaf(key); }

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json& slot = leaf(key);
  json value;
  if (slot.is_string()) {
    value = text;
  } else {
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
  }
  assign(slot, value, key);
}

void RunConfig::set(const std::string& key, const json& value) { assign(leaf(key), value, key); }

void RunConfig::set_default(const std::string& key, const json& value) {
  json& slot = leaf(key);
  const bool was = touched_.count(key) > 0;
  assign(slot, value, key);
  if (!was) touched_.erase(key);
}

}  // namespace drivex::cli
