#include "config_file.hpp"

#include <algorithm>
#include <iterator>

#include <fmt/format.h>
#include <toml.hpp>

namespace gma::cli {

namespace {

std::string option_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) return fmt::format("{}", v.get<double>());
  throw CLI::ConfigError(fmt::format("unsupported config value {}", v.dump()));
}

void flatten_json(const nlohmann::json& obj, std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
  for (const auto& [key, value] : obj.items()) {
    if (value.is_object()) {
      parents.push_back(key);
      flatten_json(value, parents, out);
      parents.pop_back();
      continue;
    }
    CLI::ConfigItem item;
    item.parents = parents;
    item.name = option_name(key);
    if (value.is_array()) {
      for (const auto& e : value) item.inputs.push_back(scalar_text(e));
    } else if (!value.is_null()) {
      item.inputs.push_back(scalar_text(value));
    } else {
      continue;
    }
    out.push_back(std::move(item));
  }
}

std::string toml_scalar(const toml::node& node) {
  if (auto s = node.value<std::string>(); s && node.is_string()) return *s;
  if (node.is_boolean()) return *node.value<bool>() ? "true" : "false";
  if (node.is_integer()) return std::to_string(*node.value<long long>());
  if (node.is_floating_point()) return fmt::format("{}", *node.value<double>());
  throw CLI::ConfigError("unsupported TOML value type");
}

void flatten_toml(const toml::table& table, std::vector<std::string>& parents,
                  std::vector<CLI::ConfigItem>& out) {
  for (const auto& [key, node] : table) {
    const std::string name(key.str());
    if (const auto* sub = node.as_table()) {
      parents.push_back(name);
      flatten_toml(*sub, parents, out);
      parents.pop_back();
      continue;
    }
    CLI::ConfigItem item;
    item.parents = parents;
    item.name = option_name(name);
    if (const auto* arr = node.as_array()) {
      for (const auto& e : *arr) item.inputs.push_back(toml_scalar(e));
    } else {
      item.inputs.push_back(toml_scalar(node));
    }
    out.push_back(std::move(item));
  }
}

}  // namespace

std::vector<CLI::ConfigItem> items_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw CLI::ConfigError("config must be a JSON object");
  const auto& root = doc.contains("manifest_version") ? doc.at("config") : doc;
  std::vector<std::string> parents;
  std::vector<CLI::ConfigItem> out;
  flatten_json(root, parents, out);
  return out;
}

std::vector<CLI::ConfigItem> items_from_toml(const std::string& text) {
  try {
    const auto table = toml::parse(text);
    std::vector<std::string> parents;
    std::vector<CLI::ConfigItem> out;
    flatten_toml(table, parents, out);
    return out;
  } catch (const toml::parse_error& e) {
    throw CLI::ConfigError(fmt::format("TOML: {}", e.description()));
  }
}

std::string FileConfig::to_config(const CLI::App* app, bool default_also, bool write_description,
                                  std::string prefix) const {
  return CLI::ConfigTOML().to_config(app, default_also, write_description, std::move(prefix));
}

std::vector<CLI::ConfigItem> FileConfig::from_config(std::istream& input) const {
  const std::string text{std::istreambuf_iterator<char>(input), std::istreambuf_iterator<char>()};
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    const auto doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw CLI::ConfigError("config is not valid JSON");
    return items_from_json(doc);
  }
  return items_from_toml(text);
}

}  // namespace gma::cli
