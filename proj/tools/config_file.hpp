#pragma once

#include <istream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace gma::cli {

/// Reads TOML or JSON (detected by a leading '{') into CLI11 items. Tables
/// map to subcommands, keys to long option names with '_' read as '-'.
/// A run manifest is accepted too: its "config" object is used.
class FileConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool write_description,
                        std::string prefix) const override;
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override;
};

std::vector<CLI::ConfigItem> items_from_json(const nlohmann::json& doc);
std::vector<CLI::ConfigItem> items_from_toml(const std::string& text);

}  // namespace gma::cli
