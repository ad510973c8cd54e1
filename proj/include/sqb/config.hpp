#pragma once

// Project configuration: one JSON document, every key overridable with
// --set path=value. Errors name the file line of the offending key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sqb/optimize.hpp"
#include "sqb/stage2.hpp"
#include "sqb/synth.hpp"

namespace sqb {

struct ProviderConfig {
  std::string mode = "oracle";  // "oracle" or "files"
  std::filesystem::path dir;    // attention map directory for "files"
  double blur_sigma = 3.0;
};

struct ProjectConfig {
  std::filesystem::path dataset;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  int threads = 0;  // <= 0: library default
  ProviderConfig provider;
  SynthRecipe synth;
  Stage1Config stage1;
  Stage2Config stage2;

  void validate() const;
};

/// Line numbers of every object key, addressed by dotted path ("stage1.gamma").
std::map<std::string, int> key_lines(const std::string& text);

/// Parses `text` (named `source` in messages) and applies `overrides`
/// ("path=value", value parsed as JSON, else taken as a string). Unknown keys,
/// wrong types and failed validation raise ConfigError with the line of the key.
ProjectConfig parse_config(const std::string& text, const std::string& source,
                           const std::vector<std::string>& overrides = {});
ProjectConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

nlohmann::ordered_json config_to_json(const ProjectConfig& cfg);

}  // namespace sqb
