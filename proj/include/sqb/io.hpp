#pragma once

// Scene, mesh and checkpoint files.

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "sqb/optimize.hpp"
#include "sqb/stage2.hpp"

namespace sqb {

nlohmann::ordered_json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

/// Deformed mesh of each primitive as <dir>/prim_<id>.obj; returns the files written.
std::vector<std::filesystem::path> write_primitive_objs(const std::filesystem::path& dir, const Scene& scene,
                                                        const IcosphereTemplate& tpl);

/// Everything needed to resume either stage bit-exactly.
struct Checkpoint {
  static constexpr int kVersion = 1;
  std::string stage = "stage1";  // "stage1" or "stage2"
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  int subdivision = 2;
  Stage1State stage1;
  std::optional<Stage2State> stage2;
};

/// "SQBCKPT1", u64 manifest size, JSON manifest, then little-endian blobs
/// located through the manifest's blob table.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws ConfigError on a malformed or unsupported file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& s);

}  // namespace sqb
