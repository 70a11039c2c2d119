#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutgen/json_util.hpp"
#include "layoutgen/scene.hpp"

namespace layoutgen {

inline constexpr int kDatasetFormatVersion = 1;

/// A versioned collection of scenes of one room type.
struct Dataset {
  RoomType room_type = RoomType::tatami;
  ConditionSchema schema;
  CategoryRegistry registry;
  std::vector<Scene> scenes;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

void save_dataset(const Dataset& dataset, const std::string& path);
/// Throws ParseError (with line or field path) or VersionError.
Dataset load_dataset(const std::string& path);

nlohmann::json dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j, const std::string& path = "scene");
nlohmann::json to_json(const RoomShell& shell);
RoomShell shell_from_json(const nlohmann::json& j, const std::string& path = "shell");
nlohmann::json to_json(const ConditionCode& cond);
ConditionCode condition_from_json(const nlohmann::json& j, const std::string& path = "condition");
nlohmann::json to_json(const ConditionSchema& schema);
ConditionSchema schema_from_json(const nlohmann::json& j, const std::string& path = "schema");
nlohmann::json to_json(const CategoryRegistry& registry);
CategoryRegistry registry_from_json(const nlohmann::json& j,
                                    const std::string& path = "category_registry");

// Synthetic dataset generation.

/// Deterministic scene for (room type, condition, seed); always passes validate_scene.
Scene synth_scene(RoomType room_type, const ConditionCode& cond, std::uint64_t seed);

/// `per_label` scenes for every label of the room type's default schema.
Dataset synth_dataset(RoomType room_type, std::size_t per_label, std::uint64_t seed);

/// Categories that every scene of the given condition contains.
std::vector<CategoryCode> required_template_categories(RoomType room_type, std::size_t label_index);

}  // namespace layoutgen
