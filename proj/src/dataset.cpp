#include "layoutgen/dataset.hpp"

namespace layoutgen {

using nlohmann::json;
using namespace jsonu;

namespace {

std::string idx(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

json point_json(Point2 p) { return {{"x", p.x}, {"y", p.y}}; }

Point2 point_from(const json& j, const std::string& path) {
  return {number_at(j, "x", path), number_at(j, "y", path)};
}

RoomType room_type_at(const json& j, const std::string& path) {
  const std::string name = string_at(j, "room_type", path);
  try {
    return room_type_from_string(name);
  } catch (const ArgumentError& e) {
    throw ParseError(path + ".room_type", e.what());
  }
}

std::size_t count_at(const json& j, std::string_view key, const std::string& path) {
  const long long v = integer_at(j, key, path);
  if (v < 0) throw ParseError(path + "." + std::string(key), "must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

json to_json(const RoomShell& shell) {
  json boundary = json::array();
  for (const auto& p : shell.boundary) boundary.push_back(point_json(p));
  json openings = json::array();
  for (const auto& o : shell.openings)
    openings.push_back({{"kind", o.kind == OpeningKind::door ? "door" : "window"},
                        {"wall_index", o.wall_index},
                        {"offset", o.offset},
                        {"width", o.width}});
  return {{"boundary", boundary}, {"openings", openings}};
}

RoomShell shell_from_json(const json& j, const std::string& path) {
  RoomShell shell;
  const json& boundary = array_at(j, "boundary", path);
  for (std::size_t i = 0; i < boundary.size(); ++i)
    shell.boundary.push_back(point_from(boundary[i], idx(path + ".boundary", i)));
  const json& openings = array_at(j, "openings", path);
  for (std::size_t i = 0; i < openings.size(); ++i) {
    const std::string p = idx(path + ".openings", i);
    Opening o;
    const std::string kind = string_at(openings[i], "kind", p);
    if (kind == "door") o.kind = OpeningKind::door;
    else if (kind == "window") o.kind = OpeningKind::window;
    else throw ParseError(p + ".kind", "expected 'door' or 'window'");
    o.wall_index = count_at(openings[i], "wall_index", p);
    o.offset = number_at(openings[i], "offset", p);
    o.width = number_at(openings[i], "width", p);
    shell.openings.push_back(o);
  }
  return shell;
}

json to_json(const ConditionCode& cond) {
  return {{"room_type", to_string(cond.room_type)}, {"label_index", cond.label_index}};
}

ConditionCode condition_from_json(const json& j, const std::string& path) {
  return {room_type_at(j, path), count_at(j, "label_index", path)};
}

json to_json(const ConditionSchema& schema) {
  return {{"room_type", to_string(schema.room_type)}, {"labels", schema.labels}};
}

ConditionSchema schema_from_json(const json& j, const std::string& path) {
  ConditionSchema schema{room_type_at(j, path), {}};
  const json& labels = array_at(j, "labels", path);
  for (std::size_t i = 0; i < labels.size(); ++i)
    schema.labels.push_back(string(labels[i], idx(path + ".labels", i)));
  if (schema.labels.empty()) throw ParseError(path + ".labels", "must not be empty");
  return schema;
}

json to_json(const CategoryRegistry& registry) {
  json out = json::array();
  for (const auto& e : registry.entries) out.push_back({{"code", e.code}, {"name", e.name}});
  return out;
}

CategoryRegistry registry_from_json(const json& j, const std::string& path) {
  CategoryRegistry reg;
  array(j, path);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = idx(path, i);
    reg.entries.push_back(
        {static_cast<CategoryCode>(integer_at(j[i], "code", p)), string_at(j[i], "name", p)});
  }
  return reg;
}

json to_json(const Scene& scene) {
  json items = json::array();
  for (const auto& it : scene.items)
    items.push_back({{"category", it.category},
                     {"position", point_json(it.position)},
                     {"size", {{"width", it.size.width}, {"depth", it.size.depth}}},
                     {"direction", static_cast<int>(it.direction)}});
  return {{"room_type", to_string(scene.room_type)},
          {"shell", to_json(scene.shell)},
          {"items", items},
          {"condition", to_json(scene.condition)}};
}

Scene scene_from_json(const json& j, const std::string& path) {
  Scene scene;
  scene.room_type = room_type_at(j, path);
  scene.shell = shell_from_json(field(j, "shell", path), path + ".shell");
  const json& items = array_at(j, "items", path);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string p = idx(path + ".items", i);
    FurnitureItem item;
    item.category = static_cast<CategoryCode>(integer_at(items[i], "category", p));
    item.position = point_from(field(items[i], "position", p), p + ".position");
    const json& size = field(items[i], "size", p);
    item.size = {number_at(size, "width", p + ".size"), number_at(size, "depth", p + ".size")};
    try {
      item.direction = direction_from_degrees(static_cast<int>(integer_at(items[i], "direction", p)));
    } catch (const ArgumentError& e) {
      throw ParseError(p + ".direction", e.what());
    }
    scene.items.push_back(item);
  }
  scene.condition = condition_from_json(field(j, "condition", path), path + ".condition");
  return scene;
}

json dataset_to_json(const Dataset& dataset) {
  json scenes = json::array();
  for (const auto& s : dataset.scenes) scenes.push_back(to_json(s));
  return {{"format_version", kDatasetFormatVersion},
          {"room_type", to_string(dataset.room_type)},
          {"condition_schema", to_json(dataset.schema)},
          {"category_registry", to_json(dataset.registry)},
          {"scenes", scenes}};
}

Dataset dataset_from_json(const json& j) {
  require_version(j, kDatasetFormatVersion, "dataset");
  Dataset d;
  d.room_type = room_type_at(j, "dataset");
  d.schema = schema_from_json(field(j, "condition_schema", "dataset"), "condition_schema");
  d.registry = registry_from_json(field(j, "category_registry", "dataset"), "category_registry");
  const json& scenes = array_at(j, "scenes", "dataset");
  for (std::size_t i = 0; i < scenes.size(); ++i)
    d.scenes.push_back(scene_from_json(scenes[i], idx("scenes", i)));
  return d;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  write_file(path, dataset_to_json(dataset));
}

Dataset load_dataset(const std::string& path) { return dataset_from_json(read_file(path)); }

}  // namespace layoutgen
