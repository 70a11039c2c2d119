#include <algorithm>
#include <optional>
#include <span>

#include "layoutgen/dataset.hpp"
#include "layoutgen/errors.hpp"
#include "layoutgen/rng.hpp"

namespace layoutgen {

namespace {

constexpr double kJitter = 0.2;        // meters, uniform
constexpr double kSizeJitter = 0.05;   // relative, uniform
constexpr double kDropout = 0.1;       // optional items only
constexpr double kWallMargin = 0.01;

struct TemplateItem {
  const char* category;
  double width, depth;
  double x, y;
  int direction;
  bool optional = false;
};

using Template = std::vector<TemplateItem>;

// Nominal layouts; each is valid without jitter. Items face away from the
// wall they stand against (0: bottom, 90: right, 180: top, 270: left).
const std::vector<Template>& templates(RoomType type) {
  static const std::vector<Template> tatami = {
      // sleep
      {{"tatami-bed", 2.0, 2.0, 1.05, 1.8, 270},
       {"wardrobe", 1.2, 0.6, 3.25, 1.9, 90},
       {"nightstand", 0.45, 0.45, 2.4, 2.7, 180, true}},
      // tea
      {{"tatami", 2.0, 1.8, 0.95, 1.9, 270},
       {"tea-table", 0.8, 0.8, 2.5, 1.9, 0},
       {"cushion", 0.5, 0.5, 2.2, 1.1, 0},
       {"cushion", 0.5, 0.5, 3.25, 1.9, 90, true}},
      // storage
      {{"tatami", 2.0, 1.8, 0.95, 1.9, 270},
       {"wardrobe", 1.2, 0.6, 3.25, 1.9, 90},
       {"cabinet", 0.8, 0.45, 2.4, 2.75, 180},
       {"bookshelf", 0.9, 0.35, 1.0, 0.2, 0, true}},
      // work
      {{"tatami", 2.0, 1.8, 0.95, 1.9, 270},
       {"work-desk", 1.2, 0.6, 3.25, 1.9, 90},
       {"cabinet", 0.8, 0.45, 2.4, 2.75, 180},
       {"chair", 0.5, 0.5, 2.6, 1.9, 90, true}},
  };
  static const std::vector<Template> balcony = {
      // leisure
      {{"leisure-chair", 0.7, 0.7, 1.8, 0.8, 0},
       {"leisure-chair", 0.7, 0.7, 3.2, 0.8, 0},
       {"side-table", 0.5, 0.5, 2.5, 0.8, 0},
       {"plant", 0.4, 0.4, 0.3, 0.3, 0, true}},
      // wash
      {{"washing-machine", 0.6, 0.6, 0.35, 0.8, 270},
       {"laundry-sink", 0.6, 0.5, 2.0, 1.3, 180},
       {"drying-rack", 1.2, 0.5, 3.0, 0.3, 0},
       {"shelf", 0.8, 0.35, 3.8, 1.0, 90, true}},
      // storage
      {{"storage-cabinet", 1.0, 0.5, 2.2, 1.3, 180},
       {"storage-cabinet", 1.0, 0.5, 3.4, 1.3, 180},
       {"shelf", 0.8, 0.35, 1.0, 0.2, 0},
       {"plant", 0.4, 0.4, 0.3, 0.8, 0, true}},
  };
  static const std::vector<Template> kitchen = {
      // classical
      {{"counter", 1.2, 0.6, 1.6, 2.08, 180},
       {"stove", 0.6, 0.6, 0.6, 2.08, 180},
       {"sink", 0.8, 0.6, 2.68, 1.3, 90},
       {"tall-cabinet", 0.6, 0.6, 2.68, 0.4, 90},
       {"fridge", 0.7, 0.7, 0.38, 1.2, 270, true}},
      // multi
      {{"counter", 1.2, 0.6, 1.6, 2.08, 180},
       {"stove", 0.6, 0.6, 0.6, 2.08, 180},
       {"sink", 0.8, 0.6, 2.68, 1.3, 90},
       {"dining-table", 1.0, 0.7, 1.4, 0.9, 0},
       {"microwave-cabinet", 0.6, 0.4, 2.78, 0.4, 90, true}},
  };
  switch (type) {
    case RoomType::tatami: return tatami;
    case RoomType::balcony: return balcony;
    case RoomType::kitchen: return kitchen;
  }
  throw ArgumentError("unknown room type");
}

const Template& template_for(RoomType type, std::size_t label) {
  const auto& all = templates(type);
  if (label >= all.size())
    throw SchemaMismatchError("label index " + std::to_string(label) + " out of range");
  return all[label];
}

FurnitureItem nominal_item(const TemplateItem& t, const CategoryRegistry& reg) {
  return {reg.code_of(t.category), {t.x, t.y}, {t.width, t.depth},
          direction_from_degrees(t.direction)};
}

bool fits(const FurnitureItem& item, const RoomShell& shell, std::span<const FurnitureItem> placed) {
  if (!geom::contains(shell.boundary, item.footprint())) return false;
  return std::none_of(placed.begin(), placed.end(), [&](const FurnitureItem& other) {
    return geom::overlap_area(item.footprint(), other.footprint()) > 0.0;
  });
}

// Pull the footprint back inside the room's bounding box.
void clamp_into(FurnitureItem& item, const RoomShell& shell) {
  const Rect box = geom::bounding_box(shell.boundary);
  const Rect fp = item.footprint();
  const double hx = (fp.max_x - fp.min_x) / 2.0, hy = (fp.max_y - fp.min_y) / 2.0;
  item.position.x = std::clamp(item.position.x, box.min_x + hx + kWallMargin,
                               std::max(box.min_x + hx + kWallMargin, box.max_x - hx - kWallMargin));
  item.position.y = std::clamp(item.position.y, box.min_y + hy + kWallMargin,
                               std::max(box.min_y + hy + kWallMargin, box.max_y - hy - kWallMargin));
}

std::optional<std::vector<FurnitureItem>> try_layout(const Template& tpl, const RoomShell& shell,
                                                     const CategoryRegistry& reg, Rng& rng) {
  std::vector<FurnitureItem> placed;
  for (const auto& t : tpl) {
    if (t.optional && rng.uniform() < kDropout) continue;
    bool done = false;
    for (int attempt = 0; attempt < 30 && !done; ++attempt) {
      FurnitureItem item = nominal_item(t, reg);
      item.size.width *= 1.0 + rng.uniform(-kSizeJitter, kSizeJitter);
      item.size.depth *= 1.0 + rng.uniform(-kSizeJitter, kSizeJitter);
      item.position.x += rng.uniform(-kJitter, kJitter);
      item.position.y += rng.uniform(-kJitter, kJitter);
      clamp_into(item, shell);
      if (fits(item, shell, placed)) {
        placed.push_back(item);
        done = true;
      }
    }
    if (!done) {
      const FurnitureItem item = nominal_item(t, reg);
      if (fits(item, shell, placed)) placed.push_back(item);
      else if (!t.optional) return std::nullopt;
    }
  }
  return placed;
}

}  // namespace

std::vector<CategoryCode> required_template_categories(RoomType room_type, std::size_t label_index) {
  const auto reg = default_registry(room_type);
  std::vector<CategoryCode> out;
  for (const auto& t : template_for(room_type, label_index))
    if (!t.optional) out.push_back(reg.code_of(t.category));
  std::sort(out.begin(), out.end());
  return out;
}

Scene synth_scene(RoomType room_type, const ConditionCode& cond, std::uint64_t seed) {
  if (cond.room_type != room_type)
    throw SchemaMismatchError("condition belongs to room type " +
                              std::string(to_string(cond.room_type)));
  const Template& tpl = template_for(room_type, cond.label_index);
  const CategoryRegistry reg = default_registry(room_type);

  Scene scene{room_type, default_shell(room_type), {}, cond};
  Rng rng(seed);
  for (int restart = 0; restart < 20; ++restart) {
    if (auto items = try_layout(tpl, scene.shell, reg, rng)) {
      scene.items = std::move(*items);
      return scene;
    }
  }
  for (const auto& t : tpl) scene.items.push_back(nominal_item(t, reg));
  return scene;
}

Dataset synth_dataset(RoomType room_type, std::size_t per_label, std::uint64_t seed) {
  Dataset d{room_type, default_schema(room_type), default_registry(room_type), {}};
  Rng rng(seed);
  for (std::size_t label = 0; label < d.schema.labels.size(); ++label)
    for (std::size_t i = 0; i < per_label; ++i)
      d.scenes.push_back(synth_scene(room_type, {room_type, label}, rng.next_seed()));
  return d;
}

}  // namespace layoutgen
