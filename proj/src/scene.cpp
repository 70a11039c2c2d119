#include "layoutgen/scene.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "layoutgen/errors.hpp"

namespace layoutgen {

std::string_view to_string(RoomType type) {
  switch (type) {
    case RoomType::tatami: return "tatami";
    case RoomType::balcony: return "balcony";
    case RoomType::kitchen: return "kitchen";
  }
  return "unknown";
}

RoomType room_type_from_string(std::string_view name) {
  for (RoomType t : kAllRoomTypes)
    if (to_string(t) == name) return t;
  throw ArgumentError("unknown room type '" + std::string(name) + "'");
}

Direction direction_from_degrees(int degrees) {
  if (degrees != 0 && degrees != 90 && degrees != 180 && degrees != 270)
    throw ArgumentError("direction must be 0, 90, 180 or 270 degrees, got " +
                        std::to_string(degrees));
  return static_cast<Direction>(degrees);
}

double RoomShell::wall_length(std::size_t i) const {
  return geom::distance(wall_start(i), wall_end(i));
}

Point2 RoomShell::wall_midpoint(std::size_t i) const {
  const Point2 a = wall_start(i), b = wall_end(i);
  return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0};
}

Point2 RoomShell::opening_center(const Opening& o) const {
  const Point2 a = wall_start(o.wall_index), b = wall_end(o.wall_index);
  const double len = geom::distance(a, b);
  const double t = (o.offset + o.width / 2.0) / len;
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

double RoomShell::diagonal() const {
  const Rect box = geom::bounding_box(boundary);
  return std::hypot(box.max_x - box.min_x, box.max_y - box.min_y);
}

Rect FurnitureItem::footprint() const {
  const bool rotated = direction == Direction::d90 || direction == Direction::d270;
  const double hx = (rotated ? size.depth : size.width) / 2.0;
  const double hy = (rotated ? size.width : size.depth) / 2.0;
  return {position.x - hx, position.y - hy, position.x + hx, position.y + hy};
}

std::size_t ConditionSchema::index_of(std::string_view label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end())
    throw SchemaMismatchError("label '" + std::string(label) + "' is not defined for room type " +
                              std::string(to_string(room_type)));
  return static_cast<std::size_t>(it - labels.begin());
}

bool CategoryRegistry::contains(CategoryCode code) const {
  return std::any_of(entries.begin(), entries.end(),
                     [code](const CategoryEntry& e) { return e.code == code; });
}

std::size_t CategoryRegistry::index_of(CategoryCode code) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].code == code) return i;
  throw ArgumentError("category code " + std::to_string(code) + " not in registry");
}

const std::string& CategoryRegistry::name_of(CategoryCode code) const {
  return entries[index_of(code)].name;
}

CategoryCode CategoryRegistry::code_of(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return e.code;
  throw ArgumentError("category '" + std::string(name) + "' not in registry");
}

ConditionSchema default_schema(RoomType type) {
  switch (type) {
    case RoomType::tatami: return {type, {"sleep", "tea", "storage", "work"}};
    case RoomType::balcony: return {type, {"leisure", "wash", "storage"}};
    case RoomType::kitchen: return {type, {"classical", "multi"}};
  }
  throw ArgumentError("unknown room type");
}

CategoryRegistry default_registry(RoomType type) {
  CategoryRegistry reg{{{kWallCode, "wall"}, {kDoorCode, "door"}, {kWindowCode, "window"}}};
  std::vector<std::string> names;
  switch (type) {
    case RoomType::tatami:
      names = {"tatami",    "tatami-bed", "work-desk", "cabinet", "wardrobe",
               "tea-table", "bookshelf",  "chair",     "nightstand", "cushion"};
      break;
    case RoomType::balcony:
      names = {"washing-machine", "drying-rack", "storage-cabinet", "leisure-chair",
               "side-table",      "plant",       "laundry-sink",    "shelf"};
      break;
    case RoomType::kitchen:
      names = {"counter",      "stove",  "sink",           "fridge",
               "dining-table", "island", "microwave-cabinet", "tall-cabinet"};
      break;
  }
  CategoryCode code = kFirstObjectCode;
  for (auto& n : names) reg.entries.push_back({code++, std::move(n)});
  return reg;
}

namespace {

RoomShell rectangle(double w, double d, std::vector<Opening> openings) {
  return {{{0.0, 0.0}, {w, 0.0}, {w, d}, {0.0, d}}, std::move(openings)};
}

}  // namespace

RoomShell default_shell(RoomType type) {
  using K = OpeningKind;
  switch (type) {
    case RoomType::tatami:
      return rectangle(3.6, 3.0, {{K::door, 0, 2.5, 0.9}, {K::window, 2, 0.8, 1.4}});
    case RoomType::balcony:
      return rectangle(4.0, 1.6, {{K::window, 0, 0.5, 3.0}, {K::door, 2, 2.8, 0.8}});
    case RoomType::kitchen:
      return rectangle(3.0, 2.4, {{K::door, 0, 0.2, 0.8}, {K::window, 2, 0.8, 1.2}});
  }
  throw ArgumentError("unknown room type");
}

std::vector<double> encode_condition(const ConditionCode& cond, const ConditionSchema& schema) {
  if (cond.room_type != schema.room_type)
    throw SchemaMismatchError("condition room type " + std::string(to_string(cond.room_type)) +
                              " does not match schema room type " +
                              std::string(to_string(schema.room_type)));
  if (cond.label_index >= schema.labels.size())
    throw SchemaMismatchError("label index " + std::to_string(cond.label_index) +
                              " out of range for " + std::to_string(schema.labels.size()) +
                              " labels");
  std::vector<double> v(schema.labels.size(), 0.0);
  v[cond.label_index] = 1.0;
  return v;
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::outside: return "outside";
    case ViolationKind::overlap: return "overlap";
    case ViolationKind::opening_off_wall: return "opening_off_wall";
    case ViolationKind::empty: return "empty";
    case ViolationKind::invalid_shell: return "invalid_shell";
    case ViolationKind::condition: return "condition";
  }
  return "unknown";
}

std::size_t ValidationReport::count(ViolationKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      violations.begin(), violations.end(), [kind](const Violation& v) { return v.kind == kind; }));
}

ValidationReport validate_scene(const Scene& scene) {
  ValidationReport report;
  auto add = [&](ViolationKind k, std::string detail) {
    report.violations.push_back({k, std::move(detail)});
  };

  const auto& poly = scene.shell.boundary;
  const bool shell_ok = poly.size() >= 3 && geom::is_simple(poly) && geom::signed_area(poly) > 0.0;
  if (!shell_ok)
    add(ViolationKind::invalid_shell, "boundary is not a counterclockwise simple polygon");

  if (scene.condition.room_type != scene.room_type)
    add(ViolationKind::condition, "condition room type differs from scene room type");

  for (std::size_t i = 0; i < scene.shell.openings.size(); ++i) {
    const Opening& o = scene.shell.openings[i];
    const bool on_wall = shell_ok && o.wall_index < poly.size() && o.offset >= 0.0 &&
                         o.width > 0.0 &&
                         o.offset + o.width <= scene.shell.wall_length(o.wall_index) + 1e-9;
    if (!on_wall) add(ViolationKind::opening_off_wall, "opening " + std::to_string(i));
  }

  if (scene.items.empty()) add(ViolationKind::empty, "scene has no furniture items");

  for (std::size_t i = 0; i < scene.items.size(); ++i) {
    const auto& item = scene.items[i];
    const bool bad_size = !(item.size.width > 0.0) || !(item.size.depth > 0.0);
    if (bad_size || (shell_ok && !geom::contains(poly, item.footprint())))
      add(ViolationKind::outside, "item " + std::to_string(i));
  }
  for (std::size_t i = 0; i < scene.items.size(); ++i)
    for (std::size_t j = i + 1; j < scene.items.size(); ++j) {
      const double a = geom::overlap_area(scene.items[i].footprint(), scene.items[j].footprint());
      if (a > kOverlapTolerance)
        add(ViolationKind::overlap, "items " + std::to_string(i) + " and " + std::to_string(j));
    }
  return report;
}

namespace geom {

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0.0) return distance(p, a);
  const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  return distance(p, {a.x + t * dx, a.y + t * dy});
}

double signed_area(const std::vector<Point2>& polygon) {
  double s = 0.0;
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const Point2 a = polygon[i], b = polygon[(i + 1) % polygon.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return s / 2.0;
}

namespace {

double cross(Point2 o, Point2 a, Point2 b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(Point2 p, Point2 a, Point2 b) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

bool segments_intersect(Point2 p1, Point2 p2, Point2 q1, Point2 q2) {
  const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

// Liang-Barsky: does the segment pass through the open rectangle?
bool segment_crosses_interior(Point2 a, Point2 b, const Rect& r) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - r.min_x, r.max_x - a.x, a.y - r.min_y, r.max_y - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] <= 0.0) return false;
    } else {
      const double t = q[i] / p[i];
      if (p[i] < 0.0) t0 = std::max(t0, t);
      else t1 = std::min(t1, t);
      if (t0 >= t1) return false;
    }
  }
  return true;
}

}  // namespace

bool is_simple(const std::vector<Point2>& polygon) {
  const std::size_t n = polygon.size();
  if (n < 3 || std::abs(signed_area(polygon)) < 1e-12) return false;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(polygon[i], polygon[(i + 1) % n], polygon[j], polygon[(j + 1) % n]))
        return false;
    }
  return true;
}

bool contains(const std::vector<Point2>& polygon, Point2 p, double tol) {
  const std::size_t n = polygon.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2 a = polygon[i], b = polygon[j];
    if (point_segment_distance(p, a, b) <= tol) return true;
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x)
      inside = !inside;
  }
  return inside;
}

bool contains(const std::vector<Point2>& polygon, const Rect& r, double tol) {
  const Point2 corners[4] = {{r.min_x, r.min_y}, {r.max_x, r.min_y}, {r.max_x, r.max_y},
                             {r.min_x, r.max_y}};
  for (const auto& c : corners)
    if (!contains(polygon, c, tol)) return false;
  const Rect shrunk{r.min_x + tol, r.min_y + tol, r.max_x - tol, r.max_y - tol};
  for (std::size_t i = 0; i < polygon.size(); ++i)
    if (segment_crosses_interior(polygon[i], polygon[(i + 1) % polygon.size()], shrunk))
      return false;
  return true;
}

double overlap_area(const Rect& a, const Rect& b) {
  const double w = std::min(a.max_x, b.max_x) - std::max(a.min_x, b.min_x);
  const double h = std::min(a.max_y, b.max_y) - std::max(a.min_y, b.min_y);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

Rect bounding_box(const std::vector<Point2>& polygon) {
  Rect r{1e300, 1e300, -1e300, -1e300};
  for (const auto& p : polygon) {
    r.min_x = std::min(r.min_x, p.x);
    r.min_y = std::min(r.min_y, p.y);
    r.max_x = std::max(r.max_x, p.x);
    r.max_y = std::max(r.max_y, p.y);
  }
  return r;
}

}  // namespace geom

}  // namespace layoutgen
