#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace layoutgen {

enum class RoomType { tatami, balcony, kitchen };

std::string_view to_string(RoomType type);
/// Throws ArgumentError on an unknown name.
RoomType room_type_from_string(std::string_view name);
inline constexpr std::array<RoomType, 3> kAllRoomTypes = {RoomType::tatami, RoomType::balcony,
                                                          RoomType::kitchen};

/// Category codes 1..3 are reserved for shell elements in every registry.
using CategoryCode = int;
inline constexpr CategoryCode kWallCode = 1;
inline constexpr CategoryCode kDoorCode = 2;
inline constexpr CategoryCode kWindowCode = 3;
inline constexpr CategoryCode kFirstObjectCode = 4;

inline bool is_shell_code(CategoryCode c) { return c >= kWallCode && c <= kWindowCode; }
inline bool is_opening_code(CategoryCode c) { return c == kDoorCode || c == kWindowCode; }

struct Point2 {
  double x = 0.0;  // meters
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

enum class OpeningKind { door, window };

struct Opening {
  OpeningKind kind = OpeningKind::door;
  std::size_t wall_index = 0;
  double offset = 0.0;  // meters along the wall segment
  double width = 0.0;
  friend bool operator==(const Opening&, const Opening&) = default;
};

/// Counterclockwise simple polygon; wall i runs from boundary[i] to boundary[i+1].
struct RoomShell {
  std::vector<Point2> boundary;
  std::vector<Opening> openings;

  std::size_t wall_count() const { return boundary.size(); }
  Point2 wall_start(std::size_t i) const { return boundary[i]; }
  Point2 wall_end(std::size_t i) const { return boundary[(i + 1) % boundary.size()]; }
  double wall_length(std::size_t i) const;
  Point2 wall_midpoint(std::size_t i) const;
  Point2 opening_center(const Opening& o) const;
  double diagonal() const;  // bounding-box diagonal

  friend bool operator==(const RoomShell&, const RoomShell&) = default;
};

struct Size2 {
  double width = 0.0;
  double depth = 0.0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

/// Rotation in degrees; 0 means the item's front faces +y.
enum class Direction : int { d0 = 0, d90 = 90, d180 = 180, d270 = 270 };
inline int direction_index(Direction d) { return static_cast<int>(d) / 90; }
inline Direction direction_from_index(int i) { return static_cast<Direction>((i % 4) * 90); }
/// Throws ArgumentError unless degrees is one of 0/90/180/270.
Direction direction_from_degrees(int degrees);

struct Rect {
  double min_x, min_y, max_x, max_y;
  double area() const { return (max_x - min_x) * (max_y - min_y); }
};

struct FurnitureItem {
  CategoryCode category = kFirstObjectCode;
  Point2 position;
  Size2 size;
  Direction direction = Direction::d0;

  /// Axis-aligned top-view footprint (width and depth swap at 90/270).
  Rect footprint() const;
  friend bool operator==(const FurnitureItem&, const FurnitureItem&) = default;
};

struct ConditionCode {
  RoomType room_type = RoomType::tatami;
  std::size_t label_index = 0;
  friend bool operator==(const ConditionCode&, const ConditionCode&) = default;
};

struct ConditionSchema {
  RoomType room_type = RoomType::tatami;
  std::vector<std::string> labels;

  /// Throws SchemaMismatchError for an unknown label.
  std::size_t index_of(std::string_view label) const;
  friend bool operator==(const ConditionSchema&, const ConditionSchema&) = default;
};

struct CategoryEntry {
  CategoryCode code;
  std::string name;
  friend bool operator==(const CategoryEntry&, const CategoryEntry&) = default;
};

/// Ordered registry of category codes; position in the list is the class index
/// used by the networks.
struct CategoryRegistry {
  std::vector<CategoryEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool contains(CategoryCode code) const;
  /// Throws ArgumentError for codes not in the registry.
  std::size_t index_of(CategoryCode code) const;
  CategoryCode code_at(std::size_t index) const { return entries.at(index).code; }
  const std::string& name_of(CategoryCode code) const;
  CategoryCode code_of(std::string_view name) const;
  friend bool operator==(const CategoryRegistry&, const CategoryRegistry&) = default;
};

struct Scene {
  RoomType room_type = RoomType::tatami;
  RoomShell shell;
  std::vector<FurnitureItem> items;
  ConditionCode condition;
  friend bool operator==(const Scene&, const Scene&) = default;
};

ConditionSchema default_schema(RoomType type);
CategoryRegistry default_registry(RoomType type);
/// Rectangular shell with one door and one window used when no shell is given.
RoomShell default_shell(RoomType type);

/// One-hot vector over the schema labels.
std::vector<double> encode_condition(const ConditionCode& cond, const ConditionSchema& schema);

enum class ViolationKind { outside, overlap, opening_off_wall, empty, invalid_shell, condition };

std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::size_t count(ViolationKind kind) const;
};

inline constexpr double kOverlapTolerance = 1e-6;  // m^2

ValidationReport validate_scene(const Scene& scene);

// Planar geometry helpers shared by extraction and placement.
namespace geom {

double distance(Point2 a, Point2 b);
double point_segment_distance(Point2 p, Point2 a, Point2 b);
double signed_area(const std::vector<Point2>& polygon);
bool is_simple(const std::vector<Point2>& polygon);
/// Points on the boundary count as inside.
bool contains(const std::vector<Point2>& polygon, Point2 p, double tol = 1e-9);
bool contains(const std::vector<Point2>& polygon, const Rect& r, double tol = 1e-9);
double overlap_area(const Rect& a, const Rect& b);
Rect bounding_box(const std::vector<Point2>& polygon);

}  // namespace geom

}  // namespace layoutgen
