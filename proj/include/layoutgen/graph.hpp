#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "layoutgen/json_util.hpp"
#include "layoutgen/scene.hpp"

namespace layoutgen {

enum class DistanceBucket : int { near = 1, middle = 2, further = 3 };
enum class SemanticClass : int { wall_opening = 1, wall_object = 2, object_object = 3 };

inline constexpr int kEdgeTypeCount = 9;
inline constexpr double kNearFraction = 0.15;    // of the room diagonal
inline constexpr double kMiddleFraction = 0.40;

/// near below 0.15 diag, middle below 0.40 diag, further otherwise.
DistanceBucket distance_bucket(double distance, double room_diagonal);

/// 3*(sem-1) + dist, in 1..9.
int edge_type(SemanticClass sem, DistanceBucket dist);
SemanticClass semantic_class_of_type(int type);
DistanceBucket bucket_of_type(int type);

/// Semantic class of a node pair, or nullopt for pairs that never share an edge
/// (wall-wall and opening-opening). Doors and windows count as wall elements
/// when paired with an object.
std::optional<SemanticClass> semantic_class(CategoryCode a, CategoryCode b);

struct GraphNode {
  int id = 0;
  CategoryCode category = kWallCode;
  friend bool operator==(const GraphNode&, const GraphNode&) = default;
};

/// Undirected edge stored with u < v. `distance` is the realized distance in
/// meters for extracted graphs and negative when unknown.
struct GraphEdge {
  int u = 0;
  int v = 0;
  int type = 1;
  double distance = -1.0;
  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

struct SceneGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;  // sorted by (u, v)
  ConditionCode condition;

  std::size_t node_count() const { return nodes.size(); }
  CategoryCode category(int id) const { return nodes.at(static_cast<std::size_t>(id)).category; }
  bool is_object(int id) const { return !is_shell_code(category(id)); }
  std::vector<int> object_nodes() const;
  std::optional<GraphEdge> find_edge(int a, int b) const;
  /// Adds or replaces the edge between a and b, keeping edges sorted.
  void set_edge(int a, int b, int type, double distance = -1.0);
  std::vector<GraphEdge> incident(int id) const;
  /// Dense binary adjacency (row-major n*n).
  std::vector<double> adjacency() const;
  bool connected() const;
  std::size_t component_count() const;

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

/// Throws ArgumentError describing the first broken SceneGraph invariant.
void check_graph(const SceneGraph& g);

inline constexpr int kGraphFormatVersion = 1;

nlohmann::json to_json(const SceneGraph& g);
SceneGraph graph_from_json(const nlohmann::json& j, const std::string& path = "graph");

/// Extracted graphs of one room type, the input of graph and labeler training.
struct GraphDataset {
  RoomType room_type = RoomType::tatami;
  ConditionSchema schema;
  CategoryRegistry registry;
  std::vector<SceneGraph> graphs;
  /// Optional, parallel to `graphs`: typed edges of every admissible pair
  /// before pruning (the dense relation graph).
  std::vector<std::vector<GraphEdge>> relations;
};

void save_graph_dataset(const GraphDataset& d, const std::string& path);
GraphDataset load_graph_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// Extraction

/// A shell element or furniture item as seen by extraction: walls are
/// segments, everything else is a point (opening center or item centroid).
struct SceneElement {
  CategoryCode category;
  Point2 a;  // segment start or point
  Point2 b;  // segment end (walls only)
  bool is_wall() const { return category == kWallCode; }
};

/// Walls in boundary order, then openings in list order, then items.
/// Element i becomes graph node i.
std::vector<SceneElement> scene_elements(const Scene& scene);

/// Point-to-segment when a wall is involved, centroid-to-centroid otherwise.
double element_distance(const SceneElement& a, const SceneElement& b);

/// Dense relation graph over explicit elements.
SceneGraph extract_graph(const std::vector<SceneElement>& elements, double room_diagonal,
                         const ConditionCode& condition);
/// Throws ExtractionError when the scene has geometric violations.
SceneGraph extract_graph(const Scene& scene);

SceneGraph prune_graph(const SceneGraph& g);

using PairDistance = std::function<double(int, int)>;

/// Repeatedly bridges the two components holding the closest admissible pair.
SceneGraph ensure_connectivity(const SceneGraph& g, const PairDistance& distance,
                               double room_diagonal);
SceneGraph ensure_connectivity(const SceneGraph& g, const Scene& scene);

/// extract -> prune -> reconnect.
SceneGraph scene_to_graph(const Scene& scene);

}  // namespace layoutgen
