#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "layoutgen/graph.hpp"
#include "layoutgen/nn.hpp"

namespace layoutgen {

// ---------------------------------------------------------------------------
// Category statistics

struct SizeStats {
  Size2 mean;
  Size2 stddev;
  std::size_t frequency = 0;
  double area() const { return mean.width * mean.depth; }
};

struct CategoryStats {
  std::map<CategoryCode, SizeStats> by_category;

  /// Throws StatsError when the category never occurred in training.
  const SizeStats& at(CategoryCode code) const;
};

/// Means and population standard deviations over all items of the scenes.
CategoryStats compute_category_stats(const std::vector<Scene>& scenes);

/// Object nodes by descending mean footprint, then category code, then id.
std::vector<int> instantiation_order(const SceneGraph& g, const CategoryStats& stats);

// ---------------------------------------------------------------------------
// Predicates

/// Does the realized relation between two elements match the edge type?
bool predicate_check(const SceneElement& a, const SceneElement& b, int type, double room_diagonal);
/// Edge endpoints index scene_elements(scene). Throws ArgumentError when an
/// endpoint has not been placed yet.
bool predicate_check(const Scene& scene, const GraphEdge& edge);

// ---------------------------------------------------------------------------
// Occupancy grid

struct Grid {
  Rect box;
  std::size_t resolution = 16;

  std::size_t cells() const { return resolution * resolution; }
  double cell_width() const { return (box.max_x - box.min_x) / static_cast<double>(resolution); }
  double cell_height() const { return (box.max_y - box.min_y) / static_cast<double>(resolution); }
  Rect cell_rect(std::size_t cell) const;
  Point2 cell_center(std::size_t cell) const;
  std::size_t cell_of(Point2 p) const;
};

Grid make_grid(const RoomShell& shell, std::size_t resolution);

/// Cells whose center lies outside the polygon or whose area overlaps a placed item.
std::vector<bool> occupancy_mask(const Grid& grid, const RoomShell& shell,
                                 const std::vector<FurnitureItem>& placed);

/// Orientation index (0..3) facing away from the wall nearest to p.
int facing_away_from_nearest_wall(const RoomShell& shell, Point2 p);

// ---------------------------------------------------------------------------
// Placement network

struct PlacementConfig {
  std::size_t grid = 16;
  std::size_t gcn_hidden = 16;
  std::size_t gcn_out = 16;
  std::size_t edge_embed = 8;
  std::size_t fusion_hidden = 32;
  std::size_t embed_dim = 16;
  std::size_t epochs = 60;
  double learning_rate = 0.02;
  double clip_norm = 5.0;
  std::size_t retries = 50;       // per object
  std::size_t scene_restarts = 8;  // whole-scene resamples while violations remain
  std::uint64_t seed = 1;
};

/// Per-cell features the location head weighs with learned, input-dependent
/// coefficients.
enum CellFeature : std::size_t {
  kPredicateFraction = 0,  // share of edges to placed nodes satisfied at the cell center
  kWallDistance,           // distance to the nearest wall / room diagonal
  kWallHug,                // 1 when the center is half a mean depth off a wall
  kItemDistance,           // distance to the nearest placed item / diagonal (1 if none)
  kFitsFacing,             // mean-size footprint facing away from the wall fits here
  kFitsAny,                // some orientation of the mean-size footprint fits
  kCellFeatureCount
};

struct PlacementParams {
  LayerParams global0, global1;  // GCN over the whole graph
  LayerParams local0, local1;    // GCN over placed nodes plus the next node
  LayerParams edge_table;        // 9 x edge_embed, no bias
  LayerParams fuse0, fuse1;      // two-layer fusion
  LayerParams location_head;     // [embed, category] -> grid cells
  LayerParams feature_head;      // [embed, category] -> cell feature weights
  LayerParams orientation_head;  // [embed, category, facing] -> 4
  LayerParams size_head;         // [embed, category] -> log size ratio (2)

  std::vector<std::pair<std::string, LayerParams*>> named();
  ParamList params();
  PlacementParams zeros_like() const;
};

struct PlacementModel {
  PlacementConfig config;
  ConditionSchema schema;
  CategoryRegistry registry;
  CategoryStats stats;
  PlacementParams params;
  std::vector<double> loss_curve;  // mean total loss per object per epoch
  std::vector<double> location_curve;
};

PlacementModel init_placement(const PlacementConfig& config, const ConditionSchema& schema,
                              const CategoryRegistry& registry, const CategoryStats& stats);

/// Inputs of the mixture embedding for one placement step.
struct EmbedInput {
  Matrix global_adjacency;
  Matrix global_features;  // one-hot category
  Matrix local_adjacency;
  Matrix local_features;  // one-hot category + is-next flag
  std::vector<double> edge_type_counts;  // 9 entries: next's edges to placed nodes by type
  std::vector<double> cond;
};

/// `placed` lists graph nodes already realized (shell nodes count as placed).
/// Throws ArgumentError if next is absent or already placed.
EmbedInput embed_input(const SceneGraph& g, const std::vector<int>& placed, int next,
                       const std::vector<double>& cond_vec, const CategoryRegistry& registry);

std::vector<double> mixture_embed(const EmbedInput& input, const PlacementParams& params);
std::vector<double> mixture_embed(const SceneGraph& g, const std::vector<int>& placed, int next,
                                  const std::vector<double>& cond_vec, const PlacementModel& model);

/// Distributions over the next item's placement.
struct PlacementDistribution {
  std::vector<double> location;  // grid cells, masked cells exactly 0
  std::array<std::vector<double>, 4> orientation_by_facing;
  Size2 size;
};

/// `cell_features` is cells x kCellFeatureCount. Throws NoSpaceError when every
/// cell is masked.
PlacementDistribution predict_placement(const PlacementModel& model,
                                        const std::vector<double>& embed, CategoryCode category,
                                        const Matrix& cell_features,
                                        const std::vector<bool>& mask);

/// One teacher-forced training step.
struct PlacementExample {
  EmbedInput embed;
  std::size_t category = 0;  // registry index
  Matrix cell_features;
  std::vector<bool> mask;  // true cell is never masked
  std::size_t target_cell = 0;
  int facing = 0;
  int target_orientation = 0;
  std::array<double, 2> target_log_size{};
};

struct PlacementLoss {
  double total = 0.0;
  double location = 0.0;
  double orientation = 0.0;
  double size = 0.0;
};

PlacementLoss placement_objective(const PlacementParams& params, const PlacementExample& example,
                                  PlacementParams* grads);

/// Examples for every object of the scene in instantiation order.
std::vector<PlacementExample> placement_examples(const Scene& scene, const SceneGraph& graph,
                                                 const PlacementModel& model);

/// Scenes and their extracted graphs, paired by index.
PlacementModel train_instantiator(const std::vector<Scene>& scenes,
                                  const std::vector<SceneGraph>& graphs,
                                  const PlacementConfig& config);
PlacementModel train_instantiator(const std::vector<Scene>& scenes, const PlacementConfig& config);

// ---------------------------------------------------------------------------
// Sampling

struct SampledScene {
  Scene scene;
  std::vector<int> item_nodes;  // graph node of each scene item
  std::vector<std::string> violations;
  std::size_t geometric_violations = 0;  // objects left outside or overlapping
  std::size_t restarts = 0;             // whole-scene resamples used
  std::size_t predicates_checked = 0;  // edges with at least one object endpoint
  std::size_t predicates_satisfied = 0;
  double satisfaction_rate() const {
    return predicates_checked == 0 ? 1.0
                                   : static_cast<double>(predicates_satisfied) /
                                         static_cast<double>(predicates_checked);
  }
};

/// Places the graph's objects one by one in instantiation order. Shell nodes of
/// the graph bind lazily to shell elements of the same kind. A scene that ends
/// with violations is resampled from a derived seed up to `scene_restarts`
/// times; the first clean scene, else the least violating one, is returned.
/// Throws InstantiationError when no cell is free for a node.
SampledScene sample_scene(const PlacementModel& model, const SceneGraph& g,
                          const ConditionCode& cond, const RoomShell& room, std::uint64_t seed);

nlohmann::json placement_to_json(const PlacementModel& model);
PlacementModel placement_from_json(const nlohmann::json& j);
void save_placement(const PlacementModel& model, const std::string& path);
PlacementModel load_placement(const std::string& path);

}  // namespace layoutgen
