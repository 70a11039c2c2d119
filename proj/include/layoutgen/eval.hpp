#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "layoutgen/graph.hpp"
#include "layoutgen/nn.hpp"

namespace layoutgen {

// ---------------------------------------------------------------------------
// Graph labeler: classifies a scene graph into one of the room type's
// condition labels. It stands in for the label() oracle of the accuracy metric.

struct LabelerConfig {
  std::size_t spectral_dim = 4;
  std::size_t hidden = 16;
  std::size_t pooled = 16;
  std::size_t epochs = 100;
  double learning_rate = 0.05;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 1;
};

struct LabelerParams {
  LayerParams g0;  // GCN layer 1, no bias
  LayerParams g1;  // GCN layer 2, no bias
  LayerParams fc;  // pooled -> labels

  std::vector<std::pair<std::string, LayerParams*>> named();
  ParamList params();
  LabelerParams zeros_like() const;
};

struct GraphLabeler {
  LabelerConfig config;
  ConditionSchema schema;
  CategoryRegistry registry;
  LabelerParams params;
  double heldout_accuracy = 0.0;
  std::size_t heldout_count = 0;
  std::vector<double> loss_curve;  // mean training cross-entropy per epoch
};

GraphLabeler init_labeler(const LabelerConfig& config, const ConditionSchema& schema,
                          const CategoryRegistry& registry);

/// Node features: one-hot category followed by `spectral_dim` spectral coordinates.
Matrix labeler_features(const SceneGraph& g, const CategoryRegistry& registry,
                        std::size_t spectral_dim);

/// Cross-entropy of one graph against `target`; accumulates gradients if asked.
double labeler_objective(const LabelerParams& params, const Matrix& adjacency,
                         const Matrix& features, std::size_t target, LabelerParams* grads);

std::vector<double> labeler_probabilities(const GraphLabeler& labeler, const SceneGraph& g);
std::size_t predict_label(const GraphLabeler& labeler, const SceneGraph& g);

/// Throws ArgumentError unless at least two labels have graphs.
GraphLabeler train_labeler(const std::vector<SceneGraph>& graphs, const ConditionSchema& schema,
                           const CategoryRegistry& registry, const LabelerConfig& config);

nlohmann::json labeler_to_json(const GraphLabeler& labeler);
GraphLabeler labeler_from_json(const nlohmann::json& j);
void save_labeler(const GraphLabeler& labeler, const std::string& path);
GraphLabeler load_labeler(const std::string& path);

// ---------------------------------------------------------------------------
// Generation accuracy

struct AccuracyReport {
  std::vector<std::string> labels;
  std::vector<double> per_label;    // matches / N_i
  std::vector<std::size_t> counts;  // N_i
  std::vector<bool> included;       // false where N_i == 0
  double averaged = 0.0;
  std::size_t n_c = 0;  // labels contributing to the average
  std::vector<std::string> warnings;
};

/// Unweighted mean of the given per-label accuracies.
double average_accuracy(std::span<const double> per_label);

/// Builds the report from per-label match and total counts.
AccuracyReport accuracy_from_counts(const ConditionSchema& schema,
                                    std::span<const std::size_t> matches,
                                    std::span<const std::size_t> totals);

/// Each pair is (generated graph, intended label index).
AccuracyReport acc_g(const GraphLabeler& labeler,
                     const std::vector<std::pair<SceneGraph, std::size_t>>& generated);

nlohmann::json to_json(const AccuracyReport& report);

// ---------------------------------------------------------------------------
// Scene validity

struct ValidityReport {
  std::size_t scenes = 0;
  std::size_t outside_scenes = 0;
  std::size_t overlap_scenes = 0;
  std::size_t predicate_scenes = 0;
  std::size_t outside_items = 0;
  std::size_t overlap_pairs = 0;
  std::size_t predicate_violations = 0;
  double outside_rate = 0.0;  // fraction of scenes with at least one such violation
  double overlap_rate = 0.0;
  double predicate_rate = 0.0;
};

/// `predicate_violations[i]`, when given, is the number of unsatisfied edge
/// predicates of scene i.
ValidityReport scene_validity_report(const std::vector<Scene>& scenes,
                                     std::span<const std::size_t> predicate_violations = {});

nlohmann::json to_json(const ValidityReport& report);

// ---------------------------------------------------------------------------
// Two-alternative forced-choice export

/// Top-view drawing of a scene: polygon, openings and labeled item rectangles.
std::string render_svg(const Scene& scene, const CategoryRegistry& registry);

/// Writes pair_<i>_left.svg / pair_<i>_right.svg, manifest.json (no answers)
/// and key.json into `directory`. Returns the manifest.
nlohmann::json export_comparison_pairs(const std::vector<Scene>& real,
                                       const std::vector<Scene>& generated,
                                       const std::string& directory, std::uint64_t seed);

}  // namespace layoutgen
