#include "layoutgen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "layoutgen/condgen.hpp"
#include "layoutgen/dataset.hpp"
#include "layoutgen/errors.hpp"
#include "layoutgen/spectral.hpp"

namespace layoutgen {

using nlohmann::json;

std::vector<std::pair<std::string, LayerParams*>> LabelerParams::named() {
  return {{"labeler.g0", &g0}, {"labeler.g1", &g1}, {"labeler.fc", &fc}};
}

ParamList LabelerParams::params() {
  ParamList list;
  for (auto& [name, layer] : named()) append_params(list, *layer);
  return list;
}

LabelerParams LabelerParams::zeros_like() const {
  return {g0.zeros_like(), g1.zeros_like(), fc.zeros_like()};
}

GraphLabeler init_labeler(const LabelerConfig& c, const ConditionSchema& schema,
                          const CategoryRegistry& registry) {
  if (schema.labels.size() < 2) throw ArgumentError("labeler needs at least two labels");
  GraphLabeler l;
  l.config = c;
  l.schema = schema;
  l.registry = registry;
  Rng rng(c.seed);
  l.params.g0 = init_layer(registry.size() + c.spectral_dim, c.hidden, false, rng);
  l.params.g1 = init_layer(c.hidden, c.pooled, false, rng);
  l.params.fc = init_layer(c.pooled, schema.labels.size(), true, rng);
  return l;
}

Matrix labeler_features(const SceneGraph& g, const CategoryRegistry& registry,
                        std::size_t spectral_dim) {
  const std::size_t n = g.node_count();
  const Matrix spectral = spectral_embedding(Matrix(n, n, g.adjacency()), spectral_dim);
  Matrix x(n, registry.size() + spectral_dim);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, registry.index_of(g.nodes[i].category)) = 1.0;
    for (std::size_t k = 0; k < spectral_dim; ++k) x(i, registry.size() + k) = spectral(i, k);
  }
  return x;
}

namespace {

struct LabelerCache {
  Matrix a_norm;
  GcnHidden hidden;
  Matrix node_out;
  Matrix pooled;
  Matrix logits;
};

Matrix labeler_forward(const LabelerParams& p, const Matrix& adjacency, const Matrix& features,
                       LabelerCache& c) {
  c.a_norm = normalize_adjacency(adjacency);
  c.hidden = gcn_hidden(features, c.a_norm, p.g0.weight);
  c.node_out = matmul(c.hidden.ah, p.g1.weight);
  c.pooled = Matrix::row_vector(row_mean(c.node_out));
  c.logits = affine_rows(c.pooled, p.fc);
  return c.logits;
}

}  // namespace

double labeler_objective(const LabelerParams& params, const Matrix& adjacency,
                         const Matrix& features, std::size_t target, LabelerParams* grads) {
  LabelerCache c;
  labeler_forward(params, adjacency, features, c);
  Matrix d_logits(1, c.logits.cols());
  const double loss = cross_entropy(c.logits.row(0), target, d_logits.row(0));
  if (!grads) return loss;
  const Matrix d_pooled = affine_backward(c.pooled, params.fc, d_logits, grads->fc);
  const std::size_t n = c.node_out.rows();
  Matrix d_node(n, c.node_out.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d_node.cols(); ++k) d_node(i, k) = d_pooled(0, k) / static_cast<double>(n);
  grads->g1.weight += matmul_tn(c.hidden.ah, d_node);
  gcn_hidden_backward(c.hidden, features, c.a_norm, params.g0.weight,
                      matmul_nt(d_node, params.g1.weight), grads->g0.weight);
  return loss;
}

std::vector<double> labeler_probabilities(const GraphLabeler& labeler, const SceneGraph& g) {
  if (g.node_count() == 0) throw ArgumentError("labeler: empty graph");
  const std::size_t n = g.node_count();
  LabelerCache c;
  const Matrix logits = labeler_forward(labeler.params, Matrix(n, n, g.adjacency()),
                                        labeler_features(g, labeler.registry, labeler.config.spectral_dim), c);
  return softmax(logits.row(0));
}

std::size_t predict_label(const GraphLabeler& labeler, const SceneGraph& g) {
  const auto p = labeler_probabilities(labeler, g);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

GraphLabeler train_labeler(const std::vector<SceneGraph>& graphs, const ConditionSchema& schema,
                           const CategoryRegistry& registry, const LabelerConfig& config) {
  std::vector<std::vector<std::size_t>> by_label(schema.labels.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const auto label = graphs[i].condition.label_index;
    if (label >= by_label.size()) throw ArgumentError("train_labeler: graph label outside the schema");
    by_label[label].push_back(i);
  }
  const auto present = std::count_if(by_label.begin(), by_label.end(), [](const auto& v) { return !v.empty(); });
  if (present < 2) throw ArgumentError("train_labeler: need graphs of at least two labels");

  GraphLabeler labeler = init_labeler(config, schema, registry);
  Rng rng(config.seed ^ 0x5bd1e995ULL);

  // Stratified hold-out split.
  std::vector<std::size_t> train, held;
  for (auto& ids : by_label) {
    rng.shuffle(ids);
    const auto n_held = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(ids.size())));
    held.insert(held.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_held));
    train.insert(train.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_held), ids.end());
  }

  struct Example {
    Matrix adjacency, features;
    std::size_t label;
  };
  auto prepare = [&](std::size_t i) {
    const auto& g = graphs[i];
    const std::size_t n = g.node_count();
    return Example{Matrix(n, n, g.adjacency()), labeler_features(g, registry, config.spectral_dim),
                   g.condition.label_index};
  };
  std::vector<Example> examples;
  for (std::size_t i : train) examples.push_back(prepare(i));

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t idx : order) {
      const Example& ex = examples[idx];
      LabelerParams grads = labeler.params.zeros_like();
      const double loss = labeler_objective(labeler.params, ex.adjacency, ex.features, ex.label, &grads);
      if (!std::isfinite(loss) || !all_finite(grads.params()))
        throw TrainingError("labeler training diverged at epoch " + std::to_string(epoch + 1));
      sgd_step(labeler.params.params(), grads.params(), config.learning_rate);
      total += loss;
    }
    labeler.loss_curve.push_back(examples.empty() ? 0.0 : total / static_cast<double>(examples.size()));
  }

  std::size_t correct = 0;
  for (std::size_t i : held) correct += predict_label(labeler, graphs[i]) == graphs[i].condition.label_index;
  labeler.heldout_count = held.size();
  labeler.heldout_accuracy = held.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(held.size());
  return labeler;
}

json labeler_to_json(const GraphLabeler& labeler) {
  GraphLabeler& l = const_cast<GraphLabeler&>(labeler);
  json matrices = json::object();
  write_layers(matrices, l.params.named());
  const auto& c = labeler.config;
  return {{"format_version", kCheckpointFormatVersion},
          {"kind", "labeler"},
          {"config",
           {{"spectral_dim", c.spectral_dim},
            {"hidden", c.hidden},
            {"pooled", c.pooled},
            {"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"holdout_fraction", c.holdout_fraction},
            {"seed", c.seed}}},
          {"schema", to_json(labeler.schema)},
          {"category_registry", to_json(labeler.registry)},
          {"heldout_accuracy", labeler.heldout_accuracy},
          {"heldout_count", labeler.heldout_count},
          {"matrices", matrices},
          {"loss_curve", labeler.loss_curve}};
}

GraphLabeler labeler_from_json(const json& j) {
  using namespace jsonu;
  require_version(j, kCheckpointFormatVersion, "labeler");
  if (string_at(j, "kind", "labeler") != "labeler") throw ParseError("labeler.kind", "expected 'labeler'");
  const json& cj = field(j, "config", "labeler");
  LabelerConfig c;
  c.spectral_dim = static_cast<std::size_t>(integer_at(cj, "spectral_dim", "config"));
  c.hidden = static_cast<std::size_t>(integer_at(cj, "hidden", "config"));
  c.pooled = static_cast<std::size_t>(integer_at(cj, "pooled", "config"));
  c.epochs = static_cast<std::size_t>(integer_at(cj, "epochs", "config"));
  c.learning_rate = number_at(cj, "learning_rate", "config");
  c.holdout_fraction = number_at(cj, "holdout_fraction", "config");
  c.seed = field(cj, "seed", "config").get<std::uint64_t>();
  GraphLabeler l = init_labeler(c, schema_from_json(field(j, "schema", "labeler")),
                                registry_from_json(field(j, "category_registry", "labeler")));
  read_layers(field(j, "matrices", "labeler"), l.params.named());
  l.heldout_accuracy = number_at(j, "heldout_accuracy", "labeler");
  l.heldout_count = static_cast<std::size_t>(integer_at(j, "heldout_count", "labeler"));
  if (j.contains("loss_curve"))
    for (const auto& v : array_at(j, "loss_curve", "labeler")) l.loss_curve.push_back(number(v, "loss_curve"));
  return l;
}

void save_labeler(const GraphLabeler& labeler, const std::string& path) {
  jsonu::write_file(path, labeler_to_json(labeler));
}

GraphLabeler load_labeler(const std::string& path) { return labeler_from_json(jsonu::read_file(path)); }

// ---------------------------------------------------------------------------

double average_accuracy(std::span<const double> per_label) {
  if (per_label.empty()) throw ArgumentError("average_accuracy: no labels");
  return std::accumulate(per_label.begin(), per_label.end(), 0.0) / static_cast<double>(per_label.size());
}

AccuracyReport accuracy_from_counts(const ConditionSchema& schema, std::span<const std::size_t> matches,
                                    std::span<const std::size_t> totals) {
  const std::size_t labels = schema.labels.size();
  if (matches.size() != labels || totals.size() != labels)
    throw ArgumentError("accuracy_from_counts: expected one count per label");
  AccuracyReport r;
  r.labels = schema.labels;
  r.counts.assign(totals.begin(), totals.end());
  std::vector<double> contributing;
  for (std::size_t l = 0; l < labels; ++l) {
    if (matches[l] > totals[l]) throw ArgumentError("accuracy_from_counts: more matches than graphs");
    const bool has = totals[l] > 0;
    r.included.push_back(has);
    r.per_label.push_back(has ? static_cast<double>(matches[l]) / static_cast<double>(totals[l]) : 0.0);
    if (has)
      contributing.push_back(r.per_label.back());
    else
      r.warnings.push_back("label '" + schema.labels[l] + "' has no generated graphs; excluded from the average");
  }
  r.n_c = contributing.size();
  r.averaged = contributing.empty() ? 0.0 : average_accuracy(contributing);
  return r;
}

AccuracyReport acc_g(const GraphLabeler& labeler,
                     const std::vector<std::pair<SceneGraph, std::size_t>>& generated) {
  const std::size_t labels = labeler.schema.labels.size();
  std::vector<std::size_t> matches(labels, 0), totals(labels, 0);
  for (const auto& [g, intended] : generated) {
    if (intended >= labels)
      throw ArgumentError("acc_g: intended label index " + std::to_string(intended) + " outside the schema");
    ++totals[intended];
    matches[intended] += predict_label(labeler, g) == intended;
  }
  return accuracy_from_counts(labeler.schema, matches, totals);
}

json to_json(const AccuracyReport& r) {
  json per = json::array();
  for (std::size_t l = 0; l < r.labels.size(); ++l)
    per.push_back({{"label", r.labels[l]},
                   {"accuracy", r.per_label[l]},
                   {"count", r.counts[l]},
                   {"included", static_cast<bool>(r.included[l])}});
  return {{"per_label", per}, {"averaged", r.averaged}, {"n_c", r.n_c}, {"warnings", r.warnings}};
}

// ---------------------------------------------------------------------------

ValidityReport scene_validity_report(const std::vector<Scene>& scenes,
                                     std::span<const std::size_t> predicate_violations) {
  if (!predicate_violations.empty() && predicate_violations.size() != scenes.size())
    throw ArgumentError("scene_validity_report: one predicate count per scene expected");
  ValidityReport r;
  r.scenes = scenes.size();
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const ValidationReport v = validate_scene(scenes[s]);
    const std::size_t outside = v.count(ViolationKind::outside);
    const std::size_t overlap = v.count(ViolationKind::overlap);
    r.outside_items += outside;
    r.overlap_pairs += overlap;
    r.outside_scenes += outside > 0;
    r.overlap_scenes += overlap > 0;
    if (!predicate_violations.empty()) {
      r.predicate_violations += predicate_violations[s];
      r.predicate_scenes += predicate_violations[s] > 0;
    }
  }
  if (r.scenes > 0) {
    const double n = static_cast<double>(r.scenes);
    r.outside_rate = static_cast<double>(r.outside_scenes) / n;
    r.overlap_rate = static_cast<double>(r.overlap_scenes) / n;
    r.predicate_rate = static_cast<double>(r.predicate_scenes) / n;
  }
  return r;
}

json to_json(const ValidityReport& r) {
  return {{"scenes", r.scenes},
          {"outside_scenes", r.outside_scenes},
          {"overlap_scenes", r.overlap_scenes},
          {"predicate_scenes", r.predicate_scenes},
          {"outside_items", r.outside_items},
          {"overlap_pairs", r.overlap_pairs},
          {"predicate_violations", r.predicate_violations},
          {"outside_rate", r.outside_rate},
          {"overlap_rate", r.overlap_rate},
          {"predicate_rate", r.predicate_rate}};
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kPixelsPerMeter = 100.0;
constexpr double kMargin = 20.0;

std::string color_for(CategoryCode code) {
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  return palette[static_cast<std::size_t>(code) % std::size(palette)];
}

}  // namespace

std::string render_svg(const Scene& scene, const CategoryRegistry& registry) {
  const Rect box = geom::bounding_box(scene.shell.boundary);
  const double w = (box.max_x - box.min_x) * kPixelsPerMeter + 2 * kMargin;
  const double h = (box.max_y - box.min_y) * kPixelsPerMeter + 2 * kMargin;
  // SVG y grows downward; flip so +y in the room points up in the drawing.
  auto px = [&](double x) { return kMargin + (x - box.min_x) * kPixelsPerMeter; };
  auto py = [&](double y) { return kMargin + (box.max_y - y) * kPixelsPerMeter; };

  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
  out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "  <polygon points=\"";
  for (const auto& p : scene.shell.boundary) out << px(p.x) << ',' << py(p.y) << ' ';
  out << "\" fill=\"#f7f7f7\" stroke=\"black\" stroke-width=\"3\"/>\n";

  for (const auto& o : scene.shell.openings) {
    const Point2 a = scene.shell.wall_start(o.wall_index), b = scene.shell.wall_end(o.wall_index);
    const double len = scene.shell.wall_length(o.wall_index);
    const double t0 = o.offset / len, t1 = (o.offset + o.width) / len;
    out << "  <line x1=\"" << px(a.x + (b.x - a.x) * t0) << "\" y1=\"" << py(a.y + (b.y - a.y) * t0)
        << "\" x2=\"" << px(a.x + (b.x - a.x) * t1) << "\" y2=\"" << py(a.y + (b.y - a.y) * t1)
        << "\" stroke=\"" << (o.kind == OpeningKind::door ? "#8b5a2b" : "#3a8fd9")
        << "\" stroke-width=\"7\"/>\n";
  }

  for (const auto& item : scene.items) {
    const Rect r = item.footprint();
    out << "  <rect x=\"" << px(r.min_x) << "\" y=\"" << py(r.max_y) << "\" width=\""
        << (r.max_x - r.min_x) * kPixelsPerMeter << "\" height=\"" << (r.max_y - r.min_y) * kPixelsPerMeter
        << "\" fill=\"" << color_for(item.category) << "\" fill-opacity=\"0.6\" stroke=\"black\"/>\n";
    // Short tick from the centroid toward the item's front.
    static const double fx[] = {0, -1, 0, 1}, fy[] = {1, 0, -1, 0};
    const int d = direction_index(item.direction);
    const double reach = 0.25 * std::min(r.max_x - r.min_x, r.max_y - r.min_y);
    out << "  <line x1=\"" << px(item.position.x) << "\" y1=\"" << py(item.position.y) << "\" x2=\""
        << px(item.position.x + fx[d] * reach) << "\" y2=\"" << py(item.position.y + fy[d] * reach)
        << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    const std::string name = registry.contains(item.category) ? registry.name_of(item.category)
                                                              : std::to_string(item.category);
    out << "  <text x=\"" << px(item.position.x) << "\" y=\"" << py(item.position.y) - 4
        << "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">" << name << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

json export_comparison_pairs(const std::vector<Scene>& real, const std::vector<Scene>& generated,
                             const std::string& directory, std::uint64_t seed) {
  if (real.size() != generated.size())
    throw ArgumentError("export_comparison_pairs: " + std::to_string(real.size()) + " real vs " +
                        std::to_string(generated.size()) + " generated scenes");
  std::filesystem::create_directories(directory);
  Rng rng(seed);
  json pairs = json::array(), key = json::array();
  auto write = [&](const std::string& name, const Scene& s) {
    std::ofstream f(std::filesystem::path(directory) / name);
    if (!f) throw Error("cannot write " + name + " in " + directory);
    f << render_svg(s, default_registry(s.room_type));
  };
  for (std::size_t i = 0; i < real.size(); ++i) {
    const bool real_left = rng.uniform() < 0.5;
    const std::string left = "pair_" + std::to_string(i) + "_left.svg";
    const std::string right = "pair_" + std::to_string(i) + "_right.svg";
    write(left, real_left ? real[i] : generated[i]);
    write(right, real_left ? generated[i] : real[i]);
    pairs.push_back({{"pair", i}, {"left", left}, {"right", right}});
    key.push_back({{"pair", i},
                   {"left", real_left ? "real" : "generated"},
                   {"right", real_left ? "generated" : "real"},
                   {"real_is_left", real_left}});
  }
  json manifest = {{"format_version", 1}, {"seed", seed}, {"pairs", pairs}};
  jsonu::write_file((std::filesystem::path(directory) / "manifest.json").string(), manifest);
  jsonu::write_file((std::filesystem::path(directory) / "key.json").string(),
                    json{{"format_version", 1}, {"seed", seed}, {"key", key}});
  return manifest;
}

}  // namespace layoutgen
