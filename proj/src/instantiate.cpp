#include "layoutgen/instantiate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "layoutgen/condgen.hpp"
#include "layoutgen/dataset.hpp"
#include "layoutgen/errors.hpp"
#include "layoutgen/spectral.hpp"

namespace layoutgen {

using nlohmann::json;

const SizeStats& CategoryStats::at(CategoryCode code) const {
  const auto it = by_category.find(code);
  if (it == by_category.end())
    throw StatsError("no size statistics for category " + std::to_string(code));
  return it->second;
}

CategoryStats compute_category_stats(const std::vector<Scene>& scenes) {
  struct Acc {
    double w = 0, d = 0, ww = 0, dd = 0;
    std::size_t n = 0;
  };
  std::map<CategoryCode, Acc> acc;
  for (const auto& s : scenes)
    for (const auto& item : s.items) {
      Acc& a = acc[item.category];
      a.w += item.size.width;
      a.d += item.size.depth;
      a.ww += item.size.width * item.size.width;
      a.dd += item.size.depth * item.size.depth;
      ++a.n;
    }
  CategoryStats stats;
  for (const auto& [code, a] : acc) {
    const double n = static_cast<double>(a.n);
    const double mw = a.w / n, md = a.d / n;
    stats.by_category[code] = {{mw, md},
                               {std::sqrt(std::max(0.0, a.ww / n - mw * mw)),
                                std::sqrt(std::max(0.0, a.dd / n - md * md))},
                               a.n};
  }
  return stats;
}

std::vector<int> instantiation_order(const SceneGraph& g, const CategoryStats& stats) {
  std::vector<int> order = g.object_nodes();
  std::vector<double> area(g.node_count(), 0.0);
  for (int id : order) area[static_cast<std::size_t>(id)] = stats.at(g.category(id)).area();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double aa = area[static_cast<std::size_t>(a)], ab = area[static_cast<std::size_t>(b)];
    if (aa != ab) return aa > ab;
    if (g.category(a) != g.category(b)) return g.category(a) < g.category(b);
    return a < b;
  });
  return order;
}

// ---------------------------------------------------------------------------

bool predicate_check(const SceneElement& a, const SceneElement& b, int type, double room_diagonal) {
  const auto sem = semantic_class(a.category, b.category);
  if (!sem || *sem != semantic_class_of_type(type)) return false;
  return distance_bucket(element_distance(a, b), room_diagonal) == bucket_of_type(type);
}

bool predicate_check(const Scene& scene, const GraphEdge& edge) {
  const auto elements = scene_elements(scene);
  const auto n = static_cast<int>(elements.size());
  if (edge.u < 0 || edge.v < 0 || edge.u >= n || edge.v >= n)
    throw ArgumentError("predicate_check: edge (" + std::to_string(edge.u) + ", " +
                        std::to_string(edge.v) + ") has an endpoint that is not placed");
  return predicate_check(elements[static_cast<std::size_t>(edge.u)],
                         elements[static_cast<std::size_t>(edge.v)], edge.type,
                         scene.shell.diagonal());
}

// ---------------------------------------------------------------------------

Rect Grid::cell_rect(std::size_t cell) const {
  const std::size_t cx = cell % resolution, cy = cell / resolution;
  const double w = cell_width(), h = cell_height();
  return {box.min_x + static_cast<double>(cx) * w, box.min_y + static_cast<double>(cy) * h,
          box.min_x + static_cast<double>(cx + 1) * w, box.min_y + static_cast<double>(cy + 1) * h};
}

Point2 Grid::cell_center(std::size_t cell) const {
  const Rect r = cell_rect(cell);
  return {(r.min_x + r.max_x) / 2.0, (r.min_y + r.max_y) / 2.0};
}

std::size_t Grid::cell_of(Point2 p) const {
  auto index = [&](double v, double lo, double size) {
    const auto i = static_cast<long>(std::floor((v - lo) / size));
    return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(resolution) - 1));
  };
  return index(p.y, box.min_y, cell_height()) * resolution + index(p.x, box.min_x, cell_width());
}

Grid make_grid(const RoomShell& shell, std::size_t resolution) {
  if (resolution == 0) throw ArgumentError("grid resolution must be positive");
  return {geom::bounding_box(shell.boundary), resolution};
}

std::vector<bool> occupancy_mask(const Grid& grid, const RoomShell& shell,
                                 const std::vector<FurnitureItem>& placed) {
  std::vector<bool> mask(grid.cells(), false);
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    if (!geom::contains(shell.boundary, grid.cell_center(c))) {
      mask[c] = true;
      continue;
    }
    const Rect r = grid.cell_rect(c);
    for (const auto& item : placed)
      if (geom::overlap_area(r, item.footprint()) > 1e-12) {
        mask[c] = true;
        break;
      }
  }
  return mask;
}

namespace {

constexpr std::array<Point2, 4> kFront = {{{0, 1}, {-1, 0}, {0, -1}, {1, 0}}};

std::size_t nearest_wall(const RoomShell& shell, Point2 p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t w = 0; w < shell.wall_count(); ++w) {
    const double d = geom::point_segment_distance(p, shell.wall_start(w), shell.wall_end(w));
    if (d < best_d) best_d = d, best = w;
  }
  return best;
}

double wall_distance(const RoomShell& shell, Point2 p) {
  const std::size_t w = nearest_wall(shell, p);
  return geom::point_segment_distance(p, shell.wall_start(w), shell.wall_end(w));
}

}  // namespace

int facing_away_from_nearest_wall(const RoomShell& shell, Point2 p) {
  const std::size_t w = nearest_wall(shell, p);
  const Point2 a = shell.wall_start(w), b = shell.wall_end(w);
  const Point2 inward{-(b.y - a.y), b.x - a.x};  // left normal of a CCW edge
  int best = 0;
  for (int k = 1; k < 4; ++k)
    if (kFront[k].x * inward.x + kFront[k].y * inward.y >
        kFront[best].x * inward.x + kFront[best].y * inward.y)
      best = k;
  return best;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, LayerParams*>> PlacementParams::named() {
  return {{"place.global0", &global0},        {"place.global1", &global1},
          {"place.local0", &local0},          {"place.local1", &local1},
          {"place.edge_table", &edge_table},  {"place.fuse0", &fuse0},
          {"place.fuse1", &fuse1},            {"place.location_head", &location_head},
          {"place.feature_head", &feature_head}, {"place.orientation_head", &orientation_head},
          {"place.size_head", &size_head}};
}

ParamList PlacementParams::params() {
  ParamList list;
  for (auto& [name, layer] : named()) append_params(list, *layer);
  return list;
}

PlacementParams PlacementParams::zeros_like() const {
  return {global0.zeros_like(),      global1.zeros_like(),      local0.zeros_like(),
          local1.zeros_like(),       edge_table.zeros_like(),   fuse0.zeros_like(),
          fuse1.zeros_like(),        location_head.zeros_like(), feature_head.zeros_like(),
          orientation_head.zeros_like(), size_head.zeros_like()};
}

PlacementModel init_placement(const PlacementConfig& c, const ConditionSchema& schema,
                              const CategoryRegistry& registry, const CategoryStats& stats) {
  PlacementModel m;
  m.config = c;
  m.schema = schema;
  m.registry = registry;
  m.stats = stats;
  const std::size_t cats = registry.size();
  const std::size_t head_in = c.embed_dim + cats;
  Rng rng(c.seed);
  auto& p = m.params;
  p.global0 = init_layer(cats, c.gcn_hidden, false, rng);
  p.global1 = init_layer(c.gcn_hidden, c.gcn_out, false, rng);
  p.local0 = init_layer(cats + 1, c.gcn_hidden, false, rng);
  p.local1 = init_layer(c.gcn_hidden, c.gcn_out, false, rng);
  p.edge_table = init_layer(kEdgeTypeCount, c.edge_embed, false, rng);
  p.fuse0 = init_layer(2 * c.gcn_out + c.edge_embed + schema.labels.size(), c.fusion_hidden, true, rng);
  p.fuse1 = init_layer(c.fusion_hidden, c.embed_dim, true, rng);
  p.location_head = init_layer(head_in, c.grid * c.grid, true, rng);
  p.feature_head = init_layer(head_in, kCellFeatureCount, true, rng);
  p.orientation_head = init_layer(head_in + 4, 4, true, rng);
  p.size_head = init_layer(head_in, 2, true, rng);
  // Start the size head at the category mean.
  p.size_head.weight.fill(0.0);
  return m;
}

// ---------------------------------------------------------------------------

EmbedInput embed_input(const SceneGraph& g, const std::vector<int>& placed, int next,
                       const std::vector<double>& cond_vec, const CategoryRegistry& registry) {
  const auto n = static_cast<int>(g.node_count());
  if (next < 0 || next >= n) throw ArgumentError("mixture_embed: node " + std::to_string(next) + " is not in the graph");
  std::vector<bool> in_placed(g.node_count(), false);
  for (int id : placed) {
    if (id < 0 || id >= n) throw ArgumentError("mixture_embed: placed node " + std::to_string(id) + " is not in the graph");
    if (id == next) throw ArgumentError("mixture_embed: next node is already placed");
    in_placed[static_cast<std::size_t>(id)] = true;
  }
  const std::size_t cats = registry.size();
  EmbedInput in;
  in.global_adjacency = Matrix(g.node_count(), g.node_count(), g.adjacency());
  in.global_features = Matrix(g.node_count(), cats);
  for (std::size_t i = 0; i < g.node_count(); ++i) in.global_features(i, registry.index_of(g.nodes[i].category)) = 1.0;

  std::vector<int> local_nodes;
  for (int id = 0; id < n; ++id)
    if (in_placed[static_cast<std::size_t>(id)] || id == next) local_nodes.push_back(id);
  std::vector<int> local_index(g.node_count(), -1);
  for (std::size_t i = 0; i < local_nodes.size(); ++i) local_index[static_cast<std::size_t>(local_nodes[i])] = static_cast<int>(i);
  in.local_adjacency = Matrix(local_nodes.size(), local_nodes.size());
  in.local_features = Matrix(local_nodes.size(), cats + 1);
  for (std::size_t i = 0; i < local_nodes.size(); ++i) {
    in.local_features(i, registry.index_of(g.category(local_nodes[i]))) = 1.0;
    if (local_nodes[i] == next) in.local_features(i, cats) = 1.0;
  }
  in.edge_type_counts.assign(kEdgeTypeCount, 0.0);
  for (const auto& e : g.edges) {
    const int a = local_index[static_cast<std::size_t>(e.u)], b = local_index[static_cast<std::size_t>(e.v)];
    if (a < 0 || b < 0) continue;
    in.local_adjacency(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) = 1.0;
    in.local_adjacency(static_cast<std::size_t>(b), static_cast<std::size_t>(a)) = 1.0;
    if (e.u == next || e.v == next) in.edge_type_counts[static_cast<std::size_t>(e.type - 1)] += 1.0;
  }
  in.cond = cond_vec;
  return in;
}

namespace {

struct PooledGcn {
  Matrix a_norm;
  GcnHidden hidden;
  std::vector<double> pooled;
};

PooledGcn pooled_gcn(const Matrix& adjacency, const Matrix& x, const LayerParams& p0, const LayerParams& p1) {
  PooledGcn c;
  c.a_norm = normalize_adjacency(adjacency);
  c.hidden = gcn_hidden(x, c.a_norm, p0.weight);
  c.pooled = row_mean(matmul(c.hidden.ah, p1.weight));
  return c;
}

void pooled_gcn_backward(const PooledGcn& c, const Matrix& x, const LayerParams& p0, const LayerParams& p1,
                         std::span<const double> d_pooled, LayerParams& g0, LayerParams& g1) {
  const std::size_t n = x.rows();
  Matrix d_node(n, d_pooled.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d_pooled.size(); ++k) d_node(i, k) = d_pooled[k] / static_cast<double>(n);
  g1.weight += matmul_tn(c.hidden.ah, d_node);
  gcn_hidden_backward(c.hidden, x, c.a_norm, p0.weight, matmul_nt(d_node, p1.weight), g0.weight);
}

struct EmbedCache {
  PooledGcn global, local;
  Matrix counts;  // 1 x 9
  FnnCache fuse;
  Matrix combined;  // 1 x embed_dim
};

Matrix embed_forward(const EmbedInput& in, const PlacementParams& p, EmbedCache& c) {
  c.global = pooled_gcn(in.global_adjacency, in.global_features, p.global0, p.global1);
  c.local = pooled_gcn(in.local_adjacency, in.local_features, p.local0, p.local1);
  c.counts = Matrix::row_vector(in.edge_type_counts);
  const Matrix edge = matmul(c.counts, p.edge_table.weight);
  std::vector<double> x = c.global.pooled;
  x.insert(x.end(), c.local.pooled.begin(), c.local.pooled.end());
  x.insert(x.end(), edge.data().begin(), edge.data().end());
  x.insert(x.end(), in.cond.begin(), in.cond.end());
  c.combined = fnn_forward_rows(Matrix::row_vector(x), {p.fuse0, p.fuse1}, &c.fuse);
  return c.combined;
}

void embed_backward(const EmbedInput& in, const PlacementParams& p, const EmbedCache& c,
                    const Matrix& d_combined, PlacementParams& g) {
  std::vector<LayerParams> layers{p.fuse0, p.fuse1};
  std::vector<LayerParams> grads{g.fuse0, g.fuse1};
  const Matrix d_x = fnn_backward_rows(c.fuse, layers, d_combined, grads);
  g.fuse0 = std::move(grads[0]);
  g.fuse1 = std::move(grads[1]);
  const auto d = d_x.row(0);
  const std::size_t go = c.global.pooled.size(), lo = c.local.pooled.size(), eo = p.edge_table.weight.cols();
  pooled_gcn_backward(c.global, in.global_features, p.global0, p.global1, d.subspan(0, go), g.global0, g.global1);
  pooled_gcn_backward(c.local, in.local_features, p.local0, p.local1, d.subspan(go, lo), g.local0, g.local1);
  const Matrix d_edge = Matrix::row_vector(d.subspan(go + lo, eo));
  g.edge_table.weight += matmul_tn(c.counts, d_edge);
}

Matrix head_input(const Matrix& combined, std::size_t category, std::size_t cats) {
  Matrix h(1, combined.cols() + cats);
  std::copy(combined.values().begin(), combined.values().end(), h.values().begin());
  h(0, combined.cols() + category) = 1.0;
  return h;
}

Matrix with_facing(const Matrix& h, int facing) {
  Matrix o(1, h.cols() + 4);
  std::copy(h.values().begin(), h.values().end(), o.values().begin());
  o(0, h.cols() + static_cast<std::size_t>(facing)) = 1.0;
  return o;
}

/// Base logits plus feature terms weighted by theta.
Matrix location_logits(const Matrix& base, const Matrix& theta, const Matrix& cell_features) {
  return base + matmul_nt(theta, cell_features);
}

std::vector<double> masked_softmax(std::span<const double> logits, const std::vector<bool>& mask) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!mask[i]) m = std::max(m, logits[i]);
  std::vector<double> p(logits.size(), 0.0);
  if (!std::isfinite(m)) return p;
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!mask[i]) s += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

std::vector<double> mixture_embed(const EmbedInput& input, const PlacementParams& params) {
  EmbedCache c;
  return embed_forward(input, params, c).data();
}

std::vector<double> mixture_embed(const SceneGraph& g, const std::vector<int>& placed, int next,
                                  const std::vector<double>& cond_vec, const PlacementModel& model) {
  return mixture_embed(embed_input(g, placed, next, cond_vec, model.registry), model.params);
}

PlacementDistribution predict_placement(const PlacementModel& model, const std::vector<double>& embed,
                                        CategoryCode category, const Matrix& cell_features,
                                        const std::vector<bool>& mask) {
  const auto& p = model.params;
  const std::size_t cells = model.config.grid * model.config.grid;
  if (mask.size() != cells || cell_features.rows() != cells || cell_features.cols() != kCellFeatureCount)
    throw ArgumentError("predict_placement: grid inputs do not match the model resolution");
  if (std::all_of(mask.begin(), mask.end(), [](bool b) { return b; }))
    throw NoSpaceError("no free grid cell for category " + std::to_string(category));
  const Matrix h = head_input(Matrix::row_vector(embed), model.registry.index_of(category), model.registry.size());
  PlacementDistribution out;
  const Matrix logits = location_logits(affine_rows(h, p.location_head), affine_rows(h, p.feature_head), cell_features);
  out.location = masked_softmax(logits.row(0), mask);
  for (int f = 0; f < 4; ++f) out.orientation_by_facing[static_cast<std::size_t>(f)] = softmax(affine_rows(with_facing(h, f), p.orientation_head).row(0));
  const Matrix s = affine_rows(h, p.size_head);
  const SizeStats& st = model.stats.at(category);
  auto clip = [](double mean, double sd, double v) {
    return std::clamp(v, std::max(mean - 2.0 * sd, 0.05 * mean), mean + 2.0 * sd);
  };
  out.size = {clip(st.mean.width, st.stddev.width, st.mean.width * std::exp(s(0, 0))),
              clip(st.mean.depth, st.stddev.depth, st.mean.depth * std::exp(s(0, 1)))};
  return out;
}

PlacementLoss placement_objective(const PlacementParams& p, const PlacementExample& ex, PlacementParams* grads) {
  EmbedCache ec;
  const Matrix combined = embed_forward(ex.embed, p, ec);
  const std::size_t cats = p.location_head.weight.rows() - combined.cols();
  const Matrix h = head_input(combined, ex.category, cats);

  PlacementLoss loss;
  // Location: masked softmax cross-entropy.
  const Matrix base = affine_rows(h, p.location_head);
  const Matrix theta = affine_rows(h, p.feature_head);
  const Matrix logits = location_logits(base, theta, ex.cell_features);
  const auto probs = masked_softmax(logits.row(0), ex.mask);
  loss.location = -std::log(std::max(probs[ex.target_cell], 1e-300));
  // Orientation.
  const Matrix ho = with_facing(h, ex.facing);
  const Matrix o_logits = affine_rows(ho, p.orientation_head);
  Matrix d_o(1, 4);
  loss.orientation = cross_entropy(o_logits.row(0), static_cast<std::size_t>(ex.target_orientation), d_o.row(0));
  // Size: squared error in log space.
  const Matrix s = affine_rows(h, p.size_head);
  Matrix d_s(1, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    const double r = s(0, k) - ex.target_log_size[k];
    loss.size += r * r;
    d_s(0, k) = 2.0 * r;
  }
  loss.total = loss.location + loss.orientation + loss.size;
  if (!grads) return loss;

  Matrix d_logits(1, probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c) d_logits(0, c) = probs[c] - (c == ex.target_cell ? 1.0 : 0.0);
  Matrix d_h = affine_backward(h, p.location_head, d_logits, grads->location_head);
  d_h += affine_backward(h, p.feature_head, matmul(d_logits, ex.cell_features), grads->feature_head);
  d_h += affine_backward(h, p.size_head, d_s, grads->size_head);
  const Matrix d_ho = affine_backward(ho, p.orientation_head, d_o, grads->orientation_head);
  for (std::size_t k = 0; k < d_h.cols(); ++k) d_h(0, k) += d_ho(0, k);
  Matrix d_combined(1, combined.cols());
  for (std::size_t k = 0; k < combined.cols(); ++k) d_combined(0, k) = d_h(0, k);
  embed_backward(ex.embed, p, ec, d_combined, *grads);
  return loss;
}

// ---------------------------------------------------------------------------
// Shared placement state for training examples and sampling.

namespace {

struct EdgeTarget {
  int type;
  std::vector<SceneElement> candidates;  // any one satisfying counts
  int node;                              // other endpoint
};

struct StepContext {
  const RoomShell* shell;
  double diagonal;
  const std::vector<FurnitureItem>* placed;
  CategoryCode category;
  SizeStats stats;
  std::vector<EdgeTarget> edges;
};

FurnitureItem make_item(CategoryCode cat, Point2 p, Size2 size, int orientation) {
  return {cat, p, size, direction_from_index(orientation)};
}

bool fits(const StepContext& ctx, const FurnitureItem& item) {
  const Rect fp = item.footprint();
  if (!geom::contains(ctx.shell->boundary, fp)) return false;
  return std::none_of(ctx.placed->begin(), ctx.placed->end(),
                      [&](const FurnitureItem& o) { return geom::overlap_area(fp, o.footprint()) > kOverlapTolerance; });
}

std::size_t satisfied_edges(const StepContext& ctx, Point2 p) {
  const SceneElement self{ctx.category, p, p};
  std::size_t count = 0;
  for (const auto& e : ctx.edges)
    count += std::any_of(e.candidates.begin(), e.candidates.end(),
                         [&](const SceneElement& c) { return predicate_check(self, c, e.type, ctx.diagonal); });
  return count;
}

Matrix cell_features(const StepContext& ctx, const Grid& grid) {
  Matrix f(grid.cells(), kCellFeatureCount);
  const double half_cell = 0.5 * std::hypot(grid.cell_width(), grid.cell_height());
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    const Point2 p = grid.cell_center(c);
    f(c, kPredicateFraction) = ctx.edges.empty() ? 1.0 : static_cast<double>(satisfied_edges(ctx, p)) / static_cast<double>(ctx.edges.size());
    const double dw = wall_distance(*ctx.shell, p);
    f(c, kWallDistance) = dw / ctx.diagonal;
    f(c, kWallHug) = std::abs(dw - ctx.stats.mean.depth / 2.0) <= half_cell ? 1.0 : 0.0;
    double di = ctx.diagonal;
    for (const auto& item : *ctx.placed) di = std::min(di, geom::distance(p, item.position));
    f(c, kItemDistance) = di / ctx.diagonal;
    const int facing = facing_away_from_nearest_wall(*ctx.shell, p);
    f(c, kFitsFacing) = fits(ctx, make_item(ctx.category, p, ctx.stats.mean, facing)) ? 1.0 : 0.0;
    double any = f(c, kFitsFacing);
    for (int o = 0; o < 4 && any == 0.0; ++o)
      if (fits(ctx, make_item(ctx.category, p, ctx.stats.mean, o))) any = 1.0;
    f(c, kFitsAny) = any;
  }
  return f;
}

std::vector<SceneElement> shell_elements(const RoomShell& shell) {
  Scene s;
  s.shell = shell;
  return scene_elements(s);
}

SceneElement item_element(const FurnitureItem& item) { return {item.category, item.position, item.position}; }

}  // namespace

std::vector<PlacementExample> placement_examples(const Scene& scene, const SceneGraph& graph,
                                                 const PlacementModel& model) {
  const auto elements = scene_elements(scene);
  if (elements.size() != graph.node_count())
    throw ArgumentError("placement_examples: graph does not match the scene's elements");
  const std::size_t shell_count = elements.size() - scene.items.size();
  const Grid grid = make_grid(scene.shell, model.config.grid);
  const auto cond_vec = encode_condition(scene.condition, model.schema);

  std::vector<int> placed_nodes;
  for (std::size_t i = 0; i < shell_count; ++i) placed_nodes.push_back(static_cast<int>(i));
  std::vector<bool> is_placed(graph.node_count(), false);
  for (int id : placed_nodes) is_placed[static_cast<std::size_t>(id)] = true;
  std::vector<FurnitureItem> placed_items;

  std::vector<PlacementExample> out;
  for (int next : instantiation_order(graph, model.stats)) {
    const FurnitureItem& item = scene.items[static_cast<std::size_t>(next) - shell_count];
    StepContext ctx{&scene.shell, scene.shell.diagonal(), &placed_items, item.category, model.stats.at(item.category), {}};
    for (const auto& e : graph.incident(next)) {
      const int other = e.u == next ? e.v : e.u;
      if (is_placed[static_cast<std::size_t>(other)])
        ctx.edges.push_back({e.type, {elements[static_cast<std::size_t>(other)]}, other});
    }
    PlacementExample ex;
    ex.embed = embed_input(graph, placed_nodes, next, cond_vec, model.registry);
    ex.category = model.registry.index_of(item.category);
    ex.cell_features = cell_features(ctx, grid);
    ex.mask = occupancy_mask(grid, scene.shell, placed_items);
    ex.target_cell = grid.cell_of(item.position);
    ex.mask[ex.target_cell] = false;
    ex.facing = facing_away_from_nearest_wall(scene.shell, grid.cell_center(ex.target_cell));
    ex.target_orientation = direction_index(item.direction);
    ex.target_log_size = {std::log(item.size.width / ctx.stats.mean.width), std::log(item.size.depth / ctx.stats.mean.depth)};
    out.push_back(std::move(ex));

    placed_nodes.push_back(next);
    is_placed[static_cast<std::size_t>(next)] = true;
    placed_items.push_back(item);
  }
  return out;
}

namespace {

double clip_grads(PlacementParams& g, double max_norm) {
  const ParamList list = g.params();
  double s = 0.0;
  for (const auto& span : list)
    for (double v : span) s += v * v;
  const double n = std::sqrt(s);
  if (max_norm > 0.0 && n > max_norm)
    for (const auto& span : list)
      for (double& v : span) v *= max_norm / n;
  return n;
}

}  // namespace

PlacementModel train_instantiator(const std::vector<Scene>& scenes, const std::vector<SceneGraph>& graphs,
                                  const PlacementConfig& config) {
  if (scenes.empty()) throw ArgumentError("train_instantiator: no scenes");
  if (scenes.size() != graphs.size()) throw ArgumentError("train_instantiator: scenes and graphs differ in count");
  const RoomType room = scenes.front().room_type;
  for (const auto& s : scenes)
    if (s.room_type != room) throw ArgumentError("train_instantiator: scenes mix room types");

  PlacementModel model = init_placement(config, default_schema(room), default_registry(room), compute_category_stats(scenes));
  std::vector<PlacementExample> examples;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto ex = placement_examples(scenes[i], graphs[i], model);
    std::move(ex.begin(), ex.end(), std::back_inserter(examples));
  }

  Rng rng(config.seed ^ 0xc2b2ae3d27d4eb4fULL);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0, location = 0.0;
    for (std::size_t idx : order) {
      PlacementParams grads = model.params.zeros_like();
      const PlacementLoss loss = placement_objective(model.params, examples[idx], &grads);
      if (!std::isfinite(loss.total) || !all_finite(grads.params()))
        throw TrainingError("placement training produced a non-finite loss at epoch " + std::to_string(epoch + 1));
      clip_grads(grads, config.clip_norm);
      sgd_step(model.params.params(), grads.params(), config.learning_rate);
      total += loss.total;
      location += loss.location;
    }
    const double n = examples.empty() ? 1.0 : static_cast<double>(examples.size());
    model.loss_curve.push_back(total / n);
    model.location_curve.push_back(location / n);
  }
  return model;
}

PlacementModel train_instantiator(const std::vector<Scene>& scenes, const PlacementConfig& config) {
  std::vector<SceneGraph> graphs;
  for (const auto& s : scenes) graphs.push_back(scene_to_graph(s));
  return train_instantiator(scenes, graphs, config);
}

// ---------------------------------------------------------------------------

namespace {

struct Attempt {
  FurnitureItem item;
  bool inside = false;
  bool clear = false;  // no overlap with placed items
  std::size_t satisfied = 0;

  bool better_than(const Attempt& o) const {
    return std::tuple(inside, clear, satisfied) > std::tuple(o.inside, o.clear, o.satisfied);
  }
};

Attempt evaluate(const StepContext& ctx, const FurnitureItem& item) {
  Attempt a{item};
  const Rect fp = item.footprint();
  a.inside = geom::contains(ctx.shell->boundary, fp);
  a.clear = std::none_of(ctx.placed->begin(), ctx.placed->end(),
                         [&](const FurnitureItem& o) { return geom::overlap_area(fp, o.footprint()) > kOverlapTolerance; });
  a.satisfied = satisfied_edges(ctx, item.position);
  return a;
}

}  // namespace

namespace {

SampledScene sample_once(const PlacementModel& model, const SceneGraph& g, const ConditionCode& cond,
                         const RoomShell& room, std::uint64_t seed) {
  if (g.condition.room_type != cond.room_type || cond.room_type != model.schema.room_type)
    throw ArgumentError("sample_scene: graph, condition and model disagree on the room type");
  const std::vector<double> cond_vec = encode_condition(cond, model.schema);
  const std::vector<SceneElement> shell_elems = shell_elements(room);
  const double diagonal = room.diagonal();
  const Grid grid = make_grid(room, model.config.grid);
  const std::size_t n = g.node_count();
  Rng rng(seed);

  SampledScene out;
  out.scene = Scene{cond.room_type, room, {}, cond};

  // Graph node -> realized element (shell binding or placed item).
  std::vector<std::optional<std::size_t>> binding(n);
  std::vector<std::size_t> bind_count(shell_elems.size(), 0);
  std::vector<std::optional<std::size_t>> item_of(n);
  std::vector<int> placed_nodes;
  for (std::size_t i = 0; i < n; ++i)
    if (!g.is_object(static_cast<int>(i))) placed_nodes.push_back(static_cast<int>(i));

  auto candidates_for = [&](int node) -> std::vector<SceneElement> {
    const auto id = static_cast<std::size_t>(node);
    if (g.is_object(node)) {
      if (item_of[id]) return {item_element(out.scene.items[*item_of[id]])};
      return {};
    }
    if (binding[id]) return {shell_elems[*binding[id]]};
    std::vector<SceneElement> all;
    for (const auto& e : shell_elems)
      if (e.category == g.category(node)) all.push_back(e);
    return all;
  };

  // Binds an unbound shell node to a satisfying element, preferring free ones.
  auto bind = [&](int node, const SceneElement& self, int type) {
    const auto id = static_cast<std::size_t>(node);
    if (binding[id]) return;
    std::optional<std::size_t> pick;
    for (std::size_t k = 0; k < shell_elems.size(); ++k) {
      if (shell_elems[k].category != g.category(node)) continue;
      if (!predicate_check(self, shell_elems[k], type, diagonal)) continue;
      if (!pick || (bind_count[*pick] > 0 && bind_count[k] == 0)) pick = k;
    }
    if (pick) {
      binding[id] = pick;
      ++bind_count[*pick];
    }
  };

  for (int next : instantiation_order(g, model.stats)) {
    const CategoryCode cat = g.category(next);
    StepContext ctx{&room, diagonal, &out.scene.items, cat, model.stats.at(cat), {}};
    for (const auto& e : g.incident(next)) {
      const int other = e.u == next ? e.v : e.u;
      auto cands = candidates_for(other);
      if (!cands.empty()) ctx.edges.push_back({e.type, std::move(cands), other});
    }
    const std::string node_name = "node " + std::to_string(next) + " (" + model.registry.name_of(cat) + ")";

    const std::vector<bool> mask = occupancy_mask(grid, room, out.scene.items);
    PlacementDistribution dist;
    try {
      dist = predict_placement(model, mixture_embed(g, placed_nodes, next, cond_vec, model), cat,
                               cell_features(ctx, grid), mask);
    } catch (const NoSpaceError&) {
      throw InstantiationError("no free space left for " + node_name);
    }

    const std::size_t all_edges = ctx.edges.size();
    std::optional<Attempt> best, accepted;
    for (std::size_t attempt = 0; attempt < model.config.retries && !accepted; ++attempt) {
      const std::size_t cell = rng.categorical(dist.location);
      const Rect r = grid.cell_rect(cell);
      const Point2 p{rng.uniform(r.min_x, r.max_x), rng.uniform(r.min_y, r.max_y)};
      const int facing = facing_away_from_nearest_wall(room, grid.cell_center(cell));
      const int o = static_cast<int>(rng.categorical(dist.orientation_by_facing[static_cast<std::size_t>(facing)]));
      const Attempt a = evaluate(ctx, make_item(cat, p, dist.size, o));
      if (a.inside && a.clear && a.satisfied == all_edges) accepted = a;
      if (!best || a.better_than(*best)) best = a;
    }

    if (!accepted) {
      // Deterministic sweep over cell centers and contact positions (flush with
      // a wall or a placed item) for every orientation, at the predicted, mean
      // and smallest plausible size. Ranked by validity, then predicates, then
      // model probability.
      const SizeStats& st = ctx.stats;
      const std::vector<Size2> sizes = {
          dist.size, st.mean,
          {std::max(st.mean.width - 2 * st.stddev.width, 0.05 * st.mean.width),
           std::max(st.mean.depth - 2 * st.stddev.depth, 0.05 * st.mean.depth)}};
      std::optional<Attempt> sweep_best;
      double sweep_prob = -1.0;
      for (const Size2& size : sizes)
        for (int o = 0; o < 4; ++o) {
          const Rect fp0 = make_item(cat, {0, 0}, size, o).footprint();
          const double hx = fp0.max_x + 1e-6, hy = fp0.max_y + 1e-6;
          std::vector<double> xs{grid.box.min_x + hx, grid.box.max_x - hx}, ys{grid.box.min_y + hy, grid.box.max_y - hy};
          for (std::size_t k = 0; k < grid.resolution; ++k) {
            xs.push_back(grid.cell_center(k).x);
            ys.push_back(grid.cell_center(k * grid.resolution).y);
          }
          for (const auto& placed : out.scene.items) {
            const Rect f = placed.footprint();
            xs.insert(xs.end(), {f.min_x - hx, f.max_x + hx});
            ys.insert(ys.end(), {f.min_y - hy, f.max_y + hy});
          }
          for (double y : ys)
            for (double x : xs) {
              const Attempt a = evaluate(ctx, make_item(cat, {x, y}, size, o));
              if (!a.inside) continue;
              const std::size_t cell = grid.cell_of({x, y});
              const int facing = facing_away_from_nearest_wall(room, grid.cell_center(cell));
              const double prob = dist.location[cell] *
                                  dist.orientation_by_facing[static_cast<std::size_t>(facing)][static_cast<std::size_t>(o)];
              if (!sweep_best || a.better_than(*sweep_best) ||
                  (!sweep_best->better_than(a) && prob > sweep_prob)) {
                sweep_best = a;
                sweep_prob = prob;
              }
            }
        }
      if (sweep_best) {
        if (sweep_best->clear && sweep_best->satisfied == all_edges) accepted = sweep_best;
        if (!best || sweep_best->better_than(*best)) best = sweep_best;
      }
    }

    const Attempt chosen = accepted ? *accepted : *best;
    if (!accepted) {
      out.geometric_violations += !chosen.inside || !chosen.clear;
      std::string what;
      if (!chosen.inside) what += " outside";
      if (!chosen.clear) what += " overlap";
      if (chosen.satisfied < all_edges)
        what += " predicates " + std::to_string(chosen.satisfied) + "/" + std::to_string(all_edges);
      out.violations.push_back(node_name + ":" + what);
    }

    const SceneElement self = item_element(chosen.item);
    for (const auto& e : ctx.edges)
      if (!g.is_object(e.node)) bind(e.node, self, e.type);
    item_of[static_cast<std::size_t>(next)] = out.scene.items.size();
    out.scene.items.push_back(chosen.item);
    out.item_nodes.push_back(next);
    placed_nodes.push_back(next);
  }

  // Shell nodes still unbound take the element that satisfies most of their edges.
  for (std::size_t id = 0; id < n; ++id) {
    if (g.is_object(static_cast<int>(id)) || binding[id]) continue;
    std::optional<std::size_t> pick;
    std::size_t pick_score = 0;
    for (std::size_t k = 0; k < shell_elems.size(); ++k) {
      if (shell_elems[k].category != g.nodes[id].category) continue;
      std::size_t score = 0;
      for (const auto& e : g.incident(static_cast<int>(id))) {
        const int other = e.u == static_cast<int>(id) ? e.v : e.u;
        if (g.is_object(other) && item_of[static_cast<std::size_t>(other)])
          score += predicate_check(shell_elems[k], item_element(out.scene.items[*item_of[static_cast<std::size_t>(other)]]), e.type, diagonal);
      }
      if (!pick || score > pick_score || (score == pick_score && bind_count[k] == 0 && bind_count[*pick] > 0))
        pick = k, pick_score = score;
    }
    if (pick) {
      binding[id] = pick;
      ++bind_count[*pick];
    }
  }

  auto element_of = [&](int node) -> std::optional<SceneElement> {
    const auto id = static_cast<std::size_t>(node);
    if (g.is_object(node)) {
      if (item_of[id]) return item_element(out.scene.items[*item_of[id]]);
      return std::nullopt;
    }
    if (binding[id]) return shell_elems[*binding[id]];
    return std::nullopt;
  };
  for (const auto& e : g.edges) {
    if (!g.is_object(e.u) && !g.is_object(e.v)) continue;
    const auto a = element_of(e.u), b = element_of(e.v);
    if (!a || !b) continue;  // shell kind absent from this room
    ++out.predicates_checked;
    out.predicates_satisfied += predicate_check(*a, *b, e.type, diagonal);
  }
  return out;
}

}  // namespace

SampledScene sample_scene(const PlacementModel& model, const SceneGraph& g, const ConditionCode& cond,
                          const RoomShell& room, std::uint64_t seed) {
  const auto badness = [](const SampledScene& x) {
    return std::pair(x.geometric_violations, x.predicates_checked - x.predicates_satisfied);
  };
  Rng seeds(seed);
  std::optional<SampledScene> best;
  for (std::size_t round = 0; round <= model.config.scene_restarts; ++round) {
    SampledScene s = sample_once(model, g, cond, room, round == 0 ? seed : seeds.next_seed());
    s.restarts = round;
    if (!best || badness(s) < badness(*best)) best = std::move(s);
    if (best->violations.empty()) break;
  }
  return std::move(*best);
}

// ---------------------------------------------------------------------------

json placement_to_json(const PlacementModel& model) {
  PlacementModel& m = const_cast<PlacementModel&>(model);
  json matrices = json::object();
  write_layers(matrices, m.params.named());
  json stats = json::array();
  for (const auto& [code, s] : model.stats.by_category)
    stats.push_back({{"code", code},
                     {"mean", {s.mean.width, s.mean.depth}},
                     {"stddev", {s.stddev.width, s.stddev.depth}},
                     {"frequency", s.frequency}});
  const auto& c = model.config;
  return {{"format_version", kCheckpointFormatVersion},
          {"kind", "placement"},
          {"config",
           {{"grid", c.grid},
            {"gcn_hidden", c.gcn_hidden},
            {"gcn_out", c.gcn_out},
            {"edge_embed", c.edge_embed},
            {"fusion_hidden", c.fusion_hidden},
            {"embed_dim", c.embed_dim},
            {"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"clip_norm", c.clip_norm},
            {"retries", c.retries},
            {"scene_restarts", c.scene_restarts},
            {"seed", c.seed}}},
          {"schema", to_json(model.schema)},
          {"category_registry", to_json(model.registry)},
          {"category_stats", stats},
          {"matrices", matrices},
          {"loss_curve", model.loss_curve},
          {"location_curve", model.location_curve}};
}

PlacementModel placement_from_json(const json& j) {
  using namespace jsonu;
  require_version(j, kCheckpointFormatVersion, "placement checkpoint");
  if (string_at(j, "kind", "checkpoint") != "placement") throw ParseError("checkpoint.kind", "expected 'placement'");
  const json& cj = field(j, "config", "checkpoint");
  auto count = [&](const char* k) { return static_cast<std::size_t>(integer_at(cj, k, "config")); };
  PlacementConfig c;
  c.grid = count("grid");
  c.gcn_hidden = count("gcn_hidden");
  c.gcn_out = count("gcn_out");
  c.edge_embed = count("edge_embed");
  c.fusion_hidden = count("fusion_hidden");
  c.embed_dim = count("embed_dim");
  c.epochs = count("epochs");
  c.learning_rate = number_at(cj, "learning_rate", "config");
  c.clip_norm = number_at(cj, "clip_norm", "config");
  c.retries = count("retries");
  if (cj.contains("scene_restarts")) c.scene_restarts = count("scene_restarts");
  c.seed = field(cj, "seed", "config").get<std::uint64_t>();

  CategoryStats stats;
  const json& sj = array_at(j, "category_stats", "checkpoint");
  for (std::size_t i = 0; i < sj.size(); ++i) {
    const std::string p = "category_stats[" + std::to_string(i) + "]";
    const json& mean = array_at(sj[i], "mean", p);
    const json& sd = array_at(sj[i], "stddev", p);
    if (mean.size() != 2 || sd.size() != 2) throw ParseError(p, "mean and stddev need two entries");
    stats.by_category[static_cast<CategoryCode>(integer_at(sj[i], "code", p))] = {
        {number(mean[0], p + ".mean"), number(mean[1], p + ".mean")},
        {number(sd[0], p + ".stddev"), number(sd[1], p + ".stddev")},
        static_cast<std::size_t>(integer_at(sj[i], "frequency", p))};
  }
  PlacementModel m = init_placement(c, schema_from_json(field(j, "schema", "checkpoint")),
                                    registry_from_json(field(j, "category_registry", "checkpoint")), stats);
  read_layers(field(j, "matrices", "checkpoint"), m.params.named());
  if (j.contains("loss_curve"))
    for (const auto& v : array_at(j, "loss_curve", "checkpoint")) m.loss_curve.push_back(number(v, "loss_curve"));
  if (j.contains("location_curve"))
    for (const auto& v : array_at(j, "location_curve", "checkpoint")) m.location_curve.push_back(number(v, "location_curve"));
  return m;
}

void save_placement(const PlacementModel& model, const std::string& path) {
  jsonu::write_file(path, placement_to_json(model));
}

PlacementModel load_placement(const std::string& path) { return placement_from_json(jsonu::read_file(path)); }

}  // namespace layoutgen
