#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "layoutgen/dataset.hpp"
#include "layoutgen/errors.hpp"
#include "layoutgen/instantiate.hpp"
#include "test_support.hpp"

using namespace layoutgen;
namespace lt = layoutgen::testing;

namespace {

Scene box_room(double w, double h) {
  Scene s;
  s.room_type = RoomType::tatami;
  s.condition = {RoomType::tatami, 0};
  s.shell.boundary = {{0, 0}, {w, 0}, {w, h}, {0, h}};
  s.shell.openings = {{OpeningKind::door, 0, 0.5, 0.8}};
  return s;
}

std::multiset<CategoryCode> object_categories(const SceneGraph& g) {
  std::multiset<CategoryCode> out;
  for (int id : g.object_nodes()) out.insert(g.category(id));
  return out;
}

std::multiset<CategoryCode> item_categories(const Scene& s) {
  std::multiset<CategoryCode> out;
  for (const auto& it : s.items) out.insert(it.category);
  return out;
}

struct Trained {
  Dataset data;
  std::vector<SceneGraph> graphs;
  PlacementModel model;
};

// Built once: a lightly trained kitchen model shared by the sampling tests.
const Trained& trained_kitchen() {
  static const Trained t = [] {
    Trained out;
    out.data = synth_dataset(RoomType::kitchen, 15, 4);
    for (const Scene& s : out.data.scenes) out.graphs.push_back(scene_to_graph(s));
    PlacementConfig cfg;
    cfg.epochs = 8;
    cfg.seed = 2;
    out.model = train_instantiator(out.data.scenes, out.graphs, cfg);
    return out;
  }();
  return t;
}

}  // namespace

TEST_CASE("category statistics against a direct computation") {
  const Dataset d = synth_dataset(RoomType::balcony, 20, 1);
  const CategoryStats stats = compute_category_stats(d.scenes);
  std::map<CategoryCode, std::vector<Size2>> sizes;
  for (const Scene& s : d.scenes)
    for (const auto& it : s.items) sizes[it.category].push_back(it.size);
  CHECK(stats.by_category.size() == sizes.size());
  for (const auto& [code, list] : sizes) {
    const double n = static_cast<double>(list.size());
    double mw = 0, md = 0;
    for (const auto& z : list) {
      mw += z.width / n;
      md += z.depth / n;
    }
    double vw = 0, vd = 0;
    for (const auto& z : list) {
      vw += (z.width - mw) * (z.width - mw) / n;
      vd += (z.depth - md) * (z.depth - md) / n;
    }
    const SizeStats& st = stats.at(code);
    CHECK(st.frequency == list.size());
    CHECK(st.mean.width == doctest::Approx(mw).epsilon(1e-12));
    CHECK(st.mean.depth == doctest::Approx(md).epsilon(1e-12));
    CHECK(st.stddev.width == doctest::Approx(std::sqrt(vw)).epsilon(1e-6));
    CHECK(st.stddev.depth == doctest::Approx(std::sqrt(vd)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(stats.at(999), StatsError);
}

TEST_CASE("instantiation order") {
  const CategoryRegistry reg = default_registry(RoomType::tatami);
  const Dataset d = synth_dataset(RoomType::tatami, 30, 2);
  const CategoryStats stats = compute_category_stats(d.scenes);

  SUBCASE("tatami, work-desk, cabinet") {
    SceneGraph g;
    g.nodes = {{0, kWallCode}, {1, reg.code_of("cabinet")}, {2, reg.code_of("work-desk")},
               {3, reg.code_of("tatami")}, {4, kDoorCode}};
    const auto order = instantiation_order(g, stats);
    REQUIRE(order.size() == 3);
    CHECK(g.category(order[0]) == reg.code_of("tatami"));
    CHECK(g.category(order[1]) == reg.code_of("work-desk"));
    CHECK(g.category(order[2]) == reg.code_of("cabinet"));
  }
  SUBCASE("a single object") {
    SceneGraph g;
    g.nodes = {{0, kWallCode}, {1, reg.code_of("cabinet")}};
    CHECK(instantiation_order(g, stats) == std::vector<int>{1});
  }
  SUBCASE("equal areas break ties by category code, then id") {
    CategoryStats tie;
    tie.by_category[7] = {{1.0, 2.0}, {0, 0}, 1};
    tie.by_category[5] = {{2.0, 1.0}, {0, 0}, 1};
    SceneGraph g;
    g.nodes = {{0, 7}, {1, 5}, {2, 7}, {3, kWallCode}};
    CHECK(instantiation_order(g, tie) == std::vector<int>{1, 0, 2});
  }
  SUBCASE("missing statistics") {
    SceneGraph g;
    g.nodes = {{0, 99}};
    CHECK_THROWS_AS(instantiation_order(g, stats), StatsError);
  }
  SUBCASE("a deterministic permutation of the object nodes sorted by area") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const SceneGraph g = lt::random_graph(RoomType::tatami, 4 + rng.index(6), rng);
      const auto order = instantiation_order(g, stats);
      std::vector<int> sorted = order;
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == g.object_nodes());
      for (std::size_t i = 1; i < order.size(); ++i)
        CHECK(stats.at(g.category(order[i - 1])).area() >= stats.at(g.category(order[i])).area());
    }
  }
}

TEST_CASE("predicate_check examples") {
  Scene s = box_room(4, 3);
  const double diag = s.shell.diagonal();
  SceneElement wall{kWallCode, {0, 0}, {4, 0}};

  CHECK(predicate_check(wall, SceneElement{5, {2, 0.2}, {}}, 4, diag));
  CHECK_FALSE(predicate_check(wall, SceneElement{5, {2, 0.2}, {}}, 6, diag));
  CHECK(predicate_check(wall, SceneElement{5, {2, 2.8}, {}}, 6, diag));
  // Wrong semantic class never matches.
  CHECK_FALSE(predicate_check(wall, SceneElement{5, {2, 0.2}, {}}, 7, diag));

  s.items = {{5, {2, 0.3}, {0.6, 0.6}, Direction::d0}};
  // Elements: walls 0..3, door 4, item 5.
  CHECK(predicate_check(s, GraphEdge{0, 4, 1, -1}));
  CHECK_FALSE(predicate_check(s, GraphEdge{0, 4, 3, -1}));
  CHECK(predicate_check(s, GraphEdge{0, 5, 4, -1}));
  CHECK_FALSE(predicate_check(s, GraphEdge{0, 5, 6, -1}));
  CHECK_THROWS_AS(predicate_check(s, GraphEdge{0, 6, 4, -1}), ArgumentError);
}

TEST_CASE("occupancy grid") {
  RoomShell l_shape;
  l_shape.boundary = {{0, 0}, {4, 0}, {4, 2}, {2, 2}, {2, 4}, {0, 4}};
  const Grid grid = make_grid(l_shape, 16);
  CHECK(grid.cells() == 256);
  for (std::size_t c = 0; c < grid.cells(); ++c) CHECK(grid.cell_of(grid.cell_center(c)) == c);

  const FurnitureItem item{4, {1, 1}, {1.0, 0.5}, Direction::d90};
  const auto mask = occupancy_mask(grid, l_shape, {item});
  const Rect fp = item.footprint();
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    const Point2 p = grid.cell_center(c);
    const bool outside = p.x > 2 && p.y > 2;
    const Rect r = grid.cell_rect(c);
    const bool covered = std::min(r.max_x, fp.max_x) > std::max(r.min_x, fp.min_x) &&
                         std::min(r.max_y, fp.max_y) > std::max(r.min_y, fp.min_y);
    CHECK(mask[c] == (outside || covered));
  }
  CHECK_THROWS_AS(make_grid(l_shape, 0), ArgumentError);

  const RoomShell box = box_room(4, 3).shell;
  CHECK(facing_away_from_nearest_wall(box, {2, 0.1}) == 0);    // faces +y
  CHECK(facing_away_from_nearest_wall(box, {2, 2.9}) == 2);    // faces -y
  CHECK(facing_away_from_nearest_wall(box, {0.1, 1.5}) == 3);  // faces +x
  CHECK(facing_away_from_nearest_wall(box, {3.9, 1.5}) == 1);  // faces -x
}

TEST_CASE("mixture embedding") {
  const auto schema = default_schema(RoomType::tatami);
  const auto reg = default_registry(RoomType::tatami);
  const Dataset d = synth_dataset(RoomType::tatami, 5, 3);
  PlacementModel model = init_placement({}, schema, reg, compute_category_stats(d.scenes));
  const auto cond = encode_condition({RoomType::tatami, 1}, schema);
  Rng rng(4);

  SUBCASE("invariant to node relabeling") {
    for (int trial = 0; trial < 20; ++trial) {
      const SceneGraph g = lt::random_graph(RoomType::tatami, 5 + rng.index(4), rng);
      const auto objects = g.object_nodes();
      REQUIRE_FALSE(objects.empty());
      const int next = objects.back();
      std::vector<int> placed;
      for (const auto& n : g.nodes)
        if (n.id != next && (is_shell_code(n.category) || rng.uniform() < 0.5)) placed.push_back(n.id);
      const auto base = mixture_embed(g, placed, next, cond, model);
      REQUIRE(base.size() == model.config.embed_dim);

      const auto perm = lt::random_permutation(g.node_count(), rng);
      const SceneGraph h = lt::permute_graph(g, perm);
      std::vector<int> placed2;
      for (int id : placed) placed2.push_back(static_cast<int>(perm[static_cast<std::size_t>(id)]));
      const auto moved = mixture_embed(h, placed2, static_cast<int>(perm[static_cast<std::size_t>(next)]), cond, model);
      for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(moved[i] - base[i]) <= 1e-8);
    }
  }
  SUBCASE("zero fusion weights give a zero vector") {
    PlacementParams p = model.params;
    p.fuse0 = p.fuse0.zeros_like();
    p.fuse1 = p.fuse1.zeros_like();
    const SceneGraph g = lt::random_graph(RoomType::tatami, 6, rng);
    std::vector<int> shell_nodes;
    for (const auto& n : g.nodes)
      if (is_shell_code(n.category)) shell_nodes.push_back(n.id);
    const auto e = mixture_embed(embed_input(g, shell_nodes, g.object_nodes().front(), cond, reg), p);
    for (double v : e) CHECK(v == 0.0);
  }
  SUBCASE("no edges to placed nodes means no edge-type counts") {
    SceneGraph g;
    g.nodes = {{0, kWallCode}, {1, 4}, {2, 5}};
    g.set_edge(0, 1, 4);
    const EmbedInput in = embed_input(g, {0, 1}, 2, cond, reg);
    for (double v : in.edge_type_counts) CHECK(v == 0.0);
    const EmbedInput linked = embed_input(g, {0, 2}, 1, cond, reg);
    CHECK(linked.edge_type_counts[3] == 1.0);
  }
  SUBCASE("bad node ids") {
    SceneGraph g;
    g.nodes = {{0, kWallCode}, {1, 4}};
    CHECK_THROWS_AS(embed_input(g, {0}, 7, cond, reg), ArgumentError);
    CHECK_THROWS_AS(embed_input(g, {0, 1}, 1, cond, reg), ArgumentError);
  }
}

TEST_CASE("predict_placement") {
  const auto schema = default_schema(RoomType::tatami);
  const auto reg = default_registry(RoomType::tatami);
  const Dataset d = synth_dataset(RoomType::tatami, 5, 3);
  PlacementModel model = init_placement({}, schema, reg, compute_category_stats(d.scenes));
  model.params.location_head = model.params.location_head.zeros_like();
  model.params.feature_head = model.params.feature_head.zeros_like();
  model.params.size_head = model.params.size_head.zeros_like();
  const std::size_t cells = model.config.grid * model.config.grid;
  const std::vector<double> embed(model.config.embed_dim, 0.3);
  Rng rng(5);
  Matrix features(cells, kCellFeatureCount);
  for (double& v : features.values()) v = rng.uniform();
  const CategoryCode desk = reg.code_of("work-desk");

  std::vector<bool> mask(cells, false);
  for (std::size_t c = 0; c < cells; c += 2) mask[c] = true;
  const PlacementDistribution p = predict_placement(model, embed, desk, features, mask);
  for (std::size_t c = 0; c < cells; ++c) {
    if (mask[c]) CHECK(p.location[c] == 0.0);
    else CHECK(p.location[c] == doctest::Approx(2.0 / static_cast<double>(cells)).epsilon(1e-12));
  }
  CHECK(p.size == model.stats.at(desk).mean);
  for (const auto& o : p.orientation_by_facing) {
    double total = 0;
    for (double v : o) total += v;
    CHECK(total == doctest::Approx(1.0));
  }

  std::fill(mask.begin(), mask.end(), true);
  CHECK_THROWS_AS(predict_placement(model, embed, desk, features, mask), NoSpaceError);
  CHECK_THROWS_AS(predict_placement(model, embed, desk, features, std::vector<bool>(3, false)), ArgumentError);
}

TEST_CASE("placement gradient checks") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    CAPTURE(seed);
    CHECK(lt::placement_grad_check(4 + seed % 5, seed).max_rel_error < 1e-4);
  }
}

TEST_CASE("placement training contract") {
  const Trained& t = trained_kitchen();

  SUBCASE("lr = 0 leaves parameters unchanged") {
    PlacementConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 0.0;
    PlacementModel m = train_instantiator(t.data.scenes, t.graphs, cfg);
    PlacementModel fresh = init_placement(cfg, t.data.schema, t.data.registry, compute_category_stats(t.data.scenes));
    CHECK(flatten(m.params.params()) == flatten(fresh.params.params()));
  }
  SUBCASE("deterministic and the location loss falls") {
    PlacementConfig cfg;
    cfg.epochs = 8;
    cfg.seed = 2;
    const PlacementModel again = train_instantiator(t.data.scenes, t.graphs, cfg);
    CHECK(placement_to_json(again).dump() == placement_to_json(t.model).dump());
    REQUIRE(t.model.location_curve.size() == 8);
    CHECK(t.model.location_curve.back() < t.model.location_curve.front());
  }
  SUBCASE("mismatched inputs") {
    std::vector<SceneGraph> fewer(t.graphs.begin(), t.graphs.end() - 1);
    CHECK_THROWS_AS(train_instantiator(t.data.scenes, fewer, PlacementConfig{}), ArgumentError);
  }
}

TEST_CASE("sample_scene") {
  const Trained& t = trained_kitchen();
  const RoomShell shell = default_shell(RoomType::kitchen);

  SUBCASE("deterministic, complete and labeled") {
    for (std::size_t i = 0; i < 12; ++i) {
      const SceneGraph& g = t.graphs[i * 2];
      const ConditionCode cond = g.condition;
      const SampledScene a = sample_scene(t.model, g, cond, shell, 100 + i);
      const SampledScene b = sample_scene(t.model, g, cond, shell, 100 + i);
      CHECK(a.scene == b.scene);
      CHECK(a.violations == b.violations);
      CHECK(item_categories(a.scene) == object_categories(g));
      REQUIRE(a.item_nodes.size() == a.scene.items.size());
      std::set<int> nodes(a.item_nodes.begin(), a.item_nodes.end());
      CHECK(nodes.size() == a.item_nodes.size());
      for (std::size_t k = 0; k < a.item_nodes.size(); ++k)
        CHECK(g.category(a.item_nodes[k]) == a.scene.items[k].category);
      CHECK(a.scene.shell == shell);
      CHECK(a.scene.condition == cond);
      CHECK(a.predicates_satisfied <= a.predicates_checked);
      CHECK(a.restarts <= t.model.config.scene_restarts);
      if (a.violations.empty()) CHECK(validate_scene(a.scene).ok());
    }
  }
  SUBCASE("an empty graph gives the shell alone") {
    SceneGraph g;
    g.nodes = {{0, kWallCode}, {1, kDoorCode}};
    g.condition = {RoomType::kitchen, 0};
    g.set_edge(0, 1, 1);
    const SampledScene s = sample_scene(t.model, g, {RoomType::kitchen, 0}, shell, 1);
    CHECK(s.scene.items.empty());
    CHECK(s.scene.shell == shell);
  }
  SUBCASE("unknown category") {
    SceneGraph g;
    g.nodes = {{0, kWallCode}, {1, 99}};
    g.condition = {RoomType::kitchen, 0};
    CHECK_THROWS(sample_scene(t.model, g, {RoomType::kitchen, 0}, shell, 1));
  }
  SUBCASE("checkpoint round trip") {
    const auto path = std::filesystem::temp_directory_path() / "layoutgen_test_placement.json";
    save_placement(t.model, path.string());
    const PlacementModel back = load_placement(path.string());
    CHECK(placement_to_json(back).dump() == placement_to_json(t.model).dump());
    CHECK(back.config.scene_restarts == t.model.config.scene_restarts);
    const SceneGraph& g = t.graphs[3];
    CHECK(sample_scene(back, g, g.condition, shell, 7).scene == sample_scene(t.model, g, g.condition, shell, 7).scene);

    auto j = placement_to_json(t.model);
    j["format_version"] = 5;
    CHECK_THROWS_AS(placement_from_json(j), VersionError);
  }
}
