// Acceptance suite. Prints one PASS/FAIL line per criterion on stdout, progress
// on stderr, and exits non-zero when any criterion fails.
//
//   acceptance            run every criterion
//   acceptance C2 C6      run a subset (C5 and C7 train the C1 models if needed)

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <fmt/format.h>

#include "layoutgen/dataset.hpp"
#include "layoutgen/graph.hpp"
#include "layoutgen/service.hpp"
#include "test_support.hpp"

using namespace layoutgen;
namespace lt = layoutgen::testing;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

std::string room_name(RoomType t) { return std::string(to_string(t)); }

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

// ---------------------------------------------------------------------------
// C1: the generation-accuracy experiment

constexpr std::size_t kScenesPerLabel = 200;
constexpr std::size_t kGeneratedPerLabel = 100;
constexpr std::uint64_t kDataSeed = 2024;

struct RoomRun {
  RoomType room;
  Dataset data;
  std::vector<SceneGraph> graphs;
  CondGenModel model;
  GraphLabeler labeler;
  AccuracyReport accuracy;
  std::string fingerprint;  // checkpoints plus every generated graph
};

struct ExperimentRun {
  std::vector<RoomRun> rooms;
  double seconds = 0.0;
};

ExperimentRun run_experiment() {
  ExperimentRun run;
  const auto start = Clock::now();
  for (const RoomType room : kAllRoomTypes) {
    RoomRun r{room, synth_dataset(room, kScenesPerLabel, kDataSeed), {}, {}, {}, {}, {}};
    std::vector<std::vector<GraphEdge>> relations;
    for (const Scene& s : r.data.scenes) {
      r.graphs.push_back(scene_to_graph(s));
      relations.push_back(extract_graph(s).edges);
    }
    r.model = train_condgen(r.graphs, r.data.schema, r.data.registry, CondGenConfig{}, relations);
    r.labeler = train_labeler(r.graphs, r.data.schema, r.data.registry, LabelerConfig{});

    std::ostringstream fp;
    fp << condgen_to_json(r.model).dump() << labeler_to_json(r.labeler).dump();
    std::vector<std::pair<SceneGraph, std::size_t>> generated;
    Rng seeds(7);
    for (std::size_t l = 0; l < r.data.schema.labels.size(); ++l)
      for (std::size_t i = 0; i < kGeneratedPerLabel; ++i) {
        SceneGraph g = generate(r.model, {room, l}, seeds.next_seed());
        fp << to_json(g).dump();
        generated.emplace_back(std::move(g), l);
      }
    r.accuracy = acc_g(r.labeler, generated);
    r.fingerprint = fp.str();
    std::cerr << fmt::format("  {}: ACC_G {:.4f} (heldout labeler accuracy {:.3f}) at {:.0f} s\n", room_name(room),
                             r.accuracy.averaged, r.labeler.heldout_accuracy, seconds_since(start));
    run.rooms.push_back(std::move(r));
  }
  run.seconds = seconds_since(start);
  return run;
}

std::optional<ExperimentRun> g_experiment;

const ExperimentRun& experiment_models() {
  if (!g_experiment) {
    std::cerr << "training the C1 models\n";
    g_experiment = run_experiment();
  }
  return *g_experiment;
}

Outcome criterion_accuracy() {
  Outcome o;
  std::cerr << "C1 run 1\n";
  g_experiment = run_experiment();
  std::cerr << "C1 run 2\n";
  const ExperimentRun second = run_experiment();
  for (std::size_t i = 0; i < g_experiment->rooms.size(); ++i) {
    const RoomRun& r = g_experiment->rooms[i];
    std::string per_label;
    for (double v : r.accuracy.per_label) per_label += fmt::format("{}{:.2f}", per_label.empty() ? "" : "/", v);
    o.note(fmt::format("{} ACC_G={:.3f} ({})", room_name(r.room), r.accuracy.averaged, per_label));
    o.require(r.accuracy.averaged >= 0.80, room_name(r.room) + " ACC_G >= 0.80");
    o.require(r.fingerprint == second.rooms[i].fingerprint, room_name(r.room) + " identical across runs");
  }
  o.note(fmt::format("runtime {:.0f} s and {:.0f} s", g_experiment->seconds, second.seconds));
  o.require(g_experiment->seconds <= 900.0 && second.seconds <= 900.0, "runtime <= 15 min");
  return o;
}

// ---------------------------------------------------------------------------
// C2: finite-difference gradients

Outcome criterion_gradients() {
  Outcome o;
  const std::vector<std::pair<std::string, std::function<GradCheckResult(std::size_t, std::uint64_t)>>> parts{
      {"encoder", lt::encoder_grad_check},
      {"decoder", lt::decoder_grad_check},
      {"discriminator", lt::discriminator_grad_check},
      {"generator", lt::generator_grad_check},
      {"placement", [](std::size_t n, std::uint64_t s) { return lt::placement_grad_check(n, s); }},
      {"labeler", lt::labeler_grad_check}};
  for (const auto& [name, check] : parts) {
    double worst = 0.0;
    std::size_t one_sided = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const GradCheckResult r = check(4 + i % 5, 5000 + i);
      worst = std::max(worst, r.max_rel_error);
      one_sided += r.one_sided;
    }
    o.note(fmt::format("{} {:.1e}{}", name, worst, one_sided ? fmt::format(" ({} kink coords)", one_sided) : ""));
    o.require(worst < 1e-4, name + " max rel error < 1e-4");
  }
  return o;
}

// ---------------------------------------------------------------------------
// C3: node-permutation invariance

Outcome criterion_permutation() {
  Outcome o;
  const ExperimentRun& run = experiment_models();
  double enc = 0, disc = 0, lab = 0;
  std::size_t graphs = 0;
  bool changed = false;
  for (const RoomRun& r : run.rooms) {
    Rng rng(31);
    for (const SceneGraph& g : lt::generic_graphs(r.room, 20, 5, 12, r.model.config.spectral_dim, 17)) {
      const lt::PermutationReport rep = lt::permutation_check(r.model, r.labeler, g, 50, rng);
      enc = std::max(enc, rep.encoder);
      disc = std::max(disc, rep.discriminator);
      lab = std::max(lab, rep.labeler);
      changed = changed || rep.prediction_changed;
      ++graphs;
    }
  }
  o.note(fmt::format("{} graphs x 50 permutations: encoder {:.1e}, discriminator {:.1e}, labeler {:.1e}", graphs,
                     enc, disc, lab));
  o.require(enc <= 1e-8, "encoder pooled output");
  o.require(disc <= 1e-8, "discriminator score");
  o.require(lab <= 1e-8, "labeler probabilities");
  o.require(!changed, "labeler prediction unchanged");
  return o;
}

// ---------------------------------------------------------------------------
// C4: relation extraction

// Independent connectivity oracle: union-find over the edge list.
bool connected_oracle(const SceneGraph& g) {
  std::vector<std::size_t> parent(g.node_count());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (const auto& e : g.edges) parent[find(static_cast<std::size_t>(e.u))] = find(static_cast<std::size_t>(e.v));
  std::set<std::size_t> roots;
  for (std::size_t i = 0; i < parent.size(); ++i) roots.insert(find(i));
  return roots.size() <= 1;
}

Outcome criterion_extraction() {
  Outcome o;
  std::set<int> types;
  bool inverse_ok = true;
  for (int s = 1; s <= 3; ++s)
    for (int d = 1; d <= 3; ++d) {
      const int t = edge_type(static_cast<SemanticClass>(s), static_cast<DistanceBucket>(d));
      types.insert(t);
      inverse_ok = inverse_ok && static_cast<int>(semantic_class_of_type(t)) == s &&
                   static_cast<int>(bucket_of_type(t)) == d;
    }
  o.require(types == std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9} && inverse_ok, "edge_type bijective onto 1..9");

  // Wall along y = 0 of a room with diagonal 5: distances 1.5 (middle) and 2.5 (further).
  const SceneGraph door =
      extract_graph(std::vector<SceneElement>{{kWallCode, {0, 0}, {4, 0}}, {kDoorCode, {2, 1.5}, {}}}, 5.0,
                    {RoomType::tatami, 0});
  const SceneGraph object =
      extract_graph(std::vector<SceneElement>{{kWallCode, {0, 0}, {4, 0}}, {kFirstObjectCode, {2, 2.5}, {}}}, 5.0,
                    {RoomType::tatami, 0});
  o.require(door.edges.size() == 1 && door.edges[0].type == 2, "wall-door-middle -> 2");
  o.require(object.edges.size() == 1 && object.edges[0].type == 6, "wall-object-further -> 6");

  std::size_t not_idempotent = 0, disconnected = 0, scenes = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const RoomType room = kAllRoomTypes[i % 3];
    const std::size_t labels = default_schema(room).labels.size();
    const Scene scene = synth_scene(room, {room, (i / 3) % labels}, 90000 + i);
    const SceneGraph pruned = prune_graph(extract_graph(scene));
    not_idempotent += !(prune_graph(pruned) == pruned);
    disconnected += !connected_oracle(scene_to_graph(scene));
    ++scenes;
  }
  o.note(fmt::format("{} scenes: {} not idempotent, {} disconnected", scenes, not_idempotent, disconnected));
  o.require(not_idempotent == 0, "prune idempotent");
  o.require(disconnected == 0, "scene graphs connected");
  return o;
}

// ---------------------------------------------------------------------------
// C5: instantiation

double polygon_area(const std::vector<Point2>& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point2& u = p[i];
    const Point2& v = p[(i + 1) % p.size()];
    a += u.x * v.y - v.x * u.y;
  }
  return std::abs(a) / 2.0;
}

// Area of polygon ∩ rectangle: Sutherland-Hodgman clipping against the four
// rectangle half-planes, valid for any simple subject polygon.
double clipped_area(std::vector<Point2> poly, double x0, double y0, double x1, double y1) {
  auto clip = [&](auto inside, auto cross) {
    std::vector<Point2> out;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point2 a = poly[i], b = poly[(i + 1) % poly.size()];
      if (inside(b)) {
        if (!inside(a)) out.push_back(cross(a, b));
        out.push_back(b);
      } else if (inside(a)) {
        out.push_back(cross(a, b));
      }
    }
    poly = std::move(out);
  };
  auto at_x = [](double x) {
    return [x](Point2 a, Point2 b) { return Point2{x, a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)}; };
  };
  auto at_y = [](double y) {
    return [y](Point2 a, Point2 b) { return Point2{a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y), y}; };
  };
  clip([&](Point2 p) { return p.x >= x0; }, at_x(x0));
  clip([&](Point2 p) { return p.x <= x1; }, at_x(x1));
  clip([&](Point2 p) { return p.y >= y0; }, at_y(y0));
  clip([&](Point2 p) { return p.y <= y1; }, at_y(y1));
  return poly.size() < 3 ? 0.0 : polygon_area(poly);
}

struct Box {
  double x0, y0, x1, y1;
};

// Footprint recomputed from position, size and direction: width and depth swap at 90/270.
Box box_of(const FurnitureItem& it) {
  const bool swapped = direction_index(it.direction) % 2 == 1;
  const double hw = (swapped ? it.size.depth : it.size.width) / 2.0;
  const double hd = (swapped ? it.size.width : it.size.depth) / 2.0;
  return {it.position.x - hw, it.position.y - hd, it.position.x + hw, it.position.y + hd};
}

double overlap(const Box& a, const Box& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0 && h > 0 ? w * h : 0.0;
}

double diagonal_oracle(const std::vector<Point2>& p) {
  double x0 = p[0].x, x1 = p[0].x, y0 = p[0].y, y1 = p[0].y;
  for (const Point2& q : p) {
    x0 = std::min(x0, q.x), x1 = std::max(x1, q.x), y0 = std::min(y0, q.y), y1 = std::max(y1, q.y);
  }
  return std::hypot(x1 - x0, y1 - y0);
}

constexpr std::size_t kSampledScenes = 100;

Outcome criterion_instantiation() {
  Outcome o;
  const ExperimentRun& run = experiment_models();
  for (const RoomRun& r : run.rooms) {
    const auto start = Clock::now();
    PlacementConfig pc;
    pc.epochs = 100;
    const PlacementModel placement = train_instantiator(r.data.scenes, r.graphs, pc);

    std::size_t outside = 0, overlapping = 0, multiset_ok = 0, oo_checked = 0, oo_held = 0;
    double satisfaction = 0.0;
    const std::size_t labels = r.data.schema.labels.size();
    Rng seeds(11);
    for (std::size_t i = 0; i < kSampledScenes; ++i) {
      const ConditionCode cond{r.room, i % labels};
      const SceneGraph g = generate(r.model, cond, seeds.next_seed());
      // Shell of a held real scene with the same label.
      const Scene& source = r.data.scenes[cond.label_index * kScenesPerLabel + i / labels];
      const SampledScene s = sample_scene(placement, g, cond, source.shell, seeds.next_seed());

      const auto& boundary = s.scene.shell.boundary;
      double worst_overlap = 0.0;
      std::vector<Box> boxes;
      for (const auto& it : s.scene.items) {
        const Box b = box_of(it);
        const double area = (b.x1 - b.x0) * (b.y1 - b.y0);
        outside += clipped_area(boundary, b.x0, b.y0, b.x1, b.y1) < area - 1e-9;
        for (const Box& other : boxes) worst_overlap = std::max(worst_overlap, overlap(b, other));
        boxes.push_back(b);
      }
      overlapping += worst_overlap > 1e-6;

      std::multiset<CategoryCode> items, objects;
      for (const auto& it : s.scene.items) items.insert(it.category);
      for (int id : g.object_nodes()) objects.insert(g.category(id));
      bool nodes_ok = s.item_nodes.size() == s.scene.items.size() &&
                      std::set<int>(s.item_nodes.begin(), s.item_nodes.end()).size() == s.item_nodes.size();
      for (std::size_t k = 0; nodes_ok && k < s.item_nodes.size(); ++k)
        nodes_ok = g.category(s.item_nodes[k]) == s.scene.items[k].category;
      multiset_ok += items == objects && nodes_ok;

      satisfaction += s.satisfaction_rate();

      // Object-object predicates re-judged from the realized centroids.
      std::map<int, std::size_t> item_of;
      for (std::size_t k = 0; k < s.item_nodes.size(); ++k) item_of[s.item_nodes[k]] = k;
      const double diag = diagonal_oracle(boundary);
      for (const auto& e : g.edges) {
        if (!item_of.count(e.u) || !item_of.count(e.v)) continue;
        const Point2 a = s.scene.items[item_of[e.u]].position, b = s.scene.items[item_of[e.v]].position;
        const double d = std::hypot(a.x - b.x, a.y - b.y);
        const int bucket = d < 0.15 * diag ? 1 : d < 0.40 * diag ? 2 : 3;
        ++oo_checked;
        oo_held += 6 + bucket == e.type;
      }
    }
    const double n = static_cast<double>(kSampledScenes);
    const double clean = 1.0 - static_cast<double>(overlapping) / n;
    const double sat = satisfaction / n;
    o.note(fmt::format("{}: outside {}, overlap-free {:.0f}%, satisfaction {:.3f} (object-object oracle {:.3f}), "
                       "multiset {}/{} in {:.0f} s",
                       room_name(r.room), outside, 100 * clean, sat,
                       oo_checked ? static_cast<double>(oo_held) / static_cast<double>(oo_checked) : 1.0,
                       multiset_ok, kSampledScenes, seconds_since(start)));
    o.require(outside == 0, room_name(r.room) + " no item outside");
    o.require(clean >= 0.99, room_name(r.room) + " overlap-free >= 99%");
    o.require(sat >= 0.95, room_name(r.room) + " satisfaction >= 0.95");
    o.require(multiset_ok == kSampledScenes, room_name(r.room) + " category multiset");
    std::cerr << "  " << room_name(r.room) << " done\n";
  }
  return o;
}

// ---------------------------------------------------------------------------
// C6: loss identities

Outcome criterion_losses() {
  Outcome o;
  o.require(std::abs(gan_loss(0.5, 0.5) + 2.0 * std::numbers::ln2) <= 1e-12, "gan_loss(0.5, 0.5) = -2 ln 2");

  double worst_uniform = 0.0, worst_perfect = 0.0;
  Rng rng(8);
  for (std::size_t trial = 0; trial < 10; ++trial) {
    const RoomType room = kAllRoomTypes[trial % 3];
    const SceneGraph g = lt::random_graph(room, 4 + trial % 5, rng);
    const auto schema = default_schema(room);
    const auto registry = default_registry(room);
    const TrainingGraph tg = prepare_training_graph(g, schema, registry);
    const std::size_t m = g.node_count();
    const double pairs = static_cast<double>(m * (m - 1) / 2);
    const LatentStats unit{std::vector<double>(4, 0.0), std::vector<double>(4, 1.0)};

    const DecodeOutput uniform{Matrix(m, m, 0.5), Matrix(m, registry.size(), 1.0 / static_cast<double>(registry.size())),
                               Matrix(m * m, kEdgeTypeCount, 1.0 / kEdgeTypeCount)};
    worst_uniform =
        std::max(worst_uniform, std::abs(vae_loss(uniform, unit, tg.targets, {0.0, 0.0}).edge_bce - pairs * std::numbers::ln2));

    DecodeOutput perfect{tg.targets.adjacency, Matrix(m, registry.size()), Matrix(m * m, kEdgeTypeCount)};
    for (std::size_t i = 0; i < m; ++i) perfect.node_cat_probs(i, tg.targets.categories[i]) = 1.0;
    for (const auto& e : tg.targets.typed_edges)
      perfect.edge_type_probs(static_cast<std::size_t>(e.u) * m + static_cast<std::size_t>(e.v),
                              static_cast<std::size_t>(e.type - 1)) = 1.0;
    worst_perfect = std::max(worst_perfect, std::abs(vae_loss(perfect, unit, tg.targets).total));
  }
  o.note(fmt::format("uniform BCE error {:.1e}, perfect reconstruction loss {:.1e}", worst_uniform, worst_perfect));
  o.require(worst_uniform <= 1e-9, "uniform-0.5 BCE = P ln 2");
  o.require(worst_perfect <= 1e-5, "vae_loss -> 0 under perfect reconstruction");

  const std::vector<double> t1{0.82, 0.83, 0.79, 0.78}, t2{0.83, 0.85, 0.84}, t3{0.88, 0.84};
  o.require(std::abs(average_accuracy(t1) - 0.805) <= 1e-12 && std::abs(average_accuracy(t2) - 0.84) <= 1e-12 &&
                std::abs(average_accuracy(t3) - 0.86) <= 1e-12,
            "table aggregation");
  return o;
}

// ---------------------------------------------------------------------------
// C7: HTTP service contract

std::string response_problem(const json& body) {
  for (const char* key : {"format_version", "seed", "label", "scene", "graph", "item_nodes",
                          "predicate_satisfaction", "violations"})
    if (!body.contains(key)) return std::string("missing ") + key;
  try {
    const Scene scene = scene_from_json(body["scene"]);
    const SceneGraph graph = graph_from_json(body["graph"]);
    std::multiset<CategoryCode> items, objects;
    for (const auto& it : scene.items) items.insert(it.category);
    for (int id : graph.object_nodes()) objects.insert(graph.category(id));
    if (items != objects) return "scene and graph categories differ";
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

Outcome criterion_service() {
  Outcome o;
  const ExperimentRun& run = experiment_models();
  std::vector<RoomModels> models;
  for (const RoomRun& r : run.rooms) {
    PlacementConfig pc;
    pc.epochs = 20;
    models.push_back({r.model, train_instantiator(r.data.scenes, r.graphs, pc)});
  }
  const LayoutService service(std::move(models));

  httplib::Server server;
  install_routes(server, service, "*");
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(30, 0);

  double slowest = 0.0;
  for (const RoomRun& r : run.rooms) {
    for (const std::string& label : r.data.schema.labels) {
      const std::string body =
          json{{"room_type", room_name(r.room)}, {"label", label}, {"seed", 123}}.dump();
      const auto t = Clock::now();
      auto a = client.Post("/api/v1/generate", body, "application/json");
      slowest = std::max(slowest, seconds_since(t));
      auto b = client.Post("/api/v1/generate", body, "application/json");
      const bool ok = a && b && a->status == 200 && b->status == 200;
      o.require(ok, room_name(r.room) + "/" + label + " returns 200");
      if (!ok) continue;
      const std::string problem = response_problem(json::parse(a->body));
      o.require(problem.empty(), room_name(r.room) + "/" + label + " schema-valid: " + problem);
      o.require(a->body == b->body, room_name(r.room) + "/" + label + " seed-deterministic");
    }
  }
  o.note(fmt::format("slowest /generate {:.3f} s", slowest));
  o.require(slowest < 2.0, "response < 2 s");

  auto bad = client.Post("/api/v1/generate", R"({"room_type":"kitchen","label":"flying","seed":1})",
                         "application/json");
  o.require(bad && bad->status == 422, "invalid label -> 422");
  o.note("no UI involved");

  server.stop();
  worker.join();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::tuple<std::string, std::string, std::function<Outcome()>>> criteria{
      {"C1", "generation accuracy experiment", criterion_accuracy},
      {"C2", "gradient suite", criterion_gradients},
      {"C3", "permutation suite", criterion_permutation},
      {"C4", "extraction suite", criterion_extraction},
      {"C5", "instantiation suite", criterion_instantiation},
      {"C6", "loss identities", criterion_losses},
      {"C7", "service contract", criterion_service}};

  std::set<std::string> selected(argv + 1, argv + argc);
  bool all_passed = true;
  for (const auto& [id, name, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    std::cerr << id << " " << name << "\n";
    const auto start = Clock::now();
    Outcome outcome;
    try {
      outcome = run();
    } catch (const std::exception& e) {
      outcome.require(false, std::string("exception: ") + e.what());
    }
    all_passed = all_passed && outcome.pass;
    std::cout << fmt::format("{} {} {}: {} [{:.0f} s]", outcome.pass ? "PASS" : "FAIL", id, name, outcome.detail,
                             seconds_since(start))
              << std::endl;
  }
  return all_passed ? 0 : 1;
}
