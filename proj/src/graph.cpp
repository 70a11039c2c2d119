#include "layoutgen/graph.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

#include "layoutgen/dataset.hpp"
#include "layoutgen/errors.hpp"

namespace layoutgen {

using nlohmann::json;

DistanceBucket distance_bucket(double distance, double room_diagonal) {
  if (!(room_diagonal > 0.0)) throw ArgumentError("room diagonal must be positive");
  if (!(distance >= 0.0)) throw ArgumentError("distance must be non-negative");
  if (distance < kNearFraction * room_diagonal) return DistanceBucket::near;
  if (distance < kMiddleFraction * room_diagonal) return DistanceBucket::middle;
  return DistanceBucket::further;
}

int edge_type(SemanticClass sem, DistanceBucket dist) {
  return 3 * (static_cast<int>(sem) - 1) + static_cast<int>(dist);
}

SemanticClass semantic_class_of_type(int type) {
  if (type < 1 || type > kEdgeTypeCount) throw ArgumentError("edge type out of range");
  return static_cast<SemanticClass>((type - 1) / 3 + 1);
}

DistanceBucket bucket_of_type(int type) {
  if (type < 1 || type > kEdgeTypeCount) throw ArgumentError("edge type out of range");
  return static_cast<DistanceBucket>((type - 1) % 3 + 1);
}

std::optional<SemanticClass> semantic_class(CategoryCode a, CategoryCode b) {
  const bool wall_a = a == kWallCode, wall_b = b == kWallCode;
  const bool open_a = is_opening_code(a), open_b = is_opening_code(b);
  if (wall_a && wall_b) return std::nullopt;
  if (open_a && open_b) return std::nullopt;
  if ((wall_a && open_b) || (open_a && wall_b)) return SemanticClass::wall_opening;
  if (wall_a || wall_b || open_a || open_b) return SemanticClass::wall_object;
  return SemanticClass::object_object;
}

// ---------------------------------------------------------------------------

std::vector<int> SceneGraph::object_nodes() const {
  std::vector<int> out;
  for (const auto& n : nodes)
    if (!is_shell_code(n.category)) out.push_back(n.id);
  return out;
}

std::optional<GraphEdge> SceneGraph::find_edge(int a, int b) const {
  const int u = std::min(a, b), v = std::max(a, b);
  const auto it = std::lower_bound(edges.begin(), edges.end(), std::pair{u, v},
                                   [](const GraphEdge& e, const std::pair<int, int>& key) {
                                     return std::pair{e.u, e.v} < key;
                                   });
  if (it != edges.end() && it->u == u && it->v == v) return *it;
  return std::nullopt;
}

void SceneGraph::set_edge(int a, int b, int type, double distance) {
  const GraphEdge e{std::min(a, b), std::max(a, b), type, distance};
  const auto it = std::lower_bound(edges.begin(), edges.end(), e, [](const auto& x, const auto& y) {
    return std::pair{x.u, x.v} < std::pair{y.u, y.v};
  });
  if (it != edges.end() && it->u == e.u && it->v == e.v) *it = e;
  else edges.insert(it, e);
}

std::vector<GraphEdge> SceneGraph::incident(int id) const {
  std::vector<GraphEdge> out;
  for (const auto& e : edges)
    if (e.u == id || e.v == id) out.push_back(e);
  return out;
}

std::vector<double> SceneGraph::adjacency() const {
  const std::size_t n = nodes.size();
  std::vector<double> a(n * n, 0.0);
  for (const auto& e : edges) {
    a[static_cast<std::size_t>(e.u) * n + static_cast<std::size_t>(e.v)] = 1.0;
    a[static_cast<std::size_t>(e.v) * n + static_cast<std::size_t>(e.u)] = 1.0;
  }
  return a;
}

namespace {

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    return true;
  }
};

DisjointSets components_of(const SceneGraph& g) {
  DisjointSets ds(g.nodes.size());
  for (const auto& e : g.edges) ds.unite(e.u, e.v);
  return ds;
}

}  // namespace

std::size_t SceneGraph::component_count() const {
  DisjointSets ds = components_of(*this);
  std::size_t count = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (ds.find(static_cast<int>(i)) == static_cast<int>(i)) ++count;
  return count;
}

bool SceneGraph::connected() const { return component_count() <= 1; }

void check_graph(const SceneGraph& g) {
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (g.nodes[i].id != static_cast<int>(i))
      throw ArgumentError("node ids must be dense 0..n-1 (node " + std::to_string(i) + ")");
  const int n = static_cast<int>(g.nodes.size());
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto& e = g.edges[i];
    const std::string where = "edge " + std::to_string(i);
    if (e.u < 0 || e.v >= n || e.u >= n || e.v < 0) throw ArgumentError(where + ": unknown node");
    if (e.u == e.v) throw ArgumentError(where + ": self-loop");
    if (e.u > e.v) throw ArgumentError(where + ": endpoints not ordered");
    if (e.type < 1 || e.type > kEdgeTypeCount) throw ArgumentError(where + ": type not in 1..9");
    if (i > 0 && std::pair{g.edges[i - 1].u, g.edges[i - 1].v} >= std::pair{e.u, e.v})
      throw ArgumentError(where + ": duplicate or unsorted edge");
  }
}

json to_json(const SceneGraph& g) {
  json nodes = json::array(), edges = json::array();
  for (const auto& n : g.nodes) nodes.push_back({n.id, n.category});
  for (const auto& e : g.edges) edges.push_back({e.u, e.v, e.type});
  return {{"format_version", kGraphFormatVersion},
          {"condition", to_json(g.condition)},
          {"nodes", nodes},
          {"edges", edges}};
}

SceneGraph graph_from_json(const json& j, const std::string& path) {
  using namespace jsonu;
  require_version(j, kGraphFormatVersion, path);
  SceneGraph g;
  g.condition = condition_from_json(field(j, "condition", path), path + ".condition");
  const json& nodes = array_at(j, "nodes", path);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string p = path + ".nodes[" + std::to_string(i) + "]";
    if (!nodes[i].is_array() || nodes[i].size() != 2) throw ParseError(p, "expected [id, category]");
    g.nodes.push_back({static_cast<int>(integer(nodes[i][0], p + "[0]")),
                       static_cast<CategoryCode>(integer(nodes[i][1], p + "[1]"))});
  }
  const json& edges = array_at(j, "edges", path);
  std::vector<GraphEdge> parsed;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string p = path + ".edges[" + std::to_string(i) + "]";
    if (!edges[i].is_array() || edges[i].size() != 3) throw ParseError(p, "expected [u, v, type]");
    const int a = static_cast<int>(integer(edges[i][0], p + "[0]"));
    const int b = static_cast<int>(integer(edges[i][1], p + "[1]"));
    parsed.push_back({std::min(a, b), std::max(a, b), static_cast<int>(integer(edges[i][2], p + "[2]"))});
  }
  std::sort(parsed.begin(), parsed.end(),
            [](const auto& x, const auto& y) { return std::pair{x.u, x.v} < std::pair{y.u, y.v}; });
  g.edges = std::move(parsed);
  try {
    check_graph(g);
  } catch (const ArgumentError& e) {
    throw ParseError(path, e.what());
  }
  return g;
}

void save_graph_dataset(const GraphDataset& d, const std::string& path) {
  json graphs = json::array();
  for (const auto& g : d.graphs) graphs.push_back(to_json(g));
  json out = {{"format_version", kGraphFormatVersion},
              {"room_type", to_string(d.room_type)},
              {"condition_schema", to_json(d.schema)},
              {"category_registry", to_json(d.registry)},
              {"graphs", graphs}};
  if (!d.relations.empty()) {
    if (d.relations.size() != d.graphs.size())
      throw ArgumentError("graph dataset: relations must parallel the graphs");
    json rel = json::array();
    for (const auto& edges : d.relations) {
      json list = json::array();
      for (const auto& e : edges) list.push_back({e.u, e.v, e.type});
      rel.push_back(std::move(list));
    }
    out["relations"] = std::move(rel);
  }
  jsonu::write_file(path, out);
}

GraphDataset load_graph_dataset(const std::string& path) {
  using namespace jsonu;
  const json j = read_file(path);
  require_version(j, kGraphFormatVersion, "graph dataset");
  GraphDataset d;
  d.schema = schema_from_json(field(j, "condition_schema", "graph dataset"), "condition_schema");
  d.room_type = d.schema.room_type;
  d.registry = registry_from_json(field(j, "category_registry", "graph dataset"));
  const json& graphs = array_at(j, "graphs", "graph dataset");
  for (std::size_t i = 0; i < graphs.size(); ++i)
    d.graphs.push_back(graph_from_json(graphs[i], "graphs[" + std::to_string(i) + "]"));
  if (j.contains("relations")) {
    const json& rel = array_at(j, "relations", "graph dataset");
    if (rel.size() != d.graphs.size())
      throw ParseError("relations", "expected one entry per graph");
    for (std::size_t i = 0; i < rel.size(); ++i) {
      const std::string p = "relations[" + std::to_string(i) + "]";
      const auto n = static_cast<long long>(d.graphs[i].node_count());
      std::vector<GraphEdge> edges;
      for (std::size_t k = 0; k < array(rel[i], p).size(); ++k) {
        const std::string q = p + "[" + std::to_string(k) + "]";
        const json& e = rel[i][k];
        if (!e.is_array() || e.size() != 3) throw ParseError(q, "expected [u, v, type]");
        const long long u = integer(e[0], q), v = integer(e[1], q), t = integer(e[2], q);
        if (u < 0 || v < 0 || u >= n || v >= n || u >= v || t < 1 || t > kEdgeTypeCount)
          throw ParseError(q, "edge out of range");
        edges.push_back({static_cast<int>(u), static_cast<int>(v), static_cast<int>(t)});
      }
      d.relations.push_back(std::move(edges));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------

std::vector<SceneElement> scene_elements(const Scene& scene) {
  std::vector<SceneElement> out;
  const RoomShell& shell = scene.shell;
  for (std::size_t i = 0; i < shell.wall_count(); ++i)
    out.push_back({kWallCode, shell.wall_start(i), shell.wall_end(i)});
  for (const auto& o : shell.openings) {
    const Point2 c = shell.opening_center(o);
    out.push_back({o.kind == OpeningKind::door ? kDoorCode : kWindowCode, c, c});
  }
  for (const auto& item : scene.items) out.push_back({item.category, item.position, item.position});
  return out;
}

double element_distance(const SceneElement& a, const SceneElement& b) {
  if (a.is_wall() && b.is_wall())
    return std::min({geom::point_segment_distance(a.a, b.a, b.b),
                     geom::point_segment_distance(a.b, b.a, b.b),
                     geom::point_segment_distance(b.a, a.a, a.b),
                     geom::point_segment_distance(b.b, a.a, a.b)});
  if (a.is_wall()) return geom::point_segment_distance(b.a, a.a, a.b);
  if (b.is_wall()) return geom::point_segment_distance(a.a, b.a, b.b);
  return geom::distance(a.a, b.a);
}

SceneGraph extract_graph(const std::vector<SceneElement>& elements, double room_diagonal,
                         const ConditionCode& condition) {
  SceneGraph g;
  g.condition = condition;
  for (std::size_t i = 0; i < elements.size(); ++i)
    g.nodes.push_back({static_cast<int>(i), elements[i].category});
  for (std::size_t i = 0; i < elements.size(); ++i)
    for (std::size_t j = i + 1; j < elements.size(); ++j) {
      const auto sem = semantic_class(elements[i].category, elements[j].category);
      if (!sem) continue;
      const double d = element_distance(elements[i], elements[j]);
      g.edges.push_back({static_cast<int>(i), static_cast<int>(j),
                         edge_type(*sem, distance_bucket(d, room_diagonal)), d});
    }
  return g;
}

SceneGraph extract_graph(const Scene& scene) {
  const ValidationReport report = validate_scene(scene);
  for (const auto& v : report.violations)
    if (v.kind != ViolationKind::empty)
      throw ExtractionError("cannot extract graph from invalid scene: " +
                            std::string(to_string(v.kind)) + " (" + v.detail + ")");
  return extract_graph(scene_elements(scene), scene.shell.diagonal(), scene.condition);
}

SceneGraph prune_graph(const SceneGraph& g) {
  std::vector<GraphEdge> candidates;
  for (const auto& e : g.edges) {
    const bool wall_wall = g.category(e.u) == kWallCode && g.category(e.v) == kWallCode;
    if (wall_wall || bucket_of_type(e.type) == DistanceBucket::further) continue;
    candidates.push_back(e);
  }

  // For each node, the index of its closest candidate edge towards a neighbor
  // satisfying `want`; ties broken by neighbor id.
  std::vector<bool> keep(candidates.size(), false);
  auto select_closest = [&](int node, auto want) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& e = candidates[i];
      if (e.u != node && e.v != node) continue;
      const int other = e.u == node ? e.v : e.u;
      if (!want(g.category(other))) continue;
      if (!best) {
        best = i;
        continue;
      }
      const auto& b = candidates[*best];
      const int best_other = b.u == node ? b.v : b.u;
      if (std::tie(e.distance, other) < std::tie(b.distance, best_other)) best = i;
    }
    if (best) keep[*best] = true;
  };

  const auto is_wall = [](CategoryCode c) { return c == kWallCode; };
  const auto is_object = [](CategoryCode c) { return !is_shell_code(c); };
  for (const auto& n : g.nodes) {
    if (is_opening_code(n.category)) {
      select_closest(n.id, is_wall);
      select_closest(n.id, is_object);
    } else if (is_object(n.category)) {
      select_closest(n.id, is_object);
      select_closest(n.id, is_opening_code);
    }
  }

  SceneGraph out{g.nodes, {}, g.condition};
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (keep[i]) out.edges.push_back(candidates[i]);
  return out;
}

SceneGraph ensure_connectivity(const SceneGraph& g, const PairDistance& distance,
                               double room_diagonal) {
  SceneGraph out = g;
  const int n = static_cast<int>(g.nodes.size());
  DisjointSets ds = components_of(out);
  while (true) {
    std::optional<std::tuple<double, int, int>> best;
    for (int u = 0; u < n; ++u)
      for (int v = u + 1; v < n; ++v) {
        if (ds.find(u) == ds.find(v)) continue;
        if (!semantic_class(out.category(u), out.category(v))) continue;
        const std::tuple<double, int, int> cand{distance(u, v), u, v};
        if (!best || cand < *best) best = cand;
      }
    if (!best) break;
    const auto [d, u, v] = *best;
    const auto sem = *semantic_class(out.category(u), out.category(v));
    out.set_edge(u, v, edge_type(sem, distance_bucket(d, room_diagonal)), d);
    ds.unite(u, v);
  }
  return out;
}

SceneGraph ensure_connectivity(const SceneGraph& g, const Scene& scene) {
  const auto elements = scene_elements(scene);
  if (elements.size() != g.nodes.size())
    throw ArgumentError("graph does not belong to the scene (node count mismatch)");
  return ensure_connectivity(
      g,
      [&](int u, int v) {
        return element_distance(elements[static_cast<std::size_t>(u)],
                                elements[static_cast<std::size_t>(v)]);
      },
      scene.shell.diagonal());
}

SceneGraph scene_to_graph(const Scene& scene) {
  return ensure_connectivity(prune_graph(extract_graph(scene)), scene);
}

}  // namespace layoutgen
