#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "layoutgen/spectral.hpp"

namespace layoutgen::testing {

namespace {

// Every weight and bias moved off its initializer so zero-initialized heads
// and biases take part in the checks.
template <typename Params>
void jitter(Params& params, Rng& rng, double scale = 0.2) {
  for (std::span<double> s : params.params())
    for (double& v : s) v += scale * rng.normal();
}

Matrix random_probabilities(std::size_t n, Rng& rng) {
  Matrix p(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) p(i, j) = p(j, i) = rng.uniform(0.05, 0.95);
  return p;
}

CondGenModel small_condgen(RoomType room, Rng& rng) {
  CondGenConfig c;
  c.seed = rng.next_seed();
  CondGenModel m = init_condgen(c, default_schema(room), default_registry(room));
  jitter(m.encoder, rng);
  jitter(m.decoder, rng);
  jitter(m.discriminator, rng);
  return m;
}

RoomType room_for(std::uint64_t seed) { return kAllRoomTypes[seed % kAllRoomTypes.size()]; }

}  // namespace

SceneGraph random_graph(RoomType room, std::size_t n, Rng& rng) {
  if (n < 2) throw ArgumentError("random_graph: need at least two nodes");
  const CategoryRegistry reg = default_registry(room);
  std::vector<CategoryCode> objects;
  for (const auto& e : reg.entries)
    if (!is_shell_code(e.code)) objects.push_back(e.code);

  // At least one object so every node has an admissible partner.
  std::vector<CategoryCode> cats{objects[rng.index(objects.size())]};
  for (std::size_t i = 1; i < n; ++i) {
    const double u = rng.uniform();
    cats.push_back(u < 0.35 ? kWallCode : u < 0.5 ? (rng.uniform() < 0.5 ? kDoorCode : kWindowCode)
                                        : objects[rng.index(objects.size())]);
  }
  std::sort(cats.begin(), cats.end());

  SceneGraph g;
  g.condition = {room, rng.index(default_schema(room).labels.size())};
  for (std::size_t i = 0; i < n; ++i) g.nodes.push_back({static_cast<int>(i), cats[i]});
  auto add = [&](std::size_t a, std::size_t b) {
    const auto sem = semantic_class(cats[a], cats[b]);
    if (!sem) return false;
    const auto bucket = static_cast<DistanceBucket>(1 + static_cast<int>(rng.index(3)));
    g.set_edge(static_cast<int>(a), static_cast<int>(b), edge_type(*sem, bucket));
    return true;
  };
  std::vector<std::size_t> object_ids;
  for (std::size_t i = 0; i < n; ++i)
    if (!is_shell_code(cats[i])) object_ids.push_back(i);
  // Spanning tree: objects chain together, every shell node hangs off an object.
  for (std::size_t k = 1; k < object_ids.size(); ++k) add(object_ids[k - 1], object_ids[k]);
  for (std::size_t i = 0; i < n; ++i)
    if (is_shell_code(cats[i])) add(i, object_ids[rng.index(object_ids.size())]);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (rng.uniform() < 0.3) add(a, b);
  return g;
}

SceneGraph permute_graph(const SceneGraph& g, std::span<const std::size_t> perm) {
  SceneGraph out;
  out.condition = g.condition;
  out.nodes.resize(g.node_count());
  for (std::size_t i = 0; i < g.node_count(); ++i)
    out.nodes[perm[i]] = {static_cast<int>(perm[i]), g.nodes[i].category};
  for (const auto& e : g.edges)
    out.set_edge(static_cast<int>(perm[static_cast<std::size_t>(e.u)]),
                 static_cast<int>(perm[static_cast<std::size_t>(e.v)]), e.type, e.distance);
  return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  rng.shuffle(p);
  return p;
}

bool spectrally_generic(const Matrix& adjacency, std::size_t k, double gap) {
  const std::size_t n = adjacency.rows();
  const SymmetricEigen e = symmetric_eigen(normalized_laplacian(adjacency));
  const std::size_t used = std::min(k + 1, n);
  for (std::size_t i = 1; i < n && i <= used; ++i)
    if (e.values[i] - e.values[i - 1] <= gap) return false;
  for (std::size_t c = 1; c < used; ++c) {
    std::vector<double> mags;
    for (std::size_t r = 0; r < n; ++r) mags.push_back(std::abs(e.vectors(r, c)));
    std::sort(mags.rbegin(), mags.rend());
    if (mags.size() > 1 && mags[0] - mags[1] <= gap) return false;
  }
  return true;
}

std::vector<SceneGraph> generic_graphs(RoomType room, std::size_t count, std::size_t min_n,
                                       std::size_t max_n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SceneGraph> out;
  while (out.size() < count) {
    const std::size_t n = min_n + rng.index(max_n - min_n + 1);
    SceneGraph g = random_graph(room, n, rng);
    if (spectrally_generic(Matrix(n, n, g.adjacency()), k)) out.push_back(std::move(g));
  }
  return out;
}

GradCheckResult encoder_grad_check(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const RoomType room = room_for(seed);
  CondGenModel m = small_condgen(room, rng);
  const TrainingGraph tg = prepare_training_graph(random_graph(room, n, rng), m.schema, m.registry);
  const Matrix noise = ordered_noise(n, m.config.latent_dim, rng);
  return check_gradients(m.encoder, [&](const EncoderParams& enc, EncoderParams* grads) {
    if (grads == nullptr)
      return vae_objective(enc, m.decoder, tg, noise, m.config.spectral_dim, {}, nullptr).total;
    VaeGrads g{enc.zeros_like(), m.decoder.zeros_like()};
    const double loss = vae_objective(enc, m.decoder, tg, noise, m.config.spectral_dim, {}, &g).total;
    *grads = std::move(g.encoder);
    return loss;
  });
}

GradCheckResult decoder_grad_check(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const RoomType room = room_for(seed);
  CondGenModel m = small_condgen(room, rng);
  const TrainingGraph tg = prepare_training_graph(random_graph(room, n, rng), m.schema, m.registry);
  const Matrix noise = ordered_noise(n, m.config.latent_dim, rng);
  return check_gradients(m.decoder, [&](const DecoderParams& dec, DecoderParams* grads) {
    if (grads == nullptr)
      return vae_objective(m.encoder, dec, tg, noise, m.config.spectral_dim, {}, nullptr).total;
    VaeGrads g{m.encoder.zeros_like(), dec.zeros_like()};
    const double loss = vae_objective(m.encoder, dec, tg, noise, m.config.spectral_dim, {}, &g).total;
    *grads = std::move(g.decoder);
    return loss;
  });
}

GradCheckResult discriminator_grad_check(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const RoomType room = room_for(seed);
  CondGenModel m = small_condgen(room, rng);
  const SceneGraph g = random_graph(room, n, rng);
  const Matrix real(n, n, g.adjacency());
  const Matrix fake = random_probabilities(n, rng);
  const auto cond = encode_condition(g.condition, m.schema);
  return check_gradients(m.discriminator, [&](const DiscriminatorParams& d, DiscriminatorParams* grads) {
    return discriminator_objective(d, real, fake, cond, m.config.spectral_dim, grads);
  });
}

GradCheckResult generator_grad_check(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const RoomType room = room_for(seed);
  CondGenModel m = small_condgen(room, rng);
  const std::vector<double> cond = encode_condition({room, 0}, m.schema);
  const Matrix z = ordered_noise(n, m.config.latent_dim, rng);
  const Matrix features = node_features(decode(m.decoder, z, cond).edge_probs, cond, m.config.spectral_dim);
  return check_gradients(m.decoder, [&](const DecoderParams& dec, DecoderParams* grads) {
    return generator_objective(dec, m.discriminator, z, cond, features, m.config.spectral_dim, grads);
  });
}

GradCheckResult placement_grad_check(std::size_t n, std::uint64_t seed, double epsilon) {
  Rng rng(seed);
  const RoomType room = room_for(seed);
  // A 3.6 x 3.0 room without openings: 4 wall nodes and n - 4 objects; n = 4
  // uses a triangular room with a single object.
  Scene scene;
  scene.room_type = room;
  scene.condition = {room, 0};
  const std::size_t walls = n >= 5 ? 4 : 3;
  scene.shell.boundary = walls == 4 ? std::vector<Point2>{{0, 0}, {3.6, 0}, {3.6, 3.0}, {0, 3.0}}
                                    : std::vector<Point2>{{0, 0}, {4.0, 0}, {0, 4.0}};
  const CategoryRegistry reg = default_registry(room);
  std::vector<CategoryCode> objects;
  for (const auto& e : reg.entries)
    if (!is_shell_code(e.code)) objects.push_back(e.code);
  while (scene.items.size() < n - walls) {
    FurnitureItem item;
    item.category = objects[rng.index(objects.size())];
    item.size = {rng.uniform(0.4, 0.9), rng.uniform(0.3, 0.7)};
    item.direction = direction_from_index(static_cast<int>(rng.index(4)));
    item.position = {rng.uniform(0.5, 3.1), rng.uniform(0.5, 2.5)};
    if (walls == 3) item.position = {rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4)};
    Scene trial = scene;
    trial.items.push_back(item);
    const auto report = validate_scene(trial);
    if (report.count(ViolationKind::outside) == 0 && report.count(ViolationKind::overlap) == 0)
      scene = std::move(trial);
  }
  const SceneGraph graph = scene_to_graph(scene);
  PlacementConfig c;
  c.seed = rng.next_seed();
  PlacementModel model = init_placement(c, default_schema(room), reg, compute_category_stats({scene}));
  jitter(model.params, rng);
  const std::vector<PlacementExample> examples = placement_examples(scene, graph, model);
  return check_gradients(model.params, [&](const PlacementParams& p, PlacementParams* grads) {
    double total = 0.0;
    for (const auto& ex : examples) total += placement_objective(p, ex, grads).total;
    return total;
  }, epsilon);
}

GradCheckResult labeler_grad_check(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const RoomType room = room_for(seed);
  LabelerConfig c;
  c.seed = rng.next_seed();
  GraphLabeler l = init_labeler(c, default_schema(room), default_registry(room));
  jitter(l.params, rng);
  const SceneGraph g = random_graph(room, n, rng);
  const Matrix adjacency(n, n, g.adjacency());
  const Matrix features = labeler_features(g, l.registry, c.spectral_dim);
  const std::size_t target = rng.index(l.schema.labels.size());
  return check_gradients(l.params, [&](const LabelerParams& p, LabelerParams* grads) {
    return labeler_objective(p, adjacency, features, target, grads);
  });
}

PermutationReport permutation_check(const CondGenModel& model, const GraphLabeler& labeler,
                                    const SceneGraph& g, std::size_t permutations, Rng& rng) {
  const std::size_t n = g.node_count();
  const auto cond = encode_condition(g.condition, model.schema);
  const Matrix a(n, n, g.adjacency());
  const LatentStats base = encode(model, a, cond);
  const double base_d = discriminate(model, a, cond);
  const auto base_p = labeler_probabilities(labeler, g);
  const std::size_t base_label = predict_label(labeler, g);

  PermutationReport r;
  for (std::size_t t = 0; t < permutations; ++t) {
    const auto perm = random_permutation(n, rng);
    const SceneGraph pg = permute_graph(g, perm);
    const Matrix pa(n, n, pg.adjacency());
    const LatentStats s = encode(model, pa, cond);
    for (std::size_t k = 0; k < s.mu_bar.size(); ++k) {
      r.encoder = std::max(r.encoder, std::abs(s.mu_bar[k] - base.mu_bar[k]));
      r.encoder = std::max(r.encoder, std::abs(s.sigma2_bar[k] - base.sigma2_bar[k]));
    }
    r.discriminator = std::max(r.discriminator, std::abs(discriminate(model, pa, cond) - base_d));
    const auto p = labeler_probabilities(labeler, pg);
    for (std::size_t k = 0; k < p.size(); ++k) r.labeler = std::max(r.labeler, std::abs(p[k] - base_p[k]));
    r.prediction_changed = r.prediction_changed || predict_label(labeler, pg) != base_label;
  }
  return r;
}

}  // namespace layoutgen::testing
