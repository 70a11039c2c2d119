#include "layoutgen/condgen.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <numeric>
#include <optional>

#include "layoutgen/dataset.hpp"
#include "layoutgen/errors.hpp"
#include "layoutgen/spectral.hpp"

namespace layoutgen {

using nlohmann::json;

namespace {

ParamList collect(std::vector<std::pair<std::string, LayerParams*>> named) {
  ParamList list;
  for (auto& [name, layer] : named) append_params(list, *layer);
  return list;
}

double norm_of(const ParamList& list) {
  double s = 0.0;
  for (const auto& span : list)
    for (double v : span) s += v * v;
  return std::sqrt(s);
}

void scale(const ParamList& list, double factor) {
  for (const auto& span : list)
    for (double& v : span) v *= factor;
}

void clip(const ParamList& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = norm_of(grads);
  if (n > max_norm) scale(grads, max_norm / n);
}

std::vector<LayerParams> zeros_like(const std::vector<LayerParams>& layers) {
  std::vector<LayerParams> out;
  for (const auto& l : layers) out.push_back(l.zeros_like());
  return out;
}

void require_cond(std::span<const double> cond_vec, std::size_t expected, const char* what) {
  if (cond_vec.size() != expected)
    throw ArgumentError(std::string(what) + ": condition vector has " +
                        std::to_string(cond_vec.size()) + " entries, expected " +
                        std::to_string(expected));
}

}  // namespace

std::vector<std::pair<std::string, LayerParams*>> EncoderParams::named() {
  return {{"encoder.shared", &shared}, {"encoder.mean_head", &mean_head},
          {"encoder.std_head", &std_head}};
}
ParamList EncoderParams::params() { return collect(named()); }
EncoderParams EncoderParams::zeros_like() const {
  return {shared.zeros_like(), mean_head.zeros_like(), std_head.zeros_like()};
}

std::vector<std::pair<std::string, LayerParams*>> DecoderParams::named() {
  std::vector<std::pair<std::string, LayerParams*>> out;
  for (std::size_t i = 0; i < f.size(); ++i) out.push_back({"decoder.f" + std::to_string(i), &f[i]});
  out.push_back({"decoder.category_head", &category_head});
  out.push_back({"decoder.edge_type_head", &edge_type_head});
  return out;
}
ParamList DecoderParams::params() { return collect(named()); }
DecoderParams DecoderParams::zeros_like() const {
  return {layoutgen::zeros_like(f), category_head.zeros_like(), edge_type_head.zeros_like()};
}

std::vector<std::pair<std::string, LayerParams*>> DiscriminatorParams::named() {
  std::vector<std::pair<std::string, LayerParams*>> out{{"discriminator.g0", &g0},
                                                        {"discriminator.g1", &g1}};
  for (std::size_t i = 0; i < f.size(); ++i)
    out.push_back({"discriminator.f" + std::to_string(i), &f[i]});
  return out;
}
ParamList DiscriminatorParams::params() { return collect(named()); }
DiscriminatorParams DiscriminatorParams::zeros_like() const {
  return {g0.zeros_like(), g1.zeros_like(), layoutgen::zeros_like(f)};
}

CondGenModel init_condgen(const CondGenConfig& c, const ConditionSchema& schema,
                          const CategoryRegistry& registry) {
  if (schema.labels.empty()) throw ArgumentError("init_condgen: empty schema");
  if (registry.size() == 0) throw ArgumentError("init_condgen: empty category registry");
  CondGenModel m;
  m.config = c;
  m.schema = schema;
  m.registry = registry;
  const std::size_t cdim = schema.labels.size();
  const std::size_t in = c.spectral_dim + cdim;
  Rng rng(c.seed);
  m.encoder.shared = init_layer(in, c.encoder_hidden, false, rng);
  m.encoder.mean_head = init_layer(c.encoder_hidden, c.latent_dim, false, rng);
  m.encoder.std_head = init_layer(c.encoder_hidden, c.latent_dim, false, rng);
  m.decoder.f = {init_layer(c.latent_dim + cdim, c.decoder_hidden, true, rng),
                 init_layer(c.decoder_hidden, c.feature_dim, true, rng)};
  m.decoder.category_head = init_layer(c.feature_dim, registry.size(), true, rng);
  m.decoder.edge_type_head = init_layer(c.feature_dim, kEdgeTypeCount, true, rng);
  m.discriminator.g0 = init_layer(in, c.disc_hidden, false, rng);
  m.discriminator.g1 = init_layer(c.disc_hidden, c.disc_pooled, false, rng);
  m.discriminator.f = {init_layer(c.disc_pooled, c.disc_fnn_hidden, true, rng),
                       init_layer(c.disc_fnn_hidden, 1, true, rng)};
  m.node_count_histograms.assign(cdim, {});
  return m;
}

// ---------------------------------------------------------------------------

Matrix node_features(const Matrix& adjacency, std::span<const double> cond_vec,
                     std::size_t spectral_dim) {
  return append_to_rows(spectral_embedding(adjacency, spectral_dim), cond_vec);
}

LatentStats encode(const EncoderParams& enc, const Matrix& adjacency,
                   std::span<const double> cond_vec, std::size_t spectral_dim,
                   EncoderCache* cache) {
  if (adjacency.rows() == 0) throw ArgumentError("encode: empty graph");
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.features = node_features(adjacency, cond_vec, spectral_dim);
  c.a_norm = normalize_adjacency(adjacency);
  c.hidden = gcn_hidden(c.features, c.a_norm, enc.shared.weight);
  c.mean_rows = matmul(c.hidden.ah, enc.mean_head.weight);
  c.std_rows = matmul(c.hidden.ah, enc.std_head.weight);

  const double n = static_cast<double>(adjacency.rows());
  LatentStats s{row_mean(c.mean_rows), std::vector<double>(c.std_rows.cols(), 0.0)};
  for (std::size_t i = 0; i < c.std_rows.rows(); ++i)
    for (std::size_t d = 0; d < c.std_rows.cols(); ++d)
      s.sigma2_bar[d] += c.std_rows(i, d) * c.std_rows(i, d);
  c.floored.assign(s.sigma2_bar.size(), false);
  for (std::size_t d = 0; d < s.sigma2_bar.size(); ++d) {
    s.sigma2_bar[d] /= n * n;
    if (s.sigma2_bar[d] < kVarianceFloor) {
      s.sigma2_bar[d] = kVarianceFloor;
      c.floored[d] = true;
    }
  }
  return s;
}

LatentStats encode(const CondGenModel& model, const Matrix& adjacency,
                   std::span<const double> cond_vec) {
  require_cond(cond_vec, model.condition_dim(), "encode");
  return encode(model.encoder, adjacency, cond_vec, model.config.spectral_dim);
}

Matrix sample_latents(const LatentStats& stats, std::size_t m, std::uint64_t seed) {
  if (m == 0) throw ArgumentError("sample_latents: m must be at least 1");
  Rng rng(seed);
  Matrix noise(m, stats.mu_bar.size());
  for (double& v : noise.values()) v = rng.normal();
  return reparameterize(stats, noise);
}

Matrix ordered_noise(std::size_t m, std::size_t dim, Rng& rng, std::size_t strata) {
  if (strata == 0) strata = m;
  if (strata < m) throw ArgumentError("ordered_noise: fewer strata than rows");
  Matrix noise(m, dim);
  for (std::size_t i = 0; i < m; ++i) {
    const double u = rng.uniform();
    const double p = std::clamp((static_cast<double>(i) + u) / static_cast<double>(strata), 1e-12,
                                1.0 - 1e-12);
    noise(i, 0) = std::sqrt(2.0) * boost::math::erf_inv(2.0 * p - 1.0);
    for (std::size_t d = 1; d < dim; ++d) noise(i, d) = rng.normal();
  }
  return noise;
}

std::size_t max_node_count(const CondGenModel& model, std::size_t label) {
  const auto& hist = model.node_count_histograms.at(label);
  return hist.empty() ? 1 : hist.rbegin()->first;
}

Matrix reparameterize(const LatentStats& stats, const Matrix& noise) {
  if (noise.cols() != stats.mu_bar.size()) throw ArgumentError("reparameterize: width mismatch");
  Matrix z(noise.rows(), noise.cols());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t d = 0; d < z.cols(); ++d)
      z(i, d) = stats.mu_bar[d] + std::sqrt(stats.sigma2_bar[d]) * noise(i, d);
  return z;
}

namespace {

Matrix decoder_features(const DecoderParams& dec, const Matrix& z, std::span<const double> cond_vec,
                        DecoderCache& c) {
  c.input = append_to_rows(z, cond_vec);
  c.features = fnn_forward_rows(c.input, dec.f, &c.fnn);
  c.scores = matmul_nt(c.features, c.features);
  c.cat_logits = affine_rows(c.features, dec.category_head);
  return c.features;
}

Matrix edge_probs_from_scores(const Matrix& scores) {
  Matrix p(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j) p(i, j) = i == j ? 0.0 : sigmoid(scores(i, j));
  return p;
}

std::vector<double> pair_product(const Matrix& h, std::size_t i, std::size_t j) {
  std::vector<double> e(h.cols());
  for (std::size_t k = 0; k < h.cols(); ++k) e[k] = h(i, k) * h(j, k);
  return e;
}

std::vector<double> edge_type_logits(const DecoderParams& dec, const Matrix& h, std::size_t i,
                                     std::size_t j) {
  const Matrix e = Matrix::row_vector(pair_product(h, i, j));
  return affine_rows(e, dec.edge_type_head).data();
}

}  // namespace

DecodeOutput decode(const DecoderParams& dec, const Matrix& z, std::span<const double> cond_vec,
                    DecoderCache* cache) {
  DecoderCache local;
  DecoderCache& c = cache ? *cache : local;
  const Matrix h = decoder_features(dec, z, cond_vec, c);
  const std::size_t m = z.rows();
  DecodeOutput out;
  out.edge_probs = edge_probs_from_scores(c.scores);
  out.node_cat_probs = Matrix(m, c.cat_logits.cols());
  for (std::size_t i = 0; i < m; ++i) {
    const auto p = softmax(c.cat_logits.row(i));
    std::copy(p.begin(), p.end(), out.node_cat_probs.row(i).begin());
  }
  out.edge_type_probs = Matrix(m * m, kEdgeTypeCount);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const auto p = softmax(edge_type_logits(dec, h, i, j));
      std::copy(p.begin(), p.end(), out.edge_type_probs.row(i * m + j).begin());
    }
  return out;
}

VaeLoss vae_loss(const DecodeOutput& out, const LatentStats& stats, const VaeTargets& t,
                 const VaeWeights& w) {
  const std::size_t m = out.edge_probs.rows();
  if (t.adjacency.rows() != m || t.categories.size() != m)
    throw ArgumentError("vae_loss: targets do not match decoded size");
  VaeLoss loss;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) loss.edge_bce += bce(out.edge_probs(i, j), t.adjacency(i, j));
  for (std::size_t i = 0; i < m; ++i)
    loss.category_ce -= std::log(std::max(out.node_cat_probs(i, t.categories[i]), kProbClamp));
  for (const auto& e : t.typed_edges) {
    const auto row = static_cast<std::size_t>(e.u) * m + static_cast<std::size_t>(e.v);
    loss.edge_type_ce -=
        std::log(std::max(out.edge_type_probs(row, static_cast<std::size_t>(e.type - 1)), kProbClamp));
  }
  loss.recon = loss.edge_bce + w.category * loss.category_ce + w.edge_type * loss.edge_type_ce;
  loss.prior = kl_gaussian(stats.mu_bar, stats.sigma2_bar);
  loss.total = loss.recon + loss.prior;
  return loss;
}

double discriminate(const DiscriminatorParams& disc, const Matrix& adjacency,
                    std::span<const double> cond_vec, std::size_t spectral_dim,
                    DiscriminatorCache* cache, const Matrix* features) {
  if (adjacency.rows() == 0) throw ArgumentError("discriminate: empty graph");
  DiscriminatorCache local;
  DiscriminatorCache& c = cache ? *cache : local;
  c.features = features ? *features : node_features(adjacency, cond_vec, spectral_dim);
  c.a_norm = normalize_adjacency(adjacency);
  c.hidden = gcn_hidden(c.features, c.a_norm, disc.g0.weight);
  c.node_out = matmul(c.hidden.ah, disc.g1.weight);
  const Matrix pooled = Matrix::row_vector(row_mean(c.node_out));
  const Matrix logit = fnn_forward_rows(pooled, disc.f, &c.fnn);
  c.prob = sigmoid(logit(0, 0));
  return c.prob;
}

double discriminate(const CondGenModel& model, const Matrix& adjacency,
                    std::span<const double> cond_vec) {
  require_cond(cond_vec, model.condition_dim(), "discriminate");
  return discriminate(model.discriminator, adjacency, cond_vec, model.config.spectral_dim);
}

double gan_loss(double d_real, double d_fake) {
  const double r = std::clamp(d_real, kProbClamp, 1.0 - kProbClamp);
  const double f = std::clamp(d_fake, kProbClamp, 1.0 - kProbClamp);
  return std::log(r) + std::log(1.0 - f);
}

// ---------------------------------------------------------------------------

TrainingGraph prepare_training_graph(const SceneGraph& g, const ConditionSchema& schema,
                                     const CategoryRegistry& registry,
                                     const std::vector<GraphEdge>* relations) {
  const std::size_t n = g.node_count();
  if (n == 0) throw ArgumentError("training graph has no nodes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return g.nodes[a].category < g.nodes[b].category;
  });
  std::vector<int> position(n);
  for (std::size_t i = 0; i < n; ++i) position[order[i]] = static_cast<int>(i);

  TrainingGraph t;
  t.label = g.condition.label_index;
  t.cond_vec = encode_condition(g.condition, schema);
  t.targets.adjacency = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t.targets.categories.push_back(registry.index_of(g.nodes[order[i]].category));
  for (const auto& e : g.edges) {
    const int a = position[static_cast<std::size_t>(e.u)], b = position[static_cast<std::size_t>(e.v)];
    t.targets.adjacency(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) = 1.0;
    t.targets.adjacency(static_cast<std::size_t>(b), static_cast<std::size_t>(a)) = 1.0;
  }
  for (const auto& e : relations ? *relations : g.edges) {
    if (e.u < 0 || e.v < 0 || static_cast<std::size_t>(e.u) >= n || static_cast<std::size_t>(e.v) >= n)
      throw ArgumentError("training relation refers to a node outside the graph");
    const int a = position[static_cast<std::size_t>(e.u)], b = position[static_cast<std::size_t>(e.v)];
    t.targets.typed_edges.push_back({std::min(a, b), std::max(a, b), e.type, e.distance});
  }
  std::sort(t.targets.typed_edges.begin(), t.targets.typed_edges.end(),
            [](const auto& x, const auto& y) { return std::pair{x.u, x.v} < std::pair{y.u, y.v}; });
  t.adjacency = t.targets.adjacency;
  return t;
}

namespace {

/// Backpropagates dL/dscores (symmetric use, i<j entries only) into dH.
void scores_backward(const Matrix& h, const Matrix& d_scores_upper, Matrix& d_h) {
  const std::size_t m = h.rows();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double g = d_scores_upper(i, j);
      if (g == 0.0) continue;
      for (std::size_t k = 0; k < h.cols(); ++k) {
        d_h(i, k) += g * h(j, k);
        d_h(j, k) += g * h(i, k);
      }
    }
}

/// Backpropagates dL/dH through f into the decoder grads; returns dL/dZ.
Matrix decoder_input_backward(const DecoderParams& dec, const DecoderCache& c, const Matrix& d_h,
                              DecoderParams& grads, std::size_t latent_dim) {
  const Matrix d_input = fnn_backward_rows(c.fnn, dec.f, d_h, grads.f);
  Matrix d_z(d_input.rows(), latent_dim);
  for (std::size_t i = 0; i < d_input.rows(); ++i)
    for (std::size_t d = 0; d < latent_dim; ++d) d_z(i, d) = d_input(i, d);
  return d_z;
}

}  // namespace

VaeLoss vae_objective(const EncoderParams& enc, const DecoderParams& dec, const TrainingGraph& graph,
                      const Matrix& noise, std::size_t spectral_dim, const VaeWeights& w,
                      VaeGrads* grads, Matrix* edge_probs_out) {
  const std::size_t n = graph.adjacency.rows();
  EncoderCache ec;
  const LatentStats stats = encode(enc, graph.adjacency, graph.cond_vec, spectral_dim, &ec);
  const Matrix z = reparameterize(stats, noise);
  DecoderCache dc;
  const Matrix h = decoder_features(dec, z, graph.cond_vec, dc);
  const Matrix probs = edge_probs_from_scores(dc.scores);
  if (edge_probs_out) *edge_probs_out = probs;

  VaeLoss loss;
  Matrix d_scores(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      // Logit form so that saturated wrong predictions still receive gradient.
      const double s = dc.scores(i, j), t = graph.targets.adjacency(i, j);
      loss.edge_bce += std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))) - t * s;
      d_scores(i, j) = probs(i, j) - t;
    }

  Matrix d_cat_logits(n, dc.cat_logits.cols());
  for (std::size_t i = 0; i < n; ++i) {
    loss.category_ce += cross_entropy(dc.cat_logits.row(i), graph.targets.categories[i], d_cat_logits.row(i));
    for (double& v : d_cat_logits.row(i)) v *= w.category;
  }

  Matrix d_h(n, h.cols());
  const std::size_t fdim = h.cols();
  for (const auto& e : graph.targets.typed_edges) {
    const auto u = static_cast<std::size_t>(e.u), v = static_cast<std::size_t>(e.v);
    const Matrix pair = Matrix::row_vector(pair_product(h, u, v));
    const Matrix logits = affine_rows(pair, dec.edge_type_head);
    Matrix d_logits(1, kEdgeTypeCount);
    loss.edge_type_ce += cross_entropy(logits.row(0), static_cast<std::size_t>(e.type - 1), d_logits.row(0));
    if (!grads) continue;
    d_logits *= w.edge_type;
    const Matrix d_pair = affine_backward(pair, dec.edge_type_head, d_logits, grads->decoder.edge_type_head);
    for (std::size_t k = 0; k < fdim; ++k) {
      d_h(u, k) += d_pair(0, k) * h(v, k);
      d_h(v, k) += d_pair(0, k) * h(u, k);
    }
  }

  loss.recon = loss.edge_bce + w.category * loss.category_ce + w.edge_type * loss.edge_type_ce;
  loss.prior = kl_gaussian(stats.mu_bar, stats.sigma2_bar);
  loss.total = loss.recon + loss.prior;
  if (!grads) return loss;

  scores_backward(h, d_scores, d_h);
  d_h += affine_backward(dc.features, dec.category_head, d_cat_logits, grads->decoder.category_head);
  const Matrix d_z = decoder_input_backward(dec, dc, d_h, grads->decoder, noise.cols());

  // z = mu + sqrt(s2) * eps, plus the KL terms.
  const std::size_t dz = noise.cols();
  std::vector<double> d_mu(dz), d_s2(dz);
  kl_gaussian_grad(stats.mu_bar, stats.sigma2_bar, d_mu, d_s2);
  for (std::size_t d = 0; d < dz; ++d) {
    const double sd = std::sqrt(stats.sigma2_bar[d]);
    for (std::size_t i = 0; i < n; ++i) {
      d_mu[d] += d_z(i, d);
      d_s2[d] += d_z(i, d) * noise(i, d) / (2.0 * sd);
    }
  }

  // mu = mean_i M_i; s2 = (1/n^2) sum_i S_i^2 unless floored.
  const double nn = static_cast<double>(n);
  Matrix d_mean_rows(n, dz), d_std_rows(n, dz);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dz; ++d) {
      d_mean_rows(i, d) = d_mu[d] / nn;
      d_std_rows(i, d) = ec.floored[d] ? 0.0 : d_s2[d] * 2.0 * ec.std_rows(i, d) / (nn * nn);
    }
  grads->encoder.mean_head.weight += matmul_tn(ec.hidden.ah, d_mean_rows);
  grads->encoder.std_head.weight += matmul_tn(ec.hidden.ah, d_std_rows);
  const Matrix d_ah = matmul_nt(d_mean_rows, enc.mean_head.weight) + matmul_nt(d_std_rows, enc.std_head.weight);
  gcn_hidden_backward(ec.hidden, ec.features, ec.a_norm, enc.shared.weight, d_ah,
                      grads->encoder.shared.weight);
  return loss;
}

namespace {

/// Given dL/dlogit of the discriminator output, accumulates parameter grads
/// and optionally dL/dA_norm.
void discriminator_backward(const DiscriminatorParams& disc, const DiscriminatorCache& c,
                            double d_logit, DiscriminatorParams* grads, Matrix* d_a_norm) {
  DiscriminatorParams scratch;
  if (!grads) {
    scratch = disc.zeros_like();
    grads = &scratch;
  }
  Matrix d_out(1, 1);
  d_out(0, 0) = d_logit;
  const Matrix d_pooled = fnn_backward_rows(c.fnn, disc.f, d_out, grads->f);
  const std::size_t n = c.node_out.rows();
  Matrix d_node(n, c.node_out.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d_node.cols(); ++k) d_node(i, k) = d_pooled(0, k) / static_cast<double>(n);
  grads->g1.weight += matmul_tn(c.hidden.ah, d_node);
  const Matrix d_ah = matmul_nt(d_node, disc.g1.weight);
  gcn_hidden_backward(c.hidden, c.features, c.a_norm, disc.g0.weight, d_ah, grads->g0.weight,
                      d_a_norm);
}

}  // namespace

double discriminator_objective(const DiscriminatorParams& disc, const Matrix& real,
                               const Matrix& fake, std::span<const double> cond_vec,
                               std::size_t spectral_dim, DiscriminatorParams* grads) {
  DiscriminatorCache rc, fc;
  const double d_real = discriminate(disc, real, cond_vec, spectral_dim, &rc);
  const double d_fake = discriminate(disc, fake, cond_vec, spectral_dim, &fc);
  const double loss = -gan_loss(d_real, d_fake);
  if (grads) {
    // d(-log D)/dlogit = D - 1 ; d(-log(1-D))/dlogit = D (zero where clamped).
    const bool real_clamped = d_real < kProbClamp || d_real > 1.0 - kProbClamp;
    const bool fake_clamped = d_fake < kProbClamp || d_fake > 1.0 - kProbClamp;
    discriminator_backward(disc, rc, real_clamped ? 0.0 : d_real - 1.0, grads, nullptr);
    discriminator_backward(disc, fc, fake_clamped ? 0.0 : d_fake, grads, nullptr);
  }
  return loss;
}

double generator_objective(const DecoderParams& dec, const DiscriminatorParams& disc,
                           const Matrix& z, std::span<const double> cond_vec,
                           const Matrix& fake_features, std::size_t spectral_dim,
                           DecoderParams* grads) {
  DecoderCache dc;
  const Matrix h = decoder_features(dec, z, cond_vec, dc);
  const Matrix fake = edge_probs_from_scores(dc.scores);
  DiscriminatorCache c;
  const double d = discriminate(disc, fake, cond_vec, spectral_dim, &c, &fake_features);
  const double dc_ = std::clamp(d, kProbClamp, 1.0 - kProbClamp);
  const double loss = std::log(1.0 - dc_);
  if (!grads) return loss;

  const bool clamped = d < kProbClamp || d > 1.0 - kProbClamp;
  const double d_logit = clamped ? 0.0 : -d;  // d log(1 - sigmoid(x)) / dx
  const std::size_t m = z.rows();
  Matrix d_a_norm(m, m);
  discriminator_backward(disc, c, d_logit, nullptr, &d_a_norm);
  const Matrix d_a = normalize_adjacency_backward(fake, d_a_norm);
  Matrix d_scores(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      d_scores(i, j) = (d_a(i, j) + d_a(j, i)) * fake(i, j) * (1.0 - fake(i, j));
  Matrix d_h(m, h.cols());
  scores_backward(h, d_scores, d_h);
  decoder_input_backward(dec, dc, d_h, *grads, z.cols());
  return loss;
}

// ---------------------------------------------------------------------------

CondGenModel train_condgen(const std::vector<SceneGraph>& graphs, const ConditionSchema& schema,
                           const CategoryRegistry& registry, const CondGenConfig& config,
                           const std::vector<std::vector<GraphEdge>>& relations) {
  if (!relations.empty() && relations.size() != graphs.size())
    throw ArgumentError("train_condgen: relations must parallel the graphs");
  std::vector<std::size_t> per_label(schema.labels.size(), 0);
  for (const auto& g : graphs) {
    if (g.condition.room_type != schema.room_type || g.condition.label_index >= per_label.size())
      throw ArgumentError("train_condgen: graph condition does not match the schema");
    ++per_label[g.condition.label_index];
  }
  for (std::size_t l = 0; l < per_label.size(); ++l)
    if (per_label[l] < 2)
      throw ArgumentError("train_condgen: label '" + schema.labels[l] + "' has fewer than 2 graphs");

  CondGenModel model = init_condgen(config, schema, registry);
  std::vector<TrainingGraph> examples;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const SceneGraph& g = graphs[i];
    examples.push_back(prepare_training_graph(g, schema, registry, relations.empty() ? nullptr : &relations[i]));
    ++model.node_count_histograms[g.condition.label_index][g.node_count()];
  }

  const std::size_t k = config.spectral_dim, dz = config.latent_dim;
  const VaeWeights weights{config.category_weight, config.edge_type_weight};
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLosses sums;
    const auto fail = [&](const std::string& step) {
      throw TrainingError("condgen training diverged in the " + step + " step at epoch " +
                          std::to_string(epoch + 1));
    };
    for (std::size_t idx : order) {
      const TrainingGraph& ex = examples[idx];
      const std::size_t n = ex.adjacency.rows();

      // (1) VAE step on encoder + decoder.
      const std::size_t strata = max_node_count(model, ex.label);
      const Matrix noise = ordered_noise(n, dz, rng, strata);
      VaeGrads vg{model.encoder.zeros_like(), model.decoder.zeros_like()};
      Matrix fake;
      const VaeLoss vl = vae_objective(model.encoder, model.decoder, ex, noise, k, weights, &vg, &fake);
      if (!std::isfinite(vl.total)) fail("VAE");
      ParamList vgrads = vg.encoder.params();
      for (const auto& s : vg.decoder.params()) vgrads.push_back(s);
      if (!all_finite(vgrads)) fail("VAE");
      clip(vgrads, config.clip_norm);
      sgd_step(model.encoder.params(), vg.encoder.params(), config.learning_rate);
      sgd_step(model.decoder.params(), vg.decoder.params(), config.learning_rate);
      sums.recon += vl.recon;
      sums.edge_bce += vl.edge_bce;
      sums.prior += vl.prior;

      // (2) discriminator ascends L_GAN.
      DiscriminatorParams dgrad = model.discriminator.zeros_like();
      const double dl = discriminator_objective(model.discriminator, ex.adjacency, fake, ex.cond_vec, k, &dgrad);
      if (!std::isfinite(dl) || !all_finite(dgrad.params())) fail("discriminator");
      clip(dgrad.params(), config.clip_norm);
      sgd_step(model.discriminator.params(), dgrad.params(), config.learning_rate);
      sums.disc += dl;

      // (3) decoder descends log(1 - D(A')) on prior latents.
      if (config.gan_weight > 0.0) {
        const Matrix z = ordered_noise(n, dz, rng, strata);
        const Matrix generated = decode(model.decoder, z, ex.cond_vec).edge_probs;
        const Matrix features = node_features(generated, ex.cond_vec, k);
        DecoderParams ggrad = model.decoder.zeros_like();
        const double gl = generator_objective(model.decoder, model.discriminator, z, ex.cond_vec,
                                              features, k, &ggrad);
        if (!std::isfinite(gl) || !all_finite(ggrad.params())) fail("generator");
        scale(ggrad.params(), config.gan_weight);
        clip(ggrad.params(), config.clip_norm);
        sgd_step(model.decoder.params(), ggrad.params(), config.learning_rate);
        sums.gen += gl;
      }
      if (!all_finite(model.encoder.params()) || !all_finite(model.decoder.params()) ||
          !all_finite(model.discriminator.params()))
        fail("parameter update");
    }
    const double count = static_cast<double>(examples.size());
    model.loss_curve.push_back({sums.recon / count, sums.edge_bce / count, sums.prior / count,
                                sums.disc / count, sums.gen / count});
  }

  model.label_posteriors.assign(schema.labels.size(), {std::vector<double>(dz, 0.0), std::vector<double>(dz, 0.0)});
  for (const auto& ex : examples) {
    const LatentStats s = encode(model.encoder, ex.adjacency, ex.cond_vec, k);
    auto& acc = model.label_posteriors[ex.label];
    for (std::size_t d = 0; d < dz; ++d) {
      acc.mu_bar[d] += s.mu_bar[d] / static_cast<double>(per_label[ex.label]);
      acc.sigma2_bar[d] += s.sigma2_bar[d] / static_cast<double>(per_label[ex.label]);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------

namespace {

int best_type_for_class(const Matrix& type_probs, std::size_t row, SemanticClass sem) {
  int best = edge_type(sem, DistanceBucket::near);
  for (int b = 2; b <= 3; ++b) {
    const int t = edge_type(sem, static_cast<DistanceBucket>(b));
    if (type_probs(row, static_cast<std::size_t>(t - 1)) > type_probs(row, static_cast<std::size_t>(best - 1)))
      best = t;
  }
  return best;
}

}  // namespace

SceneGraph generate(const CondGenModel& model, const ConditionCode& cond, std::uint64_t seed,
                    LatentSource source) {
  const std::vector<double> cond_vec = encode_condition(cond, model.schema);
  const auto& hist = model.node_count_histograms.at(cond.label_index);
  Rng rng(seed);
  std::vector<std::size_t> counts;
  std::vector<double> weights;
  for (const auto& [count, freq] : hist) {
    counts.push_back(count);
    weights.push_back(static_cast<double>(freq));
  }
  const std::size_t m = counts.empty() ? 1 : std::max<std::size_t>(1, counts[rng.categorical(weights)]);

  Matrix z = ordered_noise(m, model.config.latent_dim, rng,
                           std::max(m, max_node_count(model, cond.label_index)));
  if (source == LatentSource::posterior && cond.label_index < model.label_posteriors.size())
    z = reparameterize(model.label_posteriors[cond.label_index], z);
  const DecodeOutput out = decode(model.decoder, z, cond_vec);

  SceneGraph g;
  g.condition = cond;
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = out.node_cat_probs.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    g.nodes.push_back({static_cast<int>(i), model.registry.code_at(best)});
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto sem = semantic_class(g.nodes[i].category, g.nodes[j].category);
      if (!sem || out.edge_probs(i, j) <= 0.5) continue;
      g.edges.push_back({static_cast<int>(i), static_cast<int>(j),
                         best_type_for_class(out.edge_type_probs, i * m + j, *sem)});
    }

  // Bridge components through the most probable admissible pair.
  while (g.component_count() > 1) {
    std::vector<int> comp(m);
    {
      // label components by BFS order
      std::vector<std::vector<int>> adj(m);
      for (const auto& e : g.edges) {
        adj[static_cast<std::size_t>(e.u)].push_back(e.v);
        adj[static_cast<std::size_t>(e.v)].push_back(e.u);
      }
      std::fill(comp.begin(), comp.end(), -1);
      int next = 0;
      for (std::size_t s = 0; s < m; ++s) {
        if (comp[s] >= 0) continue;
        std::vector<int> stack{static_cast<int>(s)};
        comp[s] = next;
        while (!stack.empty()) {
          const int v = stack.back();
          stack.pop_back();
          for (int w : adj[static_cast<std::size_t>(v)])
            if (comp[static_cast<std::size_t>(w)] < 0) {
              comp[static_cast<std::size_t>(w)] = next;
              stack.push_back(w);
            }
        }
        ++next;
      }
    }
    std::optional<std::pair<std::size_t, std::size_t>> best;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) {
        if (comp[i] == comp[j] || !semantic_class(g.nodes[i].category, g.nodes[j].category)) continue;
        if (!best || out.edge_probs(i, j) > out.edge_probs(best->first, best->second)) best = {i, j};
      }
    if (!best) break;
    const auto [i, j] = *best;
    g.set_edge(static_cast<int>(i), static_cast<int>(j),
               best_type_for_class(out.edge_type_probs, i * m + j,
                                   *semantic_class(g.nodes[i].category, g.nodes[j].category)));
  }
  return g;
}

// ---------------------------------------------------------------------------

json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const json& j, const std::string& path) {
  using namespace jsonu;
  const auto rows = static_cast<std::size_t>(integer_at(j, "rows", path));
  const auto cols = static_cast<std::size_t>(integer_at(j, "cols", path));
  const json& data = array_at(j, "data", path);
  std::vector<double> values;
  values.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    values.push_back(number(data[i], path + ".data[" + std::to_string(i) + "]"));
  if (values.size() != rows * cols)
    throw ParseError(path, "data has " + std::to_string(values.size()) + " values for " +
                               std::to_string(rows) + "x" + std::to_string(cols));
  return Matrix(rows, cols, std::move(values));
}

void write_layers(json& matrices, std::vector<std::pair<std::string, LayerParams*>> layers) {
  for (auto& [name, layer] : layers) {
    matrices[name + ".weight"] = matrix_to_json(layer->weight);
    if (!layer->bias.empty()) matrices[name + ".bias"] = matrix_to_json(Matrix::row_vector(layer->bias));
  }
}

void read_layers(const json& matrices, std::vector<std::pair<std::string, LayerParams*>> layers) {
  for (auto& [name, layer] : layers) {
    const std::string wname = name + ".weight";
    const Matrix w = matrix_from_json(jsonu::field(matrices, wname, "matrices"), "matrices." + wname);
    if (w.rows() != layer->weight.rows() || w.cols() != layer->weight.cols())
      throw ParseError("matrices." + wname, "shape does not match the configured architecture");
    layer->weight = w;
    if (!layer->bias.empty()) {
      const std::string bname = name + ".bias";
      const Matrix b = matrix_from_json(jsonu::field(matrices, bname, "matrices"), "matrices." + bname);
      if (b.size() != layer->bias.size())
        throw ParseError("matrices." + bname, "shape does not match the configured architecture");
      layer->bias = b.data();
    }
  }
}

namespace {

json config_to_json(const CondGenConfig& c) {
  return {{"latent_dim", c.latent_dim},         {"spectral_dim", c.spectral_dim},
          {"encoder_hidden", c.encoder_hidden}, {"decoder_hidden", c.decoder_hidden},
          {"feature_dim", c.feature_dim},       {"disc_hidden", c.disc_hidden},
          {"disc_pooled", c.disc_pooled},       {"disc_fnn_hidden", c.disc_fnn_hidden},
          {"epochs", c.epochs},                 {"learning_rate", c.learning_rate},
          {"category_weight", c.category_weight}, {"edge_type_weight", c.edge_type_weight},
          {"gan_weight", c.gan_weight},         {"clip_norm", c.clip_norm},
          {"seed", c.seed}};
}

CondGenConfig config_from_json(const json& j) {
  using namespace jsonu;
  const std::string p = "config";
  auto count = [&](const char* key) { return static_cast<std::size_t>(integer_at(j, key, p)); };
  CondGenConfig c;
  c.latent_dim = count("latent_dim");
  c.spectral_dim = count("spectral_dim");
  c.encoder_hidden = count("encoder_hidden");
  c.decoder_hidden = count("decoder_hidden");
  c.feature_dim = count("feature_dim");
  c.disc_hidden = count("disc_hidden");
  c.disc_pooled = count("disc_pooled");
  c.disc_fnn_hidden = count("disc_fnn_hidden");
  c.epochs = count("epochs");
  c.learning_rate = number_at(j, "learning_rate", p);
  c.category_weight = number_at(j, "category_weight", p);
  c.edge_type_weight = number_at(j, "edge_type_weight", p);
  c.gan_weight = number_at(j, "gan_weight", p);
  c.clip_norm = number_at(j, "clip_norm", p);
  c.seed = field(j, "seed", p).get<std::uint64_t>();
  return c;
}

}  // namespace

json condgen_to_json(const CondGenModel& model) {
  CondGenModel& m = const_cast<CondGenModel&>(model);  // named() hands out mutable views only
  json matrices = json::object();
  write_layers(matrices, m.encoder.named());
  write_layers(matrices, m.decoder.named());
  write_layers(matrices, m.discriminator.named());
  json hist = json::array();
  for (std::size_t l = 0; l < model.node_count_histograms.size(); ++l) {
    json counts = json::array();
    for (const auto& [n, f] : model.node_count_histograms[l]) counts.push_back({n, f});
    hist.push_back({{"label", model.schema.labels[l]}, {"counts", counts}});
  }
  json posteriors = json::array();
  for (std::size_t l = 0; l < model.label_posteriors.size(); ++l)
    posteriors.push_back({{"label", model.schema.labels[l]},
                          {"mu_bar", model.label_posteriors[l].mu_bar},
                          {"sigma2_bar", model.label_posteriors[l].sigma2_bar}});
  json curve = json::array();
  for (const auto& e : model.loss_curve)
    curve.push_back({{"recon", e.recon}, {"edge_bce", e.edge_bce}, {"prior", e.prior},
                     {"disc", e.disc}, {"gen", e.gen}});
  return {{"format_version", kCheckpointFormatVersion},
          {"kind", "condgen"},
          {"d_z", model.config.latent_dim},
          {"k", model.config.spectral_dim},
          {"config", config_to_json(model.config)},
          {"schema", to_json(model.schema)},
          {"category_registry", to_json(model.registry)},
          {"histograms", hist},
          {"label_posteriors", posteriors},
          {"matrices", matrices},
          {"loss_curve", curve}};
}

CondGenModel condgen_from_json(const json& j) {
  using namespace jsonu;
  require_version(j, kCheckpointFormatVersion, "checkpoint");
  if (string_at(j, "kind", "checkpoint") != "condgen")
    throw ParseError("checkpoint.kind", "expected 'condgen'");
  const CondGenConfig config = config_from_json(field(j, "config", "checkpoint"));
  const ConditionSchema schema = schema_from_json(field(j, "schema", "checkpoint"), "schema");
  const CategoryRegistry registry = registry_from_json(field(j, "category_registry", "checkpoint"));
  CondGenModel m = init_condgen(config, schema, registry);
  const json& matrices = field(j, "matrices", "checkpoint");
  read_layers(matrices, m.encoder.named());
  read_layers(matrices, m.decoder.named());
  read_layers(matrices, m.discriminator.named());
  const json& hist = array_at(j, "histograms", "checkpoint");
  if (hist.size() != schema.labels.size())
    throw ParseError("histograms", "expected one histogram per label");
  for (std::size_t l = 0; l < hist.size(); ++l) {
    const std::string p = "histograms[" + std::to_string(l) + "]";
    const json& counts = array_at(hist[l], "counts", p);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const std::string q = p + ".counts[" + std::to_string(i) + "]";
      if (!counts[i].is_array() || counts[i].size() != 2) throw ParseError(q, "expected [nodes, count]");
      m.node_count_histograms[l][static_cast<std::size_t>(integer(counts[i][0], q))] =
          static_cast<std::size_t>(integer(counts[i][1], q));
    }
  }
  if (j.contains("label_posteriors")) {
    const json& post = array_at(j, "label_posteriors", "checkpoint");
    if (post.size() != schema.labels.size())
      throw ParseError("label_posteriors", "expected one entry per label");
    for (std::size_t l = 0; l < post.size(); ++l) {
      const std::string p = "label_posteriors[" + std::to_string(l) + "]";
      LatentStats st;
      for (const char* key : {"mu_bar", "sigma2_bar"}) {
        const json& v = array_at(post[l], key, p);
        if (v.size() != config.latent_dim) throw ParseError(p + "." + key, "expected d_z entries");
        auto& dst = std::string(key) == "mu_bar" ? st.mu_bar : st.sigma2_bar;
        for (const auto& x : v) dst.push_back(number(x, p + "." + key));
      }
      m.label_posteriors.push_back(std::move(st));
    }
  }
  if (j.contains("loss_curve"))
    for (const auto& e : array_at(j, "loss_curve", "checkpoint"))
      m.loss_curve.push_back({number_at(e, "recon", "loss_curve"), number_at(e, "edge_bce", "loss_curve"),
                              number_at(e, "prior", "loss_curve"), number_at(e, "disc", "loss_curve"),
                              number_at(e, "gen", "loss_curve")});
  return m;
}

void save_condgen(const CondGenModel& model, const std::string& path) {
  jsonu::write_file(path, condgen_to_json(model));
}

CondGenModel load_condgen(const std::string& path) { return condgen_from_json(jsonu::read_file(path)); }

}  // namespace layoutgen
