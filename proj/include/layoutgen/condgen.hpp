#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "layoutgen/graph.hpp"
#include "layoutgen/matrix.hpp"
#include "layoutgen/nn.hpp"
#include "layoutgen/rng.hpp"

namespace layoutgen {

struct CondGenConfig {
  std::size_t latent_dim = 4;    // d_z
  std::size_t spectral_dim = 4;  // k
  std::size_t encoder_hidden = 16;
  std::size_t decoder_hidden = 32;
  std::size_t feature_dim = 16;  // width of f(z)
  std::size_t disc_hidden = 16;
  std::size_t disc_pooled = 8;
  std::size_t disc_fnn_hidden = 8;
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  double category_weight = 1.0;
  double edge_type_weight = 1.0;
  double gan_weight = 1.0;
  double clip_norm = 5.0;  // per-step gradient norm cap, <= 0 disables
  std::uint64_t seed = 1;
};

inline constexpr double kVarianceFloor = 1e-8;

/// Two-layer GCN whose mean and std heads share the first layer.
struct EncoderParams {
  LayerParams shared;     // W0
  LayerParams mean_head;  // W1 of g_mu
  LayerParams std_head;   // W1 of g_sigma

  std::vector<std::pair<std::string, LayerParams*>> named();
  ParamList params();
  EncoderParams zeros_like() const;
};

struct LatentStats {
  std::vector<double> mu_bar;
  std::vector<double> sigma2_bar;
};

/// f maps [z_i, condition] to link features; heads classify node category and
/// pair edge type from those features.
struct DecoderParams {
  std::vector<LayerParams> f;
  LayerParams category_head;   // F -> registry size
  LayerParams edge_type_head;  // F -> 9, applied to f(z_i) * f(z_j)

  std::vector<std::pair<std::string, LayerParams*>> named();
  ParamList params();
  DecoderParams zeros_like() const;
};

/// Two-layer GCN g', mean pool, two-layer FNN f' with sigmoid output.
struct DiscriminatorParams {
  LayerParams g0;
  LayerParams g1;
  std::vector<LayerParams> f;

  std::vector<std::pair<std::string, LayerParams*>> named();
  ParamList params();
  DiscriminatorParams zeros_like() const;
};

struct EpochLosses {
  double recon = 0.0;  // mean per graph
  double edge_bce = 0.0;
  double prior = 0.0;
  double disc = 0.0;  // -L_GAN
  double gen = 0.0;   // log(1 - D(A'))
  friend bool operator==(const EpochLosses&, const EpochLosses&) = default;
};

struct CondGenModel {
  CondGenConfig config;
  ConditionSchema schema;
  CategoryRegistry registry;
  EncoderParams encoder;
  DecoderParams decoder;
  DiscriminatorParams discriminator;
  /// Per label: node count -> number of training graphs.
  std::vector<std::map<std::size_t, std::size_t>> node_count_histograms;
  /// Per label: mean pooled posterior (mu_bar, sigma2_bar) over its training graphs.
  std::vector<LatentStats> label_posteriors;
  std::vector<EpochLosses> loss_curve;

  std::size_t condition_dim() const { return schema.labels.size(); }
};

/// Freshly initialized model for a schema/registry.
CondGenModel init_condgen(const CondGenConfig& config, const ConditionSchema& schema,
                          const CategoryRegistry& registry);

// ---------------------------------------------------------------------------
// Forward passes

/// Spectral features concatenated row-wise with the condition vector.
Matrix node_features(const Matrix& adjacency, std::span<const double> cond_vec,
                     std::size_t spectral_dim);

struct EncoderCache {
  Matrix features;
  Matrix a_norm;
  GcnHidden hidden;
  Matrix mean_rows;
  Matrix std_rows;
  std::vector<bool> floored;
};

/// Pooled posterior: mu_bar = mean_i g_mu(X,A)_i, sigma2_bar = (1/n^2) sum_i g_sigma(X,A)_i^2.
LatentStats encode(const EncoderParams& enc, const Matrix& adjacency,
                   std::span<const double> cond_vec, std::size_t spectral_dim,
                   EncoderCache* cache = nullptr);
LatentStats encode(const CondGenModel& model, const Matrix& adjacency,
                   std::span<const double> cond_vec);

/// i.i.d. rows mu_bar + sqrt(sigma2_bar) * eps.
Matrix sample_latents(const LatentStats& stats, std::size_t m, std::uint64_t seed);

/// Standard normal noise whose first column is stratified and ascending: row i
/// falls in the i-th of `strata` equal-mass slices of N(0, 1), so it plays the
/// role of the i-th node in canonical order whatever m is. Other columns are
/// i.i.d. N(0, 1). `strata` defaults to m and must be at least m.
Matrix ordered_noise(std::size_t m, std::size_t dim, Rng& rng, std::size_t strata = 0);

/// Largest node count seen for the label (the stratum count used for it).
std::size_t max_node_count(const CondGenModel& model, std::size_t label);

Matrix reparameterize(const LatentStats& stats, const Matrix& noise);

struct DecodeOutput {
  Matrix edge_probs;       // m x m, symmetric, zero diagonal
  Matrix node_cat_probs;   // m x registry size
  Matrix edge_type_probs;  // (m*m) x 9, row i*m+j
};

struct DecoderCache {
  Matrix input;  // [Z, cond]
  FnnCache fnn;
  Matrix features;  // f output, m x F
  Matrix scores;    // F F^T
  Matrix cat_logits;
};

DecodeOutput decode(const DecoderParams& dec, const Matrix& z, std::span<const double> cond_vec,
                    DecoderCache* cache = nullptr);

/// Ground truth aligned with decoder rows.
struct VaeTargets {
  Matrix adjacency;
  std::vector<std::size_t> categories;  // registry indices
  std::vector<GraphEdge> typed_edges;   // pairs with type supervision, u < v, type 1..9
};

struct VaeLoss {
  double total = 0.0;
  double recon = 0.0;
  double prior = 0.0;
  double edge_bce = 0.0;
  double category_ce = 0.0;
  double edge_type_ce = 0.0;
};

struct VaeWeights {
  double category = 1.0;
  double edge_type = 1.0;
};

/// L_rec = edge BCE over i<j + weighted category / edge-type cross-entropies;
/// L_prior = kl_gaussian(stats).
VaeLoss vae_loss(const DecodeOutput& out, const LatentStats& stats, const VaeTargets& targets,
                 const VaeWeights& weights = {});

struct DiscriminatorCache {
  Matrix features;
  Matrix a_norm;
  GcnHidden hidden;
  Matrix node_out;
  FnnCache fnn;
  double prob = 0.5;
};

/// D(A) in (0,1), invariant to node order. `features` overrides the spectral
/// features (used to hold them fixed while differentiating through A).
double discriminate(const DiscriminatorParams& disc, const Matrix& adjacency,
                    std::span<const double> cond_vec, std::size_t spectral_dim,
                    DiscriminatorCache* cache = nullptr, const Matrix* features = nullptr);
double discriminate(const CondGenModel& model, const Matrix& adjacency,
                    std::span<const double> cond_vec);

/// log D(A) + log(1 - D(A')), inputs clamped to [1e-7, 1 - 1e-7].
double gan_loss(double d_real, double d_fake);

// ---------------------------------------------------------------------------
// Training objectives with analytic gradients (also used by gradient checks)

/// One graph prepared for training: nodes in canonical order (category code,
/// then original id).
struct TrainingGraph {
  Matrix adjacency;
  std::vector<double> cond_vec;
  VaeTargets targets;
  std::size_t label = 0;
};

/// Edge-type supervision comes from `relations` (the dense pre-pruning typed
/// pairs, same node ids) when given, else from the graph's own edges.
TrainingGraph prepare_training_graph(const SceneGraph& g, const ConditionSchema& schema,
                                     const CategoryRegistry& registry,
                                     const std::vector<GraphEdge>* relations = nullptr);

struct VaeGrads {
  EncoderParams encoder;
  DecoderParams decoder;
};

/// VAE loss for fixed noise; accumulates gradients when `grads` is non-null.
/// `edge_probs_out` receives the decoded A'.
VaeLoss vae_objective(const EncoderParams& enc, const DecoderParams& dec,
                      const TrainingGraph& graph, const Matrix& noise, std::size_t spectral_dim,
                      const VaeWeights& weights, VaeGrads* grads, Matrix* edge_probs_out = nullptr);

/// -L_GAN for the discriminator with A' held fixed.
double discriminator_objective(const DiscriminatorParams& disc, const Matrix& real,
                               const Matrix& fake, std::span<const double> cond_vec,
                               std::size_t spectral_dim, DiscriminatorParams* grads);

/// log(1 - D(A')) with A' = decode(z) and the discriminator's spectral
/// features of A' held at `fake_features`.
double generator_objective(const DecoderParams& dec, const DiscriminatorParams& disc,
                           const Matrix& z, std::span<const double> cond_vec,
                           const Matrix& fake_features, std::size_t spectral_dim,
                           DecoderParams* grads);

// ---------------------------------------------------------------------------

/// Alternating VAE / discriminator / generator SGD steps. Throws ArgumentError
/// when a label has fewer than two graphs, TrainingError on divergence.
CondGenModel train_condgen(const std::vector<SceneGraph>& graphs, const ConditionSchema& schema,
                           const CategoryRegistry& registry, const CondGenConfig& config,
                           const std::vector<std::vector<GraphEdge>>& relations = {});

enum class LatentSource { posterior, prior };

/// Samples a graph for the condition: node count from the histogram, latents
/// from the label's pooled posterior (or the N(0, I) prior), edges where
/// p > 0.5, bridges by highest probability.
SceneGraph generate(const CondGenModel& model, const ConditionCode& cond, std::uint64_t seed,
                    LatentSource source = LatentSource::posterior);

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json condgen_to_json(const CondGenModel& model);
CondGenModel condgen_from_json(const nlohmann::json& j);
void save_condgen(const CondGenModel& model, const std::string& path);
CondGenModel load_condgen(const std::string& path);

// Shared checkpoint helpers.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j, const std::string& path);
void write_layers(nlohmann::json& matrices, std::vector<std::pair<std::string, LayerParams*>> layers);
void read_layers(const nlohmann::json& matrices,
                 std::vector<std::pair<std::string, LayerParams*>> layers);

}  // namespace layoutgen
