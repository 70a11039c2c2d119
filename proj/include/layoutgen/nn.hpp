#pragma once

#include <span>
#include <string>
#include <vector>

#include "layoutgen/matrix.hpp"
#include "layoutgen/rng.hpp"

namespace layoutgen {

/// Weight is (inputs x outputs); an empty bias means the layer has none.
struct LayerParams {
  Matrix weight;
  std::vector<double> bias;

  std::size_t inputs() const { return weight.rows(); }
  std::size_t outputs() const { return weight.cols(); }
  LayerParams zeros_like() const;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Glorot-uniform weights, zero bias.
LayerParams init_layer(std::size_t inputs, std::size_t outputs, bool with_bias, Rng& rng);

/// Flat views over every trainable array of a model, in a fixed order.
using ParamList = std::vector<std::span<double>>;

void append_params(ParamList& list, LayerParams& p);
std::size_t param_count(const ParamList& list);
std::vector<double> flatten(const ParamList& list);
void assign(const ParamList& list, std::span<const double> values);
/// params -= lr * grads, element by element; lists must be congruent.
void sgd_step(const ParamList& params, const ParamList& grads, double lr);
bool all_finite(const ParamList& list);

// ---------------------------------------------------------------------------
// Two-layer GCN: A_norm * ReLU(A_norm * X * W0) * W1.

/// Intermediates of the first layer plus the second propagation A_norm * H.
struct GcnHidden {
  Matrix ax;      // A_norm X
  Matrix pre;     // A_norm X W0
  Matrix hidden;  // ReLU(pre)
  Matrix ah;      // A_norm hidden
};

GcnHidden gcn_hidden(const Matrix& x, const Matrix& a_norm, const Matrix& w0);

/// Backpropagates d(A_norm H) into dW0 (accumulated); optionally also into
/// A_norm and X.
void gcn_hidden_backward(const GcnHidden& cache, const Matrix& x, const Matrix& a_norm,
                         const Matrix& w0, const Matrix& d_ah, Matrix& d_w0,
                         Matrix* d_a_norm = nullptr, Matrix* d_x = nullptr);

/// Throws ArgumentError on shape mismatch. GCN layers carry no bias.
Matrix gcn_forward(const Matrix& x, const Matrix& a_norm, const LayerParams& p0,
                   const LayerParams& p1);

// ---------------------------------------------------------------------------
// Fully connected chain: affine + ReLU between layers, no activation after the
// last. Rows of the input are independent samples.

struct FnnCache {
  std::vector<Matrix> inputs;  // input of each layer (post-activation)
  std::vector<Matrix> pre;     // affine output of each layer
};

Matrix fnn_forward_rows(const Matrix& x, const std::vector<LayerParams>& layers,
                        FnnCache* cache = nullptr);
/// Accumulates into `grads` and returns the gradient with respect to x.
Matrix fnn_backward_rows(const FnnCache& cache, const std::vector<LayerParams>& layers,
                         const Matrix& d_out, std::vector<LayerParams>& grads);

std::vector<double> fnn_forward(std::span<const double> x, const std::vector<LayerParams>& layers);

/// Single affine map over rows: x W + b.
Matrix affine_rows(const Matrix& x, const LayerParams& p);
/// Accumulates dW, db; returns dx.
Matrix affine_backward(const Matrix& x, const LayerParams& p, const Matrix& d_out,
                       LayerParams& grad);

// ---------------------------------------------------------------------------
// Scalar functions and losses.

double sigmoid(double z);
std::vector<double> softmax(std::span<const double> logits);
/// -log softmax(logits)[target]; writes softmax - onehot into d_logits if given.
double cross_entropy(std::span<const double> logits, std::size_t target,
                     std::span<double> d_logits = {});

/// KL(N(mu, diag(sigma2)) || N(0, I)); throws ArgumentError on non-positive variance.
double kl_gaussian(std::span<const double> mu, std::span<const double> sigma2);
/// Gradients of kl_gaussian, written into d_mu and d_sigma2.
void kl_gaussian_grad(std::span<const double> mu, std::span<const double> sigma2,
                      std::span<double> d_mu, std::span<double> d_sigma2);

inline constexpr double kProbClamp = 1e-7;

/// Binary cross-entropy with the probability clamped to [1e-7, 1-1e-7];
/// d_prob is zero where the clamp is active.
double bce(double prob, double target, double* d_prob = nullptr);

}  // namespace layoutgen
