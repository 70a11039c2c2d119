#include "layoutgen/nn.hpp"

#include <algorithm>
#include <cmath>

#include "layoutgen/errors.hpp"

namespace layoutgen {

LayerParams LayerParams::zeros_like() const {
  return {Matrix(weight.rows(), weight.cols()), std::vector<double>(bias.size(), 0.0)};
}

LayerParams init_layer(std::size_t inputs, std::size_t outputs, bool with_bias, Rng& rng) {
  LayerParams p{Matrix(inputs, outputs), {}};
  const double limit = std::sqrt(6.0 / static_cast<double>(inputs + outputs));
  for (double& w : p.weight.values()) w = rng.uniform(-limit, limit);
  if (with_bias) p.bias.assign(outputs, 0.0);
  return p;
}

void append_params(ParamList& list, LayerParams& p) {
  list.push_back(p.weight.values());
  if (!p.bias.empty()) list.push_back(p.bias);
}

std::size_t param_count(const ParamList& list) {
  std::size_t n = 0;
  for (const auto& s : list) n += s.size();
  return n;
}

std::vector<double> flatten(const ParamList& list) {
  std::vector<double> out;
  out.reserve(param_count(list));
  for (const auto& s : list) out.insert(out.end(), s.begin(), s.end());
  return out;
}

void assign(const ParamList& list, std::span<const double> values) {
  if (values.size() != param_count(list)) throw ArgumentError("assign: parameter count mismatch");
  std::size_t k = 0;
  for (const auto& s : list)
    for (double& v : s) v = values[k++];
}

void sgd_step(const ParamList& params, const ParamList& grads, double lr) {
  if (params.size() != grads.size()) throw ArgumentError("sgd_step: parameter lists differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size()) throw ArgumentError("sgd_step: shape mismatch");
    for (std::size_t j = 0; j < params[i].size(); ++j) params[i][j] -= lr * grads[i][j];
  }
}

bool all_finite(const ParamList& list) {
  for (const auto& s : list)
    for (double v : s)
      if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------

GcnHidden gcn_hidden(const Matrix& x, const Matrix& a_norm, const Matrix& w0) {
  if (a_norm.rows() != a_norm.cols() || a_norm.cols() != x.rows())
    throw ArgumentError("gcn: adjacency is " + std::to_string(a_norm.rows()) + "x" +
                        std::to_string(a_norm.cols()) + " but features have " +
                        std::to_string(x.rows()) + " rows");
  if (x.cols() != w0.rows()) throw ArgumentError("gcn: feature width does not match W0");
  GcnHidden c;
  c.ax = matmul(a_norm, x);
  c.pre = matmul(c.ax, w0);
  c.hidden = relu(c.pre);
  c.ah = matmul(a_norm, c.hidden);
  return c;
}

void gcn_hidden_backward(const GcnHidden& c, const Matrix& x, const Matrix& a_norm,
                         const Matrix& w0, const Matrix& d_ah, Matrix& d_w0, Matrix* d_a_norm,
                         Matrix* d_x) {
  // ah = A H  =>  dH = A^T d_ah,  dA += d_ah H^T
  Matrix d_hidden = matmul_tn(a_norm, d_ah);
  if (d_a_norm) *d_a_norm += matmul_nt(d_ah, c.hidden);
  for (std::size_t i = 0; i < d_hidden.size(); ++i)
    if (c.pre.values()[i] <= 0.0) d_hidden.values()[i] = 0.0;
  d_w0 += matmul_tn(c.ax, d_hidden);
  if (d_a_norm || d_x) {
    const Matrix d_ax = matmul_nt(d_hidden, w0);
    if (d_a_norm) *d_a_norm += matmul_nt(d_ax, x);
    if (d_x) *d_x += matmul_tn(a_norm, d_ax);
  }
}

Matrix gcn_forward(const Matrix& x, const Matrix& a_norm, const LayerParams& p0,
                   const LayerParams& p1) {
  const GcnHidden c = gcn_hidden(x, a_norm, p0.weight);
  if (c.ah.cols() != p1.weight.rows()) throw ArgumentError("gcn: W0 and W1 shapes disagree");
  return matmul(c.ah, p1.weight);
}

// ---------------------------------------------------------------------------

Matrix affine_rows(const Matrix& x, const LayerParams& p) {
  if (x.cols() != p.weight.rows())
    throw ArgumentError("affine: input width " + std::to_string(x.cols()) +
                        " does not match layer inputs " + std::to_string(p.weight.rows()));
  Matrix out = matmul(x, p.weight);
  if (!p.bias.empty())
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += p.bias[c];
  return out;
}

Matrix affine_backward(const Matrix& x, const LayerParams& p, const Matrix& d_out,
                       LayerParams& grad) {
  grad.weight += matmul_tn(x, d_out);
  if (!grad.bias.empty())
    for (std::size_t r = 0; r < d_out.rows(); ++r)
      for (std::size_t c = 0; c < d_out.cols(); ++c) grad.bias[c] += d_out(r, c);
  return matmul_nt(d_out, p.weight);
}

Matrix fnn_forward_rows(const Matrix& x, const std::vector<LayerParams>& layers, FnnCache* cache) {
  if (layers.empty()) throw ArgumentError("fnn: no layers");
  Matrix h = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = affine_rows(h, layers[l]);
    if (cache) {
      cache->inputs.push_back(h);
      cache->pre.push_back(z);
    }
    h = (l + 1 < layers.size()) ? relu(z) : std::move(z);
  }
  return h;
}

Matrix fnn_backward_rows(const FnnCache& cache, const std::vector<LayerParams>& layers,
                         const Matrix& d_out, std::vector<LayerParams>& grads) {
  Matrix d = d_out;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l + 1 < layers.size())
      for (std::size_t i = 0; i < d.size(); ++i)
        if (cache.pre[l].values()[i] <= 0.0) d.values()[i] = 0.0;
    d = affine_backward(cache.inputs[l], layers[l], d, grads[l]);
  }
  return d;
}

std::vector<double> fnn_forward(std::span<const double> x, const std::vector<LayerParams>& layers) {
  const Matrix out = fnn_forward_rows(Matrix::row_vector(x), layers);
  return out.data();
}

// ---------------------------------------------------------------------------

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= s;
  return p;
}

double cross_entropy(std::span<const double> logits, std::size_t target, std::span<double> d_logits) {
  if (target >= logits.size()) throw ArgumentError("cross_entropy: target out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  const double log_z = m + std::log(s);
  if (!d_logits.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) d_logits[i] = std::exp(logits[i] - log_z);
    d_logits[target] -= 1.0;
  }
  return log_z - logits[target];
}

double kl_gaussian(std::span<const double> mu, std::span<const double> sigma2) {
  if (mu.size() != sigma2.size()) throw ArgumentError("kl_gaussian: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(sigma2[i] > 0.0)) throw ArgumentError("kl_gaussian: variance must be positive");
    kl += sigma2[i] + mu[i] * mu[i] - 1.0 - std::log(sigma2[i]);
  }
  return 0.5 * kl;
}

void kl_gaussian_grad(std::span<const double> mu, std::span<const double> sigma2,
                      std::span<double> d_mu, std::span<double> d_sigma2) {
  for (std::size_t i = 0; i < mu.size(); ++i) {
    d_mu[i] = mu[i];
    d_sigma2[i] = 0.5 * (1.0 - 1.0 / sigma2[i]);
  }
}

double bce(double prob, double target, double* d_prob) {
  const double p = std::clamp(prob, kProbClamp, 1.0 - kProbClamp);
  if (d_prob) {
    const bool clamped = prob < kProbClamp || prob > 1.0 - kProbClamp;
    *d_prob = clamped ? 0.0 : -target / p + (1.0 - target) / (1.0 - p);
  }
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

}  // namespace layoutgen
