#include "layoutgen/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "layoutgen/errors.hpp"

namespace layoutgen {

namespace {

void require_square_symmetric(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) throw ArgumentError(std::string(what) + ": matrix is not square");
  if (!is_symmetric(a, 1e-12)) throw ArgumentError(std::string(what) + ": matrix is not symmetric");
}

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

}  // namespace

SymmetricEigen symmetric_eigen(const Matrix& input) {
  require_square_symmetric(input, "symmetric_eigen");
  const std::size_t n = input.rows();
  Matrix a = input;
  Matrix v = Matrix::identity(n);

  double scale = 0.0;
  for (double x : a.values()) scale = std::max(scale, std::abs(x));
  const double tol = 1e-15 * std::max(scale, 1e-300);

  for (int sweep = 0; sweep < 100 && off_diagonal_norm(a) > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
  SymmetricEigen out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

Matrix normalized_laplacian(const Matrix& a) {
  require_square_symmetric(a, "normalized_laplacian");
  const std::size_t n = a.rows();
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a(i, j);
    inv_sqrt[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      l(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt[i] * a(i, j) * inv_sqrt[j];
  return l;
}

Matrix normalize_adjacency(const Matrix& a) {
  require_square_symmetric(a, "normalize_adjacency");
  const std::size_t n = a.rows();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t j = 0; j < n; ++j) d += a(i, j);
    if (!(d > 0.0)) throw ArgumentError("normalize_adjacency: non-positive degree");
    inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out(i, j) = inv_sqrt[i] * (a(i, j) + (i == j ? 1.0 : 0.0)) * inv_sqrt[j];
  return out;
}

Matrix normalize_adjacency_backward(const Matrix& a, const Matrix& g) {
  // out_ij = s_i B_ij s_j with B = A + I, s_i = d_i^{-1/2}, d_i = sum_j B_ij.
  const std::size_t n = a.rows();
  std::vector<double> s(n), d(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = 1.0;
    for (std::size_t j = 0; j < n; ++j) d[i] += a(i, j);
    s[i] = 1.0 / std::sqrt(d[i]);
  }
  std::vector<double> d_deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double ds = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double b_ij = a(i, j) + (i == j ? 1.0 : 0.0);
      const double b_ji = a(j, i) + (i == j ? 1.0 : 0.0);
      ds += g(i, j) * b_ij * s[j] + g(j, i) * b_ji * s[j];
    }
    d_deg[i] = ds * (-0.5) * s[i] / d[i];
  }
  Matrix out(n, n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l) out(k, l) = g(k, l) * s[k] * s[l] + d_deg[k];
  return out;
}

Matrix spectral_embedding(const Matrix& a, std::size_t k) {
  if (a.rows() == 0) throw ArgumentError("spectral_embedding: empty graph");
  if (k == 0) throw ArgumentError("spectral_embedding: k must be at least 1");
  const std::size_t n = a.rows();
  for (double x : a.values())
    if (x < 0.0) throw ArgumentError("spectral_embedding: negative edge weight");
  const SymmetricEigen eig = symmetric_eigen(normalized_laplacian(a));

  Matrix x(n, k);
  for (std::size_t c = 0; c < k && c + 1 < n; ++c) {
    const std::size_t src = c + 1;
    double norm = 0.0, max_abs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      norm += eig.vectors(i, src) * eig.vectors(i, src);
      max_abs = std::max(max_abs, std::abs(eig.vectors(i, src)));
    }
    norm = std::sqrt(norm);
    double sign = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (std::abs(eig.vectors(i, src)) >= max_abs - 1e-9) {
        sign = eig.vectors(i, src) < 0.0 ? -1.0 : 1.0;
        break;
      }
    for (std::size_t i = 0; i < n; ++i) x(i, c) = sign * eig.vectors(i, src) / norm;
  }
  return x;
}

}  // namespace layoutgen
