#pragma once

#include <vector>

#include "layoutgen/matrix.hpp"

namespace layoutgen {

/// Eigenpairs of a symmetric matrix, eigenvalues ascending; column j of
/// `vectors` belongs to `values[j]`.
struct SymmetricEigen {
  std::vector<double> values;
  Matrix vectors;
};

/// Cyclic Jacobi rotations. Throws ArgumentError for non-square or
/// non-symmetric input.
SymmetricEigen symmetric_eigen(const Matrix& a);

/// I - D^{-1/2} A D^{-1/2}; isolated nodes get a unit diagonal entry.
Matrix normalized_laplacian(const Matrix& a);

/// D~^{-1/2} (A + I) D~^{-1/2} with D~ the degree matrix of A + I.
Matrix normalize_adjacency(const Matrix& a);

/// Gradient of a scalar loss with respect to A, given its gradient with
/// respect to normalize_adjacency(A). Entries of A are treated as independent.
Matrix normalize_adjacency_backward(const Matrix& a, const Matrix& d_normalized);

/// n x k node features: eigenvectors of the normalized Laplacian for the k
/// smallest eigenvalues after the first, unit norm, largest-magnitude entry
/// positive (first such entry on ties), zero columns beyond n - 1.
/// Weighted symmetric adjacency with non-negative entries is accepted.
Matrix spectral_embedding(const Matrix& a, std::size_t k);

}  // namespace layoutgen
