#pragma once

// Small dense linear algebra on Tensor matrices, built on Gaussian elimination
// with partial pivoting.

#include <cstddef>
#include <optional>

#include "refnet/tensor.hpp"

namespace refnet::linalg {

Tensor matmul(const Tensor& a, const Tensor& b);

struct LuResult {
    Tensor lu;                         // packed L (unit diagonal, below) and U (on and above)
    std::vector<std::size_t> pivots;   // row permutation
    int sign = 1;                      // parity of the permutation
    bool singular = false;
};

/// Gaussian elimination with partial pivoting. A pivot with |p| <= tol * max|a| marks the matrix singular.
LuResult lu_decompose(const Tensor& a, double tol = 1e-14);

double determinant(const Tensor& a);

/// Solves a X = b for square a; throws RankDeficiencyError when a is singular.
Tensor solve(const Tensor& a, const Tensor& b);

Tensor inverse(const Tensor& a);

/// Numerical rank from elimination with full pivoting, relative tolerance `tol`.
std::size_t rank(const Tensor& a, double tol = 1e-10);

/// Full-rank factor L (n x r) with G = L L^T for a symmetric PSD matrix, by Cholesky with
/// diagonal pivoting; stops when the largest remaining pivot is <= tol * max diag(G).
/// Empty when G is numerically zero.
std::optional<Tensor> pivoted_cholesky(const Tensor& g, double tol = 1e-10);

/// Moore-Penrose pseudo-inverse of a symmetric positive semi-definite matrix,
/// from a pivoted full-rank factorisation G = L L^T: G+ = L (L^T L)^-1 (L^T L)^-1 L^T.
struct PsdPseudoInverse {
    Tensor inverse;
    std::size_t rank = 0;
};
PsdPseudoInverse psd_pseudo_inverse(const Tensor& g, double tol = 1e-10);

}  // namespace refnet::linalg
