#include "refnet/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "refnet/errors.hpp"

namespace refnet::linalg {

namespace {

void require_square(const char* op, const Tensor& a) {
    if (a.rank() != 2 || a.rows() != a.cols()) {
        throw DimensionError(std::string(op) + ": expected a square matrix, got " + a.shape_str());
    }
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: cannot multiply " + a.shape_str() + " by " + b.shape_str());
    }
    const std::size_t m = a.rows(), n = a.cols(), p = b.cols();
    Tensor out = Tensor::zeros({m, p});
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = A[i * n + k];
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < p; ++j) C[i * p + j] += aik * B[k * p + j];
        }
    return out;
}

LuResult lu_decompose(const Tensor& a, double tol) {
    require_square("lu_decompose", a);
    const std::size_t n = a.rows();
    LuResult res{a, std::vector<std::size_t>(n), 1, false};
    std::iota(res.pivots.begin(), res.pivots.end(), std::size_t{0});
    Tensor& lu = res.lu;
    const double threshold = tol * std::max(max_abs(a), 1e-300);

    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(lu(r, col)) > std::abs(lu(piv, col))) piv = r;
        if (std::abs(lu(piv, col)) <= threshold) {
            res.singular = true;
            continue;
        }
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(lu(piv, c), lu(col, c));
            std::swap(res.pivots[piv], res.pivots[col]);
            res.sign = -res.sign;
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            double f = lu(r, col) / lu(col, col);
            lu(r, col) = f;
            for (std::size_t c = col + 1; c < n; ++c) lu(r, c) -= f * lu(col, c);
        }
    }
    return res;
}

double determinant(const Tensor& a) {
    auto res = lu_decompose(a, 0.0);
    double det = res.sign;
    for (std::size_t i = 0; i < a.rows(); ++i) det *= res.lu(i, i);
    return det;
}

Tensor solve(const Tensor& a, const Tensor& b) {
    require_square("solve", a);
    if (b.rank() != 2 || b.rows() != a.rows()) {
        throw DimensionError("solve: right-hand side " + b.shape_str() + " does not match " + a.shape_str());
    }
    auto res = lu_decompose(a);
    if (res.singular) {
        std::size_t r = rank(a);
        throw RankDeficiencyError("solve: singular matrix (numerical rank " + std::to_string(r) + " of " +
                                      std::to_string(a.rows()) + ")",
                                  r);
    }
    const std::size_t n = a.rows(), m = b.cols();
    Tensor x = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) x(i, j) = b(res.pivots[i], j);
    // forward substitution with unit-lower L
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < i; ++k) {
            double l = res.lu(i, k);
            for (std::size_t j = 0; j < m; ++j) x(i, j) -= l * x(k, j);
        }
    // back substitution with U
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t k = ii + 1; k < n; ++k) {
            double u = res.lu(ii, k);
            for (std::size_t j = 0; j < m; ++j) x(ii, j) -= u * x(k, j);
        }
        for (std::size_t j = 0; j < m; ++j) x(ii, j) /= res.lu(ii, ii);
    }
    return x;
}

Tensor inverse(const Tensor& a) {
    require_square("inverse", a);
    return solve(a, Tensor::identity(a.rows()));
}

std::size_t rank(const Tensor& a, double tol) {
    if (a.rank() != 2) throw DimensionError("rank: expected a matrix, got " + a.shape_str());
    Tensor m = a;
    const std::size_t rows = m.rows(), cols = m.cols();
    const double threshold = tol * std::max(max_abs(a), 1e-300);
    std::vector<std::size_t> col_order(cols);
    std::iota(col_order.begin(), col_order.end(), std::size_t{0});
    std::size_t r = 0;
    for (; r < std::min(rows, cols); ++r) {
        // full pivoting: largest remaining entry
        std::size_t pr = r, pc = r;
        for (std::size_t i = r; i < rows; ++i)
            for (std::size_t j = r; j < cols; ++j)
                if (std::abs(m(i, j)) > std::abs(m(pr, pc))) {
                    pr = i;
                    pc = j;
                }
        if (std::abs(m(pr, pc)) <= threshold) break;
        for (std::size_t j = 0; j < cols; ++j) std::swap(m(pr, j), m(r, j));
        for (std::size_t i = 0; i < rows; ++i) std::swap(m(i, pc), m(i, r));
        for (std::size_t i = r + 1; i < rows; ++i) {
            double f = m(i, r) / m(r, r);
            for (std::size_t j = r; j < cols; ++j) m(i, j) -= f * m(r, j);
        }
    }
    return r;
}

std::optional<Tensor> pivoted_cholesky(const Tensor& g, double tol) {
    require_square("pivoted_cholesky", g);
    const std::size_t n = g.rows();
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, g(i, i));
    const double threshold = tol * std::max(max_diag, 1e-300);

    // Pivoted Cholesky: columns of L are built in pivot order, rows stay in original order.
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = g(i, i);
    std::vector<bool> used(n, false);
    std::vector<std::vector<double>> columns;
    while (columns.size() < n) {
        std::size_t p = n;
        for (std::size_t i = 0; i < n; ++i)
            if (!used[i] && (p == n || diag[i] > diag[p])) p = i;
        if (p == n || diag[p] <= threshold) break;
        used[p] = true;
        std::vector<double> col(n, 0.0);
        double pivot = std::sqrt(diag[p]);
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i] && i != p) continue;
            double s = g(i, p);
            for (const auto& prev : columns) s -= prev[i] * prev[p];
            col[i] = s / pivot;
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!used[i]) diag[i] -= col[i] * col[i];
        columns.push_back(std::move(col));
    }
    const std::size_t r = columns.size();
    if (r == 0) return std::nullopt;
    Tensor L = Tensor::zeros({n, r});
    for (std::size_t j = 0; j < r; ++j)
        for (std::size_t i = 0; i < n; ++i) L(i, j) = columns[j][i];
    return L;
}

PsdPseudoInverse psd_pseudo_inverse(const Tensor& g, double tol) {
    require_square("psd_pseudo_inverse", g);
    const std::size_t n = g.rows();
    auto factor = pivoted_cholesky(g, tol);
    if (!factor) return {Tensor::zeros({n, n}), 0};
    const Tensor& L = *factor;
    const std::size_t r = L.cols();
    Tensor Lt = L.transposed();
    Tensor M = inverse(matmul(Lt, L));
    Tensor pinv = matmul(matmul(L, matmul(M, M)), Lt);
    return {std::move(pinv), r};
}

}  // namespace refnet::linalg
