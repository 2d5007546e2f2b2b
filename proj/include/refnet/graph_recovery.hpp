#pragma once

// Linear fusion systems E = W A F and linear refiners Gamma. With exact fitting,
// Gamma W A = I_m; when k == m, Gamma^-1 = W A and A follows from the known W.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "refnet/tensor.hpp"

namespace refnet::graph {

struct LinearInstance {
    std::size_t m = 0;  // modalities
    std::size_t d = 0;  // feature length
    std::size_t k = 0;  // embedding rows
    Tensor adjacency;   // m x m, 0/1, unit diagonal
    Tensor weights;     // k x m
    std::vector<Tensor> features;    // m x d each
    std::vector<Tensor> embeddings;  // k x d each
    double noise = 0.0;
    std::size_t weighted_adjacency_rank = 0;
};

struct InstanceOptions {
    double noise_sigma = 0.0;
    bool identity_weights = false;  // W = I (requires k == m)
    std::size_t max_resamples = 100;
};

/// Draws W ~ U[-1, 1] (resampled until |det(WA)| > 1e-6 when k == m) and max(4, 3m)
/// Gaussian feature matrices; Gaussian noise of the given sigma is added to E.
LinearInstance make_instance(std::size_t m, std::size_t d, std::size_t k, const Tensor& adjacency, std::uint64_t seed,
                             const InstanceOptions& options = {});

void validate_adjacency(const Tensor& adjacency, std::size_t m);

/// Horizontal stack of the per-sample matrices.
Tensor stack_columns(const std::vector<Tensor>& blocks);

struct LeastSquaresFit {
    Tensor gamma;               // m x k
    double residual = 0.0;      // ||Gamma E - F||_F over all samples
    std::size_t normal_rank = 0;
    bool minimum_norm = false;  // normal matrix was rank deficient (k > m) and the min-norm solution was used
};

/// Closed-form Gamma = F E^T (E E^T)^-1 by Gaussian elimination with partial pivoting.
/// When k > m the normal matrix has rank m and its pseudo-inverse gives the minimum-norm
/// solution; a rank below m cannot satisfy the identity and raises RankDeficiencyError.
LeastSquaresFit fit_refiner_least_squares(const LinearInstance& instance);

enum class FitLoss { Mse, Cosine };
std::string to_string(FitLoss loss);
FitLoss fit_loss_from_string(const std::string& s);

struct GradientFit {
    Tensor gamma;
    std::vector<double> loss_curve;  // loss before each step, then the final loss
};

/// Deterministic initial Gamma used by fit_refiner_gradient: U[-0.5, 0.5] entries.
Tensor initial_gamma(std::size_t m, std::size_t k, std::uint64_t seed);

/// Plain gradient descent on mean_s ||Gamma E_s - F_s||_F^2 (mse) or on
/// sum_i mean_s (1 - cos(row_i(Gamma E_s), row_i(F_s))) (cosine).
struct GradientOptions {
    // Armijo backtracking: lr is the first trial step, doubled after each accepted update
    bool backtracking = false;
    double max_step = 1e3;
    // nonlinear conjugate gradient directions (Polak-Ribiere+) under the same line search
    bool conjugate = false;
    // stop once the gradient norm falls below this, or when a step no longer lowers the loss
    double gradient_tolerance = 1e-12;
    // cosine only: rescale rows of Gamma to unit norm after each accepted backtracking step
    bool normalize_rows = false;
    // optimise in whitened embedding coordinates (same objective, better conditioned)
    bool whiten = false;
};

GradientFit fit_refiner_gradient(const LinearInstance& instance, FitLoss loss, std::size_t steps, double lr,
                                 const Tensor& init, const GradientOptions& options = {});

struct TheoremCheck {
    double residual = 0.0;  // ||Gamma W A - I_m||_F
    bool pass = false;
};

TheoremCheck verify_theorem(const Tensor& gamma, const Tensor& weights, const Tensor& adjacency, double tol);

/// Scales each row of Gamma so that Gamma W A has a unit diagonal.
Tensor rescale_to_unit_diagonal(const Tensor& gamma, const Tensor& weights, const Tensor& adjacency);

/// ||offdiag(M)||_F / ||diag(M)||_F.
double off_diagonal_ratio(const Tensor& square);

struct AdjacencyRecovery {
    Tensor weighted_adjacency;  // Gamma^-1
    Tensor adjacency;           // 1 where |(W^-1 Gamma^-1)_ij| > threshold
    std::optional<double> support_recovery_rate;
};

inline constexpr double kAdjacencyThreshold = 0.5;

AdjacencyRecovery recover_adjacency(const Tensor& gamma, const Tensor& known_weights,
                                    const std::optional<Tensor>& true_adjacency = std::nullopt,
                                    double threshold = kAdjacencyThreshold);

}  // namespace refnet::graph
