#include "refnet/graph_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "refnet/autodiff.hpp"
#include "refnet/errors.hpp"
#include "refnet/linalg.hpp"
#include "refnet/rng.hpp"

namespace refnet::graph {

void validate_adjacency(const Tensor& adjacency, std::size_t m) {
    if (adjacency.rank() != 2 || adjacency.rows() != m || adjacency.cols() != m) {
        throw ConfigError("adjacency must be " + std::to_string(m) + "x" + std::to_string(m) + ", got " + adjacency.shape_str());
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double a = adjacency(i, j);
            if (a != 0.0 && a != 1.0) throw ConfigError("adjacency entries must be 0 or 1");
            if (i == j && a != 1.0) throw ConfigError("adjacency must have ones on the diagonal");
        }
}

Tensor stack_columns(const std::vector<Tensor>& blocks) {
    if (blocks.empty()) throw DimensionError("stack_columns: no blocks");
    const std::size_t rows = blocks[0].rows();
    std::size_t cols = 0;
    for (const auto& b : blocks) {
        if (b.rows() != rows) throw DimensionError("stack_columns: blocks differ in row count");
        cols += b.cols();
    }
    Tensor out = Tensor::zeros({rows, cols});
    std::size_t offset = 0;
    for (const auto& b : blocks) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < b.cols(); ++c) out(r, offset + c) = b(r, c);
        offset += b.cols();
    }
    return out;
}

LinearInstance make_instance(std::size_t m, std::size_t d, std::size_t k, const Tensor& adjacency, std::uint64_t seed,
                             const InstanceOptions& options) {
    if (m == 0 || d == 0 || k == 0) throw ConfigError("m, d and k must be positive");
    validate_adjacency(adjacency, m);
    if (options.identity_weights && k != m) throw ConfigError("identity weights need k == m");
    if (!(options.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");

    Rng rng(seed);
    LinearInstance inst;
    inst.m = m;
    inst.d = d;
    inst.k = k;
    inst.adjacency = adjacency;
    inst.noise = options.noise_sigma;

    if (options.identity_weights) {
        inst.weights = Tensor::identity(m);
    } else {
        bool ok = false;
        for (std::size_t attempt = 0; attempt < options.max_resamples && !ok; ++attempt) {
            inst.weights = Tensor::zeros({k, m});
            for (auto& v : inst.weights.data()) v = rng.uniform(-1.0, 1.0);
            ok = k != m || std::abs(linalg::determinant(linalg::matmul(inst.weights, adjacency))) > 1e-6;
        }
        if (!ok) {
            throw RankDeficiencyError("could not draw an invertible W A in " + std::to_string(options.max_resamples) + " attempts",
                                      linalg::rank(linalg::matmul(inst.weights, adjacency)));
        }
    }
    const Tensor wa = linalg::matmul(inst.weights, adjacency);
    inst.weighted_adjacency_rank = linalg::rank(wa);

    const std::size_t samples = std::max<std::size_t>(4, 3 * m);
    for (std::size_t s = 0; s < samples; ++s) {
        Tensor f = Tensor::zeros({m, d});
        for (auto& v : f.data()) v = rng.normal();
        Tensor e = linalg::matmul(wa, f);
        if (options.noise_sigma > 0.0)
            for (auto& v : e.data()) v += options.noise_sigma * rng.normal();
        inst.features.push_back(std::move(f));
        inst.embeddings.push_back(std::move(e));
    }
    return inst;
}

LeastSquaresFit fit_refiner_least_squares(const LinearInstance& instance) {
    const Tensor E = stack_columns(instance.embeddings);
    const Tensor F = stack_columns(instance.features);
    const Tensor Et = E.transposed();
    const Tensor normal = linalg::matmul(E, Et);  // k x k
    const Tensor rhs = linalg::matmul(F, Et);     // m x k

    auto pinv = linalg::psd_pseudo_inverse(normal);
    LeastSquaresFit fit;
    fit.normal_rank = pinv.rank;
    if (pinv.rank < instance.m || pinv.rank == 0) {
        throw RankDeficiencyError("normal matrix has rank " + std::to_string(pinv.rank) + ", need at least m = " +
                                      std::to_string(instance.m),
                                  pinv.rank);
    }
    if (pinv.rank == instance.k) {
        // Gamma^T = (E E^T)^-1 (F E^T)^T
        fit.gamma = linalg::solve(normal, rhs.transposed()).transposed();
    } else {
        fit.gamma = linalg::matmul(rhs, pinv.inverse);
        fit.minimum_norm = true;
    }
    Tensor r = linalg::matmul(fit.gamma, E);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= F[i];
    fit.residual = frobenius_norm(r);
    return fit;
}

std::string to_string(FitLoss loss) { return loss == FitLoss::Mse ? "mse" : "cosine"; }

FitLoss fit_loss_from_string(const std::string& s) {
    if (s == "mse") return FitLoss::Mse;
    if (s == "cosine") return FitLoss::Cosine;
    throw ConfigError("unknown fit loss '" + s + "' (expected mse or cosine)");
}

Tensor initial_gamma(std::size_t m, std::size_t k, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 7));
    Tensor g = Tensor::zeros({m, k});
    for (auto& v : g.data()) v = rng.uniform(-0.5, 0.5);
    return g;
}

GradientFit fit_refiner_gradient(const LinearInstance& instance, FitLoss loss, std::size_t steps, double lr,
                                 const Tensor& init, const GradientOptions& options) {
    if (init.rank() != 2 || init.rows() != instance.m || init.cols() != instance.k) {
        throw DimensionError("initial Gamma must be " + std::to_string(instance.m) + "x" + std::to_string(instance.k) +
                             ", got " + init.shape_str());
    }
    const double n = static_cast<double>(instance.features.size());
    const Tensor raw = stack_columns(instance.embeddings);
    // Whitening: fit Gamma~ on E~ = P E with E~ E~^T = I, then Gamma = Gamma~ P.
    Tensor basis = Tensor::identity(instance.k);
    Tensor start = init;
    if (options.whiten) {
        auto factor = linalg::pivoted_cholesky(linalg::matmul(raw, raw.transposed()));
        if (!factor) throw RankDeficiencyError("embeddings are all zero", 0);
        const Tensor& L = *factor;
        const Tensor Lt = L.transposed();
        basis = linalg::matmul(linalg::inverse(linalg::matmul(Lt, L)), Lt);
        start = linalg::matmul(init, L);
    }
    const ad::Var E(linalg::matmul(basis, raw));
    const ad::Var F(stack_columns(instance.features));
    const std::size_t samples = instance.features.size(), d = instance.d;
    // segment-sum matrix: column s adds up the d entries belonging to sample s
    Tensor seg = Tensor::zeros({samples * d, samples});
    for (std::size_t s = 0; s < samples; ++s)
        for (std::size_t j = 0; j < d; ++j) seg(s * d + j, s) = 1.0;
    const ad::Var S(seg);
    Tensor inv_fnorm = linalg::matmul(
        [&] {
            Tensor sq = F.value();
            for (auto& x : sq.data()) x *= x;
            return sq;
        }(),
        seg);
    for (auto& x : inv_fnorm.data()) {
        if (!(x > ad::kNormEpsilon * ad::kNormEpsilon)) throw DegenerateVectorError("a feature row has zero norm");
        x = 1.0 / std::sqrt(x);
    }
    const ad::Var inv_f(inv_fnorm);

    auto objective = [&](const ad::Var& gamma) {
        ad::Var y = ad::matmul(gamma, E);
        if (loss == FitLoss::Mse) {
            ad::Var diff = ad::sub(y, F);
            return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / n);
        }
        ad::Var dots = ad::matmul(ad::mul(y, F), S);      // m x N
        ad::Var ysq = ad::matmul(ad::mul(y, y), S);       // m x N
        ad::Var inv_y = ad::exp(ad::scale(ad::log(ysq), -0.5));
        ad::Var cos = ad::mul(ad::mul(dots, inv_y), inv_f);
        // sum over modalities of mean over samples of (1 - cos)
        return ad::add_scalar(ad::scale(ad::sum(cos), -1.0 / n), static_cast<double>(instance.m));
    };

    auto normalize_rows = [&](Tensor& g) {
        if (loss != FitLoss::Cosine) return;
        // the objective is invariant to row scale; keep rows on the unit sphere
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double norm = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) norm += g(r, c) * g(r, c);
            norm = std::sqrt(norm);
            if (norm > 0.0)
                for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) /= norm;
        }
    };
    auto diverged = [](std::size_t step, double v) {
        return TrainingError("gradient fit diverged at step " + std::to_string(step) + " (loss " + std::to_string(v) +
                             "); try a smaller learning rate");
    };

    GradientFit fit;
    fit.gamma = start;
    double eta = lr;
    Tensor prev_grad, prev_dir;
    double prev_g2 = 0.0;
    for (std::size_t step = 0; step <= steps; ++step) {
        ad::Var gamma(fit.gamma, true);
        ad::Var value;
        try {
            value = objective(gamma);
        } catch (const NumericError&) {
            throw diverged(step, std::numeric_limits<double>::infinity());
        } catch (const DomainError&) {
            throw DegenerateVectorError("gradient fit reached a zero row in Gamma E at step " + std::to_string(step));
        }
        const double v = value.value().item();
        fit.loss_curve.push_back(v);
        if (!std::isfinite(v) || v > 1e6) throw diverged(step, v);
        if (step == steps) break;
        auto grads = ad::backward(value);
        const Tensor& g = grads[gamma];
        if (!options.backtracking) {
            for (std::size_t i = 0; i < g.size(); ++i) fit.gamma[i] -= lr * g[i];
            continue;
        }
        double g2 = 0.0;
        for (double x : g.data()) g2 += x * x;
        if (std::sqrt(g2) < options.gradient_tolerance) break;
        // Polak-Ribiere+ direction, reset to steepest descent when it is not a descent direction
        Tensor dir = Tensor::zeros(g.shape());
        double beta = 0.0;
        if (options.conjugate && prev_grad.size() == g.size() && prev_g2 > 0.0) {
            double num = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) num += g[i] * (g[i] - prev_grad[i]);
            beta = std::max(0.0, num / prev_g2);
        }
        double slope = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            dir[i] = -g[i] + (beta > 0.0 ? beta * prev_dir[i] : 0.0);
            slope += dir[i] * g[i];
        }
        if (slope >= 0.0) {
            for (std::size_t i = 0; i < g.size(); ++i) dir[i] = -g[i];
            slope = -g2;
        }
        prev_grad = g;
        prev_g2 = g2;
        // Armijo backtracking from a step that grows after each accepted update
        bool stalled = false;
        for (;;) {
            Tensor trial = fit.gamma;
            for (std::size_t i = 0; i < g.size(); ++i) trial[i] += eta * dir[i];
            if (options.normalize_rows) normalize_rows(trial);
            double tv = std::numeric_limits<double>::infinity();
            try {
                tv = objective(ad::Var(trial)).value().item();
            } catch (const Error&) {
            }
            if (tv <= v + 1e-4 * eta * slope) {
                fit.gamma = std::move(trial);
                stalled = v - tv <= 1e-15 * (1.0 + std::abs(v));
                break;
            }
            if (eta < 1e-14) {
                stalled = true;
                break;
            }
            eta *= 0.5;
        }
        if (stalled) break;
        prev_dir = dir;
        eta = std::min(eta * 2.0, options.max_step);
    }
    if (options.whiten) fit.gamma = linalg::matmul(fit.gamma, basis);
    return fit;
}

TheoremCheck verify_theorem(const Tensor& gamma, const Tensor& weights, const Tensor& adjacency, double tol) {
    const Tensor product = linalg::matmul(linalg::matmul(gamma, weights), adjacency);
    if (product.rows() != product.cols()) throw DimensionError("Gamma W A must be square, got " + product.shape_str());
    Tensor diff = product;
    for (std::size_t i = 0; i < diff.rows(); ++i) diff(i, i) -= 1.0;
    TheoremCheck check;
    check.residual = frobenius_norm(diff);
    check.pass = check.residual < tol;
    return check;
}

Tensor rescale_to_unit_diagonal(const Tensor& gamma, const Tensor& weights, const Tensor& adjacency) {
    const Tensor product = linalg::matmul(linalg::matmul(gamma, weights), adjacency);
    Tensor out = gamma;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        const double dii = product(i, i);
        if (dii == 0.0) throw DegenerateVectorError("row " + std::to_string(i) + " of Gamma W A has a zero diagonal");
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) /= dii;
    }
    return out;
}

double off_diagonal_ratio(const Tensor& square) {
    double diag = 0.0, off = 0.0;
    for (std::size_t i = 0; i < square.rows(); ++i)
        for (std::size_t j = 0; j < square.cols(); ++j) (i == j ? diag : off) += square(i, j) * square(i, j);
    return std::sqrt(off) / std::sqrt(diag);
}

AdjacencyRecovery recover_adjacency(const Tensor& gamma, const Tensor& known_weights, const std::optional<Tensor>& true_adjacency,
                                    double threshold) {
    if (gamma.rank() != 2 || gamma.rows() != gamma.cols()) {
        throw DimensionError("adjacency recovery needs a square Gamma (k == m), got " + gamma.shape_str());
    }
    const double det = linalg::determinant(gamma);
    if (!(std::abs(det) > 1e-10)) {
        throw RankDeficiencyError("Gamma is singular (|det| = " + std::to_string(std::abs(det)) + ")", linalg::rank(gamma));
    }
    AdjacencyRecovery out;
    out.weighted_adjacency = linalg::inverse(gamma);
    const Tensor a_hat = linalg::matmul(linalg::inverse(known_weights), out.weighted_adjacency);
    out.adjacency = Tensor::zeros(a_hat.shape());
    for (std::size_t i = 0; i < a_hat.size(); ++i) out.adjacency[i] = std::abs(a_hat[i]) > threshold ? 1.0 : 0.0;
    if (true_adjacency) {
        if (!true_adjacency->same_shape(out.adjacency)) throw DimensionError("true adjacency has the wrong shape");
        std::size_t match = 0;
        for (std::size_t i = 0; i < out.adjacency.size(); ++i) match += out.adjacency[i] == (*true_adjacency)[i];
        out.support_recovery_rate = static_cast<double>(match) / static_cast<double>(out.adjacency.size());
    }
    return out;
}

}  // namespace refnet::graph
