#include <doctest.h>

#include <cmath>
#include <string>

#include "refnet/errors.hpp"
#include "refnet/graph_recovery.hpp"
#include "refnet/linalg.hpp"

using namespace refnet;
using namespace refnet::graph;

namespace {

Tensor upper_edge() { return Tensor::from_rows({{1, 1}, {0, 1}}); }

Tensor chain(std::size_t m) {
    Tensor a = Tensor::identity(m);
    for (std::size_t i = 0; i + 1 < m; ++i) a(i, i + 1) = 1.0;
    return a;
}

Tensor wa(const LinearInstance& inst) { return linalg::matmul(inst.weights, inst.adjacency); }

}  // namespace

TEST_CASE("identity system embeds the features unchanged") {
    InstanceOptions opts;
    opts.identity_weights = true;
    auto inst = make_instance(3, 5, 3, Tensor::identity(3), 1, opts);
    for (std::size_t s = 0; s < inst.features.size(); ++s) CHECK(inst.embeddings[s] == inst.features[s]);
}

TEST_CASE("hand expansion of a two-modality edge") {
    InstanceOptions opts;
    opts.identity_weights = true;
    auto inst = make_instance(2, 4, 2, upper_edge(), 2, opts);
    for (std::size_t s = 0; s < inst.features.size(); ++s) {
        const Tensor& f = inst.features[s];
        const Tensor& e = inst.embeddings[s];
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(e(0, c) == f(0, c) + f(1, c));
            CHECK(e(1, c) == f(1, c));
        }
    }
}

TEST_CASE("clean instances satisfy E = W A F exactly") {
    auto inst = make_instance(3, 6, 5, chain(3), 3);
    Tensor w = wa(inst);
    for (std::size_t s = 0; s < inst.features.size(); ++s) CHECK(inst.embeddings[s] == linalg::matmul(w, inst.features[s]));
}

TEST_CASE("invalid adjacency is rejected") {
    CHECK_THROWS_AS(validate_adjacency(Tensor::from_rows({{0, 1}, {0, 1}}), 2), ConfigError);
    CHECK_THROWS_AS(validate_adjacency(Tensor::from_rows({{1, 2}, {0, 1}}), 2), ConfigError);
    CHECK_THROWS_AS(validate_adjacency(Tensor::identity(3), 2), ConfigError);
}

TEST_CASE("least squares on the identity system gives the identity") {
    InstanceOptions opts;
    opts.identity_weights = true;
    auto fit = fit_refiner_least_squares(make_instance(3, 6, 3, Tensor::identity(3), 4, opts));
    CHECK(max_abs_diff(fit.gamma, Tensor::identity(3)) < 1e-10);
}

TEST_CASE("least squares inverts a known 2x2 system") {
    InstanceOptions opts;
    opts.identity_weights = true;
    auto fit = fit_refiner_least_squares(make_instance(2, 5, 2, upper_edge(), 5, opts));
    CHECK(max_abs_diff(fit.gamma, Tensor::from_rows({{1, -1}, {0, 1}})) < 1e-10);
}

TEST_CASE("least squares theorem and lemma on random instances") {
    for (std::size_t m : {2, 3, 5}) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            auto inst = make_instance(m, 6, m, chain(m), 100 * m + seed);
            auto fit = fit_refiner_least_squares(inst);
            CHECK(fit.residual < 1e-8);
            CHECK_FALSE(fit.minimum_norm);
            auto check = verify_theorem(fit.gamma, inst.weights, inst.adjacency, 1e-8);
            CHECK(check.pass);
            CHECK(check.residual < 1e-8);
            CHECK(max_abs_diff(linalg::inverse(fit.gamma), wa(inst)) < 1e-6);
            auto rec = recover_adjacency(fit.gamma, inst.weights, inst.adjacency);
            CHECK(rec.adjacency == inst.adjacency);
            REQUIRE(rec.support_recovery_rate.has_value());
            CHECK(*rec.support_recovery_rate == 1.0);
        }
    }
}

TEST_CASE("wide embeddings still satisfy the identity") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto inst = make_instance(3, 6, 5, chain(3), seed);
        auto fit = fit_refiner_least_squares(inst);
        CHECK(fit.minimum_norm);
        CHECK(fit.normal_rank == 3);
        CHECK(verify_theorem(fit.gamma, inst.weights, inst.adjacency, 1e-8).pass);
    }
}

TEST_CASE("recovery with A = I returns W") {
    auto inst = make_instance(3, 6, 3, Tensor::identity(3), 7);
    auto fit = fit_refiner_least_squares(inst);
    auto rec = recover_adjacency(fit.gamma, inst.weights);
    CHECK(max_abs_diff(rec.weighted_adjacency, inst.weights) < 1e-8);
    CHECK_FALSE(rec.support_recovery_rate.has_value());
}

TEST_CASE("noisy instances report a recovery rate") {
    InstanceOptions opts;
    opts.noise_sigma = 0.01;
    auto inst = make_instance(3, 6, 3, chain(3), 8, opts);
    auto fit = fit_refiner_least_squares(inst);
    auto rec = recover_adjacency(fit.gamma, inst.weights, inst.adjacency);
    REQUIRE(rec.support_recovery_rate.has_value());
    CHECK(*rec.support_recovery_rate >= 0.0);
    CHECK(*rec.support_recovery_rate <= 1.0);
    CHECK(fit.residual > 0.0);
}

TEST_CASE("verify_theorem failure cases") {
    auto inst = make_instance(3, 6, 3, chain(3), 9);
    auto zero = verify_theorem(Tensor::zeros({3, 3}), inst.weights, inst.adjacency, 1e-8);
    CHECK_FALSE(zero.pass);
    CHECK(zero.residual == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
    auto fit = fit_refiner_least_squares(inst);
    Tensor doubled = fit.gamma;
    for (auto& v : doubled.data()) v *= 2.0;
    auto d = verify_theorem(doubled, inst.weights, inst.adjacency, 1e-8);
    CHECK_FALSE(d.pass);
    CHECK(std::abs(d.residual - std::sqrt(3.0)) < 1e-8);
}

TEST_CASE("mse gradient descent converges to the least-squares refiner") {
    auto inst = make_instance(2, 6, 2, upper_edge(), 10);
    auto ls = fit_refiner_least_squares(inst);
    auto fit = fit_refiner_gradient(inst, FitLoss::Mse, 20000, 0.05, initial_gamma(2, 2, 10));
    Tensor diff = fit.gamma;
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= ls.gamma[i];
    CHECK(frobenius_norm(diff) < 1e-3);
    CHECK(fit.loss_curve.back() < fit.loss_curve.front());
}

TEST_CASE("zero steps return the initialisation") {
    auto inst = make_instance(3, 6, 4, chain(3), 11);
    Tensor init = initial_gamma(3, 4, 11);
    for (auto loss : {FitLoss::Mse, FitLoss::Cosine}) {
        auto fit = fit_refiner_gradient(inst, loss, 0, 0.1, init);
        CHECK(fit.gamma == init);
        CHECK(fit.loss_curve.size() == 1);
    }
}

TEST_CASE("divergence is reported with a hint") {
    auto inst = make_instance(3, 6, 3, chain(3), 12);
    try {
        fit_refiner_gradient(inst, FitLoss::Mse, 500, 50.0, initial_gamma(3, 3, 12));
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("learning rate") != std::string::npos);
    }
}

TEST_CASE("cosine fit reaches a diagonal system up to row scale") {
    for (std::size_t m : {2, 3}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto inst = make_instance(m, 6, m, chain(m), 200 + seed);
            GradientOptions opts;
            opts.backtracking = true;
            opts.whiten = true;
            auto fit = fit_refiner_gradient(inst, FitLoss::Cosine, 2000, 0.1, initial_gamma(m, m, seed), opts);
            Tensor product = linalg::matmul(fit.gamma, wa(inst));
            CHECK(off_diagonal_ratio(product) < 1e-2);
            for (std::size_t i = 0; i < m; ++i) CHECK(product(i, i) > 0.0);
            Tensor rescaled = rescale_to_unit_diagonal(fit.gamma, inst.weights, inst.adjacency);
            CHECK(verify_theorem(rescaled, inst.weights, inst.adjacency, 1e-2).pass);
        }
    }
}

TEST_CASE("off-diagonal ratio") {
    CHECK(off_diagonal_ratio(Tensor::identity(3)) == 0.0);
    CHECK(off_diagonal_ratio(Tensor::from_rows({{2, 0}, {1, 0}})) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("fit loss names") {
    CHECK(fit_loss_from_string(to_string(FitLoss::Cosine)) == FitLoss::Cosine);
    CHECK(fit_loss_from_string(to_string(FitLoss::Mse)) == FitLoss::Mse);
    CHECK_THROWS_AS(fit_loss_from_string("l1"), ConfigError);
}
