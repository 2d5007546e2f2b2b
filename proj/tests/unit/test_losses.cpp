#include <doctest.h>

#include <cmath>
#include <numeric>

#include "refnet/errors.hpp"
#include "refnet/losses.hpp"
#include "refnet/rng.hpp"

using namespace refnet;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t = Tensor::zeros({r, c});
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

double row_cos(const Tensor& a, const Tensor& b, std::size_t r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
        dot += a(r, c) * b(r, c);
        na += a(r, c) * a(r, c);
        nb += b(r, c) * b(r, c);
    }
    return dot / std::sqrt(na * nb);
}

// Brute-force double loop over ordered pairs.
double ms_oracle(const Tensor& e, const std::vector<int>& labels, const std::vector<bool>& mask, double alpha, double beta,
                 double lambda) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(i);
    long double total = 0.0L;
    for (std::size_t i : idx) {
        long double pos = 0.0L, neg = 0.0L;
        for (std::size_t k : idx) {
            if (k == i) continue;
            double ni = 0.0, nk = 0.0, dot = 0.0;
            for (std::size_t c = 0; c < e.cols(); ++c) {
                ni += e(i, c) * e(i, c);
                nk += e(k, c) * e(k, c);
                dot += e(i, c) * e(k, c);
            }
            const double s = dot / (std::sqrt(ni) * std::sqrt(nk));
            if (labels[i] == labels[k]) {
                pos += std::exp(static_cast<long double>(-alpha * (s - lambda)));
            } else {
                neg += std::exp(static_cast<long double>(beta * (s - lambda)));
            }
        }
        total += std::log1p(pos) / alpha + std::log1p(neg) / beta;
    }
    return static_cast<double>(total / static_cast<long double>(idx.size()));
}

Tensor label_tensor(const std::vector<int>& labels) {
    std::vector<double> v(labels.begin(), labels.end());
    return Tensor::vector(v);
}

double bce(double z, double y) { return -(y * std::log(1.0 / (1.0 + std::exp(-z))) + (1 - y) * std::log(1.0 - 1.0 / (1.0 + std::exp(-z)))); }

}  // namespace

TEST_CASE("refiner loss examples") {
    Rng rng(1);
    Tensor a = random_matrix(4, 3, rng), b = random_matrix(4, 2, rng);
    std::vector<ad::Var> r{ad::Var(a), ad::Var(b)};
    std::vector<double> gamma{0.1, 0.1};
    CHECK(refiner_loss(r, r, gamma).value().item() == doctest::Approx(0.0).epsilon(1e-15));

    std::vector<ad::Var> r1{ad::Var(Tensor::from_rows({{1, 0}}))}, t1{ad::Var(Tensor::from_rows({{0, 1}}))};
    std::vector<double> g1{1.0};
    CHECK(refiner_loss(r1, t1, g1).value().item() == 1.0);

    std::vector<ad::Var> r2{ad::Var(Tensor::from_rows({{1, 1}}))}, t2{ad::Var(Tensor::from_rows({{1, 0}}))};
    CHECK(refiner_loss(r2, t2, g1).value().item() == doctest::Approx(0.2928932188).epsilon(1e-10));
}

TEST_CASE("refiner loss matches a per-row cosine oracle") {
    Rng rng(2);
    Tensor r0 = random_matrix(5, 3, rng), t0 = random_matrix(5, 3, rng), r1 = random_matrix(5, 2, rng), t1 = random_matrix(5, 2, rng);
    std::vector<double> gamma{0.3, 1.7};
    double expected = 0.0;
    for (std::size_t s = 0; s < 5; ++s) {
        expected += gamma[0] * (1.0 - row_cos(r0, t0, s)) / 5.0;
        expected += gamma[1] * (1.0 - row_cos(r1, t1, s)) / 5.0;
    }
    std::vector<ad::Var> r{ad::Var(r0), ad::Var(r1)}, t{ad::Var(t0), ad::Var(t1)};
    CHECK(std::abs(refiner_loss(r, t, gamma).value().item() - expected) < 1e-12);
}

TEST_CASE("refiner loss is invariant to positive row rescaling") {
    Rng rng(3);
    Tensor r0 = random_matrix(6, 4, rng), t0 = random_matrix(6, 4, rng);
    Tensor scaled = r0;
    for (std::size_t s = 0; s < 6; ++s)
        for (std::size_t c = 0; c < 4; ++c) scaled(s, c) *= 0.01 + 10.0 * static_cast<double>(s);
    std::vector<double> gamma{1.0};
    std::vector<ad::Var> a{ad::Var(r0)}, b{ad::Var(scaled)}, t{ad::Var(t0)};
    CHECK(std::abs(refiner_loss(a, t, gamma).value().item() - refiner_loss(b, t, gamma).value().item()) < 1e-10);
}

TEST_CASE("MS loss examples") {
    LossConfig cfg;
    std::vector<bool> one{true};
    CHECK(ms_loss(ad::Var(Tensor::from_rows({{1, 2}})), Tensor::vector({0}), one, cfg).value().item() == 0.0);

    cfg.alpha = 1.0;
    cfg.lambda = 1.0;
    std::vector<bool> two{true, true};
    double v = ms_loss(ad::Var(Tensor::from_rows({{1, 0}, {2, 0}})), Tensor::vector({1, 1}), two, cfg).value().item();
    CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    std::vector<bool> none{false, false};
    CHECK_THROWS(ms_loss(ad::Var(Tensor::from_rows({{1, 0}, {2, 0}})), Tensor::vector({1, 1}), none, cfg));
}

TEST_CASE("MS loss matches the brute-force pairwise oracle") {
    Rng rng(4);
    LossConfig cfg;  // alpha 50, beta 2, lambda 0.5
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.index(8), k = 4;
        Tensor e = random_matrix(n, k, rng);
        std::vector<int> labels(n);
        std::vector<bool> mask(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng.index(2));
            mask[i] = rng.uniform() < 0.8;
        }
        mask[rng.index(n)] = true;
        const double got = ms_loss(ad::Var(e), label_tensor(labels), mask, cfg).value().item();
        CHECK(std::abs(got - ms_oracle(e, labels, mask, cfg.alpha, cfg.beta, cfg.lambda)) < 1e-10);
    }
}

TEST_CASE("MS loss is invariant to batch order") {
    Rng rng(5);
    LossConfig cfg;
    Tensor e = random_matrix(7, 3, rng);
    std::vector<int> labels{0, 1, 1, 0, 2, 2, 1};
    std::vector<bool> mask(7, true);
    std::vector<std::size_t> perm{6, 2, 4, 0, 1, 5, 3};
    Tensor ep = Tensor::zeros({7, 3});
    std::vector<int> lp(7);
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t c = 0; c < 3; ++c) ep(i, c) = e(perm[i], c);
        lp[i] = labels[perm[i]];
    }
    const double a = ms_loss(ad::Var(e), label_tensor(labels), mask, cfg).value().item();
    const double b = ms_loss(ad::Var(ep), label_tensor(lp), mask, cfg).value().item();
    CHECK(std::abs(a - b) < 1e-12);
}

TEST_CASE("MS loss responds to pair similarity in the right direction") {
    LossConfig cfg;
    cfg.alpha = 2.0;  // keep both terms well away from saturation
    std::vector<bool> mask(3, true);
    Tensor labels = Tensor::vector({0, 0, 1});
    auto at = [&](double theta01, double theta02) {
        Tensor e = Tensor::from_rows({{1, 0}, {std::cos(theta01), std::sin(theta01)}, {std::cos(theta02), -std::sin(theta02)}});
        return ms_loss(ad::Var(e), labels, mask, cfg).value().item();
    };
    // positive pair 0-1 moved closer
    CHECK(at(0.5, 1.5) < at(0.8, 1.5));
    // negative pair 0-2 moved closer
    CHECK(at(0.5, 1.2) > at(0.5, 1.5));
}

TEST_CASE("MS loss multi-label positives") {
    Tensor labels = Tensor::from_rows({{1, 0, 1}, {1, 0, 1}, {1, 1, 0}, {0, 1, 0}});
    std::vector<std::size_t> all{0, 1, 2, 3};
    LossConfig exact;
    auto pe = ms_pair_masks(labels, all, exact);
    CHECK(pe.positive(0, 1) == 1.0);
    CHECK(pe.positive(0, 2) == 0.0);
    CHECK(pe.negative(0, 2) == 1.0);
    CHECK(pe.positive(0, 0) == 0.0);
    CHECK(pe.negative(0, 0) == 0.0);
    LossConfig jac;
    jac.positive_rule = PositiveRule::Jaccard;
    jac.jaccard_threshold = 0.3;
    auto pj = ms_pair_masks(labels, all, jac);
    CHECK(pj.positive(0, 2) == 1.0);  // |{0}| / |{0,1,2}| = 1/3
    CHECK(pj.positive(2, 3) == 1.0);  // {0,1} vs {1}: 1/2
    CHECK(pj.positive(0, 3) == 0.0);
    CHECK(pj.negative(0, 3) == 1.0);
}

TEST_CASE("downstream loss examples") {
    std::vector<bool> one{true};
    CHECK(downstream_loss(ad::Var(Tensor::from_rows({{0, 0}})), Tensor::vector({1}), one, TaskKind::SingleLabel).value().item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(downstream_loss(ad::Var(Tensor::from_rows({{30, -30}})), Tensor::vector({0}), one, TaskKind::SingleLabel).value().item() <
          1e-12);

    Tensor z = Tensor::from_rows({{0.5, -1.0, 2.0}, {-0.3, 0.0, 1.5}});
    Tensor y = Tensor::from_rows({{1, 0, 1}, {0, 1, 0}});
    double expected = 0.0;
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t c = 0; c < 3; ++c) expected += bce(z(s, c), y(s, c));
    expected /= 6.0;
    std::vector<bool> both{true, true};
    CHECK(std::abs(downstream_loss(ad::Var(z), y, both, TaskKind::MultiLabel).value().item() - expected) < 1e-12);
}

TEST_CASE("downstream loss skips masked samples and rejects bad labels") {
    Tensor z = Tensor::from_rows({{2.0, -1.0}, {0.0, 5.0}});
    std::vector<bool> first{true, false};
    const double a = downstream_loss(ad::Var(z), Tensor::vector({0, 0}), first, TaskKind::SingleLabel).value().item();
    const double b = downstream_loss(ad::Var(z), Tensor::vector({0, 1}), first, TaskKind::SingleLabel).value().item();
    CHECK(a == b);
    std::vector<bool> none{false, false};
    CHECK_THROWS(downstream_loss(ad::Var(z), Tensor::vector({0, 0}), none, TaskKind::SingleLabel));
    CHECK_THROWS(downstream_loss(ad::Var(z), Tensor::vector({2, 0}), first, TaskKind::SingleLabel));
}

TEST_CASE("downstream loss is non-negative") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor z = random_matrix(4, 3, rng);
        for (auto& v : z.data()) v *= 20.0;
        Tensor y = Tensor::vector({static_cast<double>(rng.index(3)), static_cast<double>(rng.index(3)), 0, 2});
        std::vector<bool> mask(4, true);
        CHECK(downstream_loss(ad::Var(z), y, mask, TaskKind::SingleLabel).value().item() >= 0.0);
    }
}

TEST_CASE("binary downstream loss is the logistic loss") {
    Tensor z = Tensor::from_rows({{0.7}, {-1.2}});
    std::vector<bool> both{true, true};
    const double expected = (bce(0.7, 1.0) + bce(-1.2, 0.0)) / 2.0;
    CHECK(std::abs(downstream_loss(ad::Var(z), Tensor::vector({1, 0}), both, TaskKind::Binary).value().item() - expected) < 1e-12);
}

namespace {

struct Fixture {
    ModelConfig model;
    ParamStore params;
    ModalFeatureBatch batch;

    Fixture() {
        model.input_dims = {3, 4};
        model.embed_dim = 4;
        model.fusion_hidden = 5;
        model.refiner_dims = {3, 2};
        model.num_classes = 2;
        params = init_weights(model, 0);
        Rng rng(0);
        batch.features = {random_matrix(8, 3, rng), random_matrix(8, 4, rng)};
        for (int s = 0; s < 8; ++s) batch.sample_ids.push_back("s" + std::to_string(s));
        batch.labels = Tensor::vector({0, 1, 1, 0, 1, 0, 0, 1});
        batch.label_mask = {true, true, false, true, true, false, true, true};
    }
};

}  // namespace

TEST_CASE("train loss reduces to the downstream loss without refiner or MS") {
    Fixture f;
    LossConfig cfg;
    cfg.gamma = {0.0, 0.0};
    auto bound = bind(f.params, true);
    TrainLoss l = train_loss(f.model, bound, f.batch, cfg);
    auto feats = feature_vars(f.batch);
    auto emb = FusionModule(f.model).forward(bound, feats);
    auto logits = DownstreamHead(f.model).forward(bound, emb);
    CHECK(l.total.value().item() == downstream_loss(logits, *f.batch.labels, f.batch.label_mask, f.model.task).value().item());
}

TEST_CASE("train loss equals the sum of independently computed terms") {
    Fixture f;
    LossConfig cfg;
    cfg.gamma = {0.1, 0.1};
    cfg.zeta = 0.1;
    auto bound = bind(f.params, false);
    TrainLoss l = train_loss(f.model, bound, f.batch, cfg);

    auto feats = feature_vars(f.batch);
    auto emb = FusionModule(f.model).forward(bound, feats);
    auto logits = DownstreamHead(f.model).forward(bound, emb);
    const double down = downstream_loss(logits, *f.batch.labels, f.batch.label_mask, f.model.task).value().item();
    RefinerModule refiner(f.model);
    auto decoded = refiner.forward(bound, emb);
    auto targets = refiner.targets(bound, feats);
    double ref = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t s = 0; s < 8; ++s) ref += 0.1 * (1.0 - row_cos(decoded[i].value(), targets[i].value(), s)) / 8.0;
    std::vector<int> labels;
    for (double v : f.batch.labels->data()) labels.push_back(static_cast<int>(v));
    const double ms = ms_oracle(emb.value(), labels, f.batch.label_mask, cfg.alpha, cfg.beta, cfg.lambda);

    CHECK(std::abs(l.downstream - down) < 1e-12);
    CHECK(std::abs(l.refiner - ref) < 1e-12);
    CHECK(std::abs(l.ms - ms) < 1e-12);
    CHECK(std::abs(l.total.value().item() - (down + ref + 0.1 * ms)) < 1e-12);
}

TEST_CASE("a perfectly reconstructing refiner contributes nothing") {
    Fixture f;
    f.model.input_dims = {4, 4};
    f.model.refiner_dims = {4, 4};
    f.model.fusion_hidden = 0;
    f.model.refiner_hidden = 4;
    f.model.activation = Activation::Relu;
    f.params = init_weights(f.model, 1);
    Rng rng(2);
    // nonnegative features, identity fusion for modality 0 only
    Tensor x = random_matrix(8, 4, rng);
    for (auto& v : x.data()) v = std::abs(v) + 0.1;
    f.batch.features = {x, x};
    Tensor w = Tensor::zeros({8, 4});
    for (std::size_t i = 0; i < 4; ++i) w(i, i) = 1.0;
    f.params.at("fusion.out.weight") = w;
    for (int i = 0; i < 2; ++i) {
        f.params.at("refiner." + std::to_string(i) + ".hidden.weight") = Tensor::identity(4);
        f.params.at("refiner." + std::to_string(i) + ".out.weight") = Tensor::identity(4);
    }
    LossConfig cfg;
    cfg.gamma = {1.0, 1.0};
    cfg.zeta = 0.1;
    TrainLoss l = train_loss(f.model, bind(f.params, false), f.batch, cfg);
    CHECK(l.refiner == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::abs(l.total.value().item() - (l.downstream + 0.1 * l.ms)) < 1e-15);
}

TEST_CASE("a batch without visible labels is a pure self-supervised step") {
    Fixture f;
    std::fill(f.batch.label_mask.begin(), f.batch.label_mask.end(), false);
    LossConfig cfg;
    cfg.gamma = {0.1, 0.1};
    cfg.zeta = 0.1;
    TrainLoss l = train_loss(f.model, bind(f.params, true), f.batch, cfg);
    CHECK_FALSE(l.supervised);
    CHECK(l.downstream == 0.0);
    CHECK(l.ms == 0.0);
    CHECK(l.total.value().item() == l.refiner);
    CHECK(l.has_gradient);
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    cfg.gamma = {0.1};
    CHECK_THROWS_AS(cfg.validate(2), ConfigError);
    cfg.gamma = {0.1, -1.0};
    CHECK_THROWS_AS(cfg.validate(2), ConfigError);
    cfg.gamma = {0.1, 0.1};
    cfg.zeta = -0.5;
    CHECK_THROWS_AS(cfg.validate(2), ConfigError);
}
