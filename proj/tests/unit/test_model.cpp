#include <doctest.h>

#include <cmath>
#include <numeric>

#include "refnet/errors.hpp"
#include "refnet/losses.hpp"
#include "refnet/model.hpp"
#include "refnet/rng.hpp"

using namespace refnet;

namespace {

ModalFeatureBatch make_batch(std::vector<Tensor> features) {
    ModalFeatureBatch b;
    b.features = std::move(features);
    for (std::size_t s = 0; s < b.features[0].rows(); ++s) b.sample_ids.push_back("s" + std::to_string(s));
    b.label_mask.assign(b.size(), false);
    return b;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t = Tensor::zeros({r, c});
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

ModelConfig small_config() {
    ModelConfig c;
    c.input_dims = {3, 4};
    c.embed_dim = 5;
    c.fusion_hidden = 6;
    c.refiner_hidden = 4;
    c.refiner_dims = {3, 2};
    c.num_classes = 3;
    return c;
}

}  // namespace

TEST_CASE("identity fusion passes features through") {
    ModelConfig c;
    c.input_dims = {3};
    c.embed_dim = 3;
    ParamStore p;
    p.add("fusion.out.weight", Tensor::identity(3));
    p.add("fusion.out.bias", Tensor::zeros({3}));
    Rng rng(1);
    auto batch = make_batch({random_matrix(4, 3, rng)});
    auto out = FusionModule(c).forward(bind(p, false), feature_vars(batch));
    CHECK(out.value() == batch.features[0]);
}

TEST_CASE("zero fusion weights give a zero embedding") {
    ModelConfig c = small_config();
    ParamStore p = init_weights(c, 3);
    for (auto& [name, t] : p.entries())
        if (name.rfind("fusion.", 0) == 0)
            for (auto& v : t.data()) v = 0.0;
    Rng rng(2);
    auto batch = make_batch({random_matrix(5, 3, rng), random_matrix(5, 4, rng)});
    Tensor e = ReFNetModel(c, p).fuse(batch);
    for (double v : e.data()) CHECK(v == 0.0);
}

TEST_CASE("hand-set affine fusion matches matrix arithmetic") {
    ModelConfig c;
    c.input_dims = {2, 2};
    c.embed_dim = 2;
    ParamStore p;
    // x = [f0 | f1] (1x4), W is 4x2
    p.add("fusion.out.weight", Tensor::from_rows({{1, 2}, {0, -1}, {0.5, 0}, {3, 1}}));
    p.add("fusion.out.bias", Tensor::vector({0.25, -0.5}));
    auto batch = make_batch({Tensor::from_rows({{1, 2}}), Tensor::from_rows({{-1, 0.5}})});
    Tensor e = FusionModule(c).forward(bind(p, false), feature_vars(batch)).value();
    const double e0 = 1 * 1 + 2 * 0 + -1 * 0.5 + 0.5 * 3 + 0.25;
    const double e1 = 1 * 2 + 2 * -1 + -1 * 0 + 0.5 * 1 - 0.5;
    CHECK(std::abs(e(0, 0) - e0) < 1e-12);
    CHECK(std::abs(e(0, 1) - e1) < 1e-12);
}

TEST_CASE("identity decoders reproduce the embedding") {
    ModelConfig c;
    c.input_dims = {3, 3};
    c.embed_dim = 3;
    c.activation = Activation::Relu;
    ParamStore p;
    for (int i = 0; i < 2; ++i) {
        const std::string prefix = "refiner." + std::to_string(i);
        p.add(prefix + ".hidden.weight", Tensor::identity(3));
        p.add(prefix + ".hidden.bias", Tensor::zeros({3}));
        p.add(prefix + ".out.weight", Tensor::identity(3));
        p.add(prefix + ".out.bias", Tensor::zeros({3}));
    }
    Tensor emb = Tensor::from_rows({{0.5, 1.0, 2.0}, {3.0, 0.25, 0.0}});
    auto r = RefinerModule(c).forward(bind(p, false), ad::Var(emb));
    REQUIRE(r.size() == 2);
    CHECK(r[0].value() == emb);
    CHECK(r[1].value() == emb);
}

TEST_CASE("zero decoders give zero outputs and a degenerate refiner loss") {
    ModelConfig c = small_config();
    ParamStore p = init_weights(c, 5);
    for (auto& [name, t] : p.entries())
        if (name.rfind("refiner.", 0) == 0)
            for (auto& v : t.data()) v = 0.0;
    Rng rng(6);
    Tensor emb = random_matrix(3, 5, rng);
    auto bound = bind(p, false);
    auto r = RefinerModule(c).forward(bound, ad::Var(emb));
    for (const auto& v : r)
        for (double x : v.value().data()) CHECK(x == 0.0);
    std::vector<ad::Var> targets{ad::Var(random_matrix(3, 3, rng)), ad::Var(random_matrix(3, 2, rng))};
    std::vector<double> gamma{1.0, 1.0};
    CHECK_THROWS_AS(refiner_loss(r, targets, gamma), DegenerateVectorError);
}

TEST_CASE("hand-set one-hidden-layer decoder") {
    ModelConfig c;
    c.input_dims = {1};
    c.embed_dim = 2;
    c.refiner_hidden = 2;
    ParamStore p;
    p.add("refiner.0.hidden.weight", Tensor::from_rows({{0.5, -1.0}, {2.0, 0.25}}));
    p.add("refiner.0.hidden.bias", Tensor::vector({0.1, -0.2}));
    p.add("refiner.0.out.weight", Tensor::from_rows({{1.5}, {-0.75}}));
    p.add("refiner.0.out.bias", Tensor::vector({0.05}));
    Tensor emb = Tensor::from_rows({{0.3, -0.4}});
    auto r = RefinerModule(c).forward(bind(p, false), ad::Var(emb));
    const double h0 = std::tanh(0.3 * 0.5 + -0.4 * 2.0 + 0.1);
    const double h1 = std::tanh(0.3 * -1.0 + -0.4 * 0.25 - 0.2);
    CHECK(std::abs(r[0].value()(0, 0) - (1.5 * h0 - 0.75 * h1 + 0.05)) < 1e-12);
}

TEST_CASE("zero head gives uniform probabilities") {
    ModelConfig c = small_config();
    ParamStore p = init_weights(c, 7);
    for (auto& [name, t] : p.entries())
        if (name.rfind("head.", 0) == 0)
            for (auto& v : t.data()) v = 0.0;
    Rng rng(8);
    Tensor logits = ReFNetModel(c, p).predict(random_matrix(4, 5, rng));
    for (double v : logits.data()) CHECK(v == 0.0);
    Tensor labels = Tensor::vector({0, 1, 2, 0});
    std::vector<bool> mask(4, true);
    CHECK(downstream_loss(ad::Var(logits), labels, mask, TaskKind::SingleLabel).value().item() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("binary head on hand-set weights") {
    ModelConfig c;
    c.input_dims = {2};
    c.embed_dim = 2;
    c.task = TaskKind::Binary;
    c.num_classes = 2;
    ParamStore p;
    p.add("head.hidden.weight", Tensor::from_rows({{0.5}, {-2.0}}));
    p.add("head.hidden.bias", Tensor::vector({0.1}));
    p.add("head.out.weight", Tensor::from_rows({{3.0}}));
    p.add("head.out.bias", Tensor::vector({-0.2}));
    Tensor z = DownstreamHead(c).forward(bind(p, false), ad::Var(Tensor::from_rows({{1.0, 0.25}}))).value();
    REQUIRE(z.rows() == 1);
    REQUIRE(z.cols() == 1);
    CHECK(std::abs(z(0, 0) - (3.0 * std::tanh(0.5 - 0.5 + 0.1) - 0.2)) < 1e-12);
}

TEST_CASE("logits are n x C for random configurations") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        ModelConfig c;
        const std::size_t m = 1 + rng.index(3);
        for (std::size_t i = 0; i < m; ++i) c.input_dims.push_back(1 + rng.index(5));
        c.embed_dim = 1 + rng.index(6);
        c.fusion_hidden = rng.index(4);
        c.num_classes = 2 + rng.index(4);
        c.task = static_cast<TaskKind>(rng.index(3));
        const std::size_t n = 1 + rng.index(7);
        std::vector<Tensor> feats;
        for (auto d : c.input_dims) feats.push_back(random_matrix(n, d, rng));
        ReFNetModel model = ReFNetModel::initialize(c, trial);
        Tensor logits = model.predict(model.fuse(make_batch(feats)));
        CHECK(logits.rows() == n);
        CHECK(logits.cols() == c.output_dim());
    }
}

TEST_CASE("init_weights is seeded") {
    ModelConfig c = small_config();
    CHECK(init_weights(c, 42) == init_weights(c, 42));
    CHECK_FALSE(init_weights(c, 42) == init_weights(c, 43));
    const ParamStore params = init_weights(c, 0);
    for (const auto& [name, t] : params.entries()) {
        if (name.size() > 5 && name.substr(name.size() - 5) == ".bias")
            for (double v : t.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("initial weights are centred") {
    ModelConfig c;
    c.input_dims = {50, 50};
    c.embed_dim = 100;
    ParamStore p = init_weights(c, 1);
    const Tensor& w = p.at("fusion.out.weight");
    REQUIRE(w.size() >= 10000);
    double sum = 0.0;
    for (double v : w.data()) sum += v;
    const double s = std::sqrt(6.0 / (100.0 + 100.0));
    const double sigma = s / std::sqrt(3.0) / std::sqrt(static_cast<double>(w.size()));
    CHECK(std::abs(sum / static_cast<double>(w.size())) < 3.0 * sigma);
    for (double v : w.data()) CHECK(std::abs(v) <= s);
}

TEST_CASE("identity targets keep the feature space") {
    ModelConfig c = small_config();
    CHECK(c.identity_target(0));
    CHECK_FALSE(c.identity_target(1));
    ParamStore p = init_weights(c, 4);
    CHECK_FALSE(p.contains("target.0.weight"));
    CHECK(p.contains("target.1.weight"));
    CHECK_FALSE(p.contains("target.1.bias"));
    Rng rng(3);
    std::vector<ad::Var> feats{ad::Var(random_matrix(2, 3, rng)), ad::Var(random_matrix(2, 4, rng))};
    auto t = RefinerModule(c).targets(bind(p, false), feats);
    CHECK(t[0].value() == feats[0].value());
    CHECK(t[1].value().cols() == 2);
}

TEST_CASE("outputs are row-equivariant") {
    ModelConfig c = small_config();
    ReFNetModel model = ReFNetModel::initialize(c, 9);
    Rng rng(11);
    auto batch = make_batch({random_matrix(6, 3, rng), random_matrix(6, 4, rng)});
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    auto shuffled = batch.subset(perm);
    Tensor e = model.fuse(batch), es = model.fuse(shuffled);
    Tensor z = model.predict(e), zs = model.predict(es);
    auto r = model.refine(e), rs = model.refine(es);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        CHECK(es.row(i) == e.row(perm[i]));
        CHECK(zs.row(i) == z.row(perm[i]));
        for (std::size_t m = 0; m < r.size(); ++m) CHECK(rs[m].row(i) == r[m].row(perm[i]));
    }
    CHECK(model.fuse(batch) == e);
}

TEST_CASE("checkpoint JSON round-trips bit-exactly") {
    ParamStore p = init_weights(small_config(), 17);
    nlohmann::ordered_json j = params_to_json(p);
    CHECK(params_from_json(nlohmann::ordered_json::parse(j.dump())) == p);
}

TEST_CASE("mismatched feature widths are rejected") {
    ReFNetModel model = ReFNetModel::initialize(small_config(), 0);
    Rng rng(1);
    CHECK_THROWS_AS(model.fuse(make_batch({random_matrix(2, 3, rng), random_matrix(2, 5, rng)})), ConfigError);
}
