#include "refnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "refnet/errors.hpp"
#include "refnet/losses.hpp"
#include "refnet/model.hpp"
#include "refnet/rng.hpp"

namespace refnet::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

ad::Var reduce_to_scalar(const ad::Var& out, const Tensor& weights) {
    if (out.value().size() == 1) return out;
    return ad::sum(ad::mul(out, ad::Var(weights)));
}

Tensor projection_weights(const Tensor::Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::zeros(shape);
    for (auto& v : w.data()) v = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return w;
}

double evaluate(const Case& c, const std::vector<Tensor>& inputs, const Tensor& weights) {
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.emplace_back(t, false);
    return reduce_to_scalar(c.fn(vars), weights).value().item();
}

}  // namespace

bool Report::pass() const {
    return std::all_of(cases.begin(), cases.end(), [](const CaseResult& r) { return r.pass; });
}

nlohmann::ordered_json Report::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["tolerance"] = tolerance;
    j["relative_floor"] = floor;
    j["pass"] = pass();
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const auto& r : cases) {
        nlohmann::ordered_json e{{"op", r.name}, {"entries", r.entries_checked}, {"max_rel_error", r.max_error}, {"pass", r.pass}};
        if (!r.error.empty()) e["error"] = r.error;
        list.push_back(e);
    }
    j["cases"] = list;
    return j;
}

CaseResult check_case(const Case& c, double step, double tolerance, double floor, std::uint64_t seed) {
    CaseResult result;
    result.name = c.name;
    try {
        std::vector<ad::Var> leaves;
        for (const auto& t : c.inputs) leaves.emplace_back(t, true);
        ad::Var out = c.fn(leaves);
        const Tensor weights = projection_weights(out.value().shape(), seed);
        auto grads = ad::backward(reduce_to_scalar(out, weights));

        std::vector<Tensor> probe = c.inputs;
        for (std::size_t k = 0; k < probe.size(); ++k) {
            const Tensor analytic = grads.contains(leaves[k]) ? grads[leaves[k]] : Tensor::zeros(probe[k].shape());
            for (std::size_t i = 0; i < probe[k].size(); ++i) {
                const double original = probe[k][i];
                probe[k][i] = original + step;
                const double up = evaluate(c, probe, weights);
                probe[k][i] = original - step;
                const double down = evaluate(c, probe, weights);
                probe[k][i] = original;
                const double numeric = (up - down) / (2.0 * step);
                result.max_error = std::max(result.max_error, relative_error(analytic[i], numeric, floor));
                ++result.entries_checked;
            }
        }
        result.pass = result.max_error < tolerance;
    } catch (const std::exception& e) {
        result.error = e.what();
        result.pass = false;
    }
    return result;
}

Report run(const std::vector<Case>& cases, double step, double tolerance, double floor, std::uint64_t seed) {
    Report report;
    report.step = step;
    report.tolerance = tolerance;
    report.floor = floor;
    for (std::size_t i = 0; i < cases.size(); ++i) report.cases.push_back(check_case(cases[i], step, tolerance, floor, derive_seed(seed, i)));
    return report;
}

namespace {

// Random inputs kept at least `margin` away from the kinks of relu and from ties.
Tensor gaussian(Rng& rng, Tensor::Shape shape, double margin = 0.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data()) {
        v = rng.normal();
        if (margin > 0.0 && std::abs(v) < margin) v = v < 0.0 ? v - margin : v + margin;
    }
    return t;
}

Tensor positive(Rng& rng, Tensor::Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data()) v = 0.2 + 2.0 * rng.uniform();
    return t;
}

// Entries separated by at least 0.05, so max has a unique argmax well beyond the FD step.
Tensor distinct(Rng& rng, Tensor::Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    auto perm = rng.permutation(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * static_cast<double>(perm[i]) - 0.3 + 0.04 * rng.uniform();
    return t;
}

ModalFeatureBatch composite_batch(Rng& rng, const ModelConfig& model, std::size_t n, bool multi_label) {
    ModalFeatureBatch b;
    for (std::size_t s = 0; s < n; ++s) b.sample_ids.push_back("s" + std::to_string(s));
    for (auto d : model.input_dims) b.features.push_back(gaussian(rng, {n, d}));
    if (multi_label) {
        Tensor y = Tensor::zeros({n, model.num_classes});
        for (auto& v : y.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        b.labels = y;
    } else {
        std::vector<double> y(n);
        for (std::size_t s = 0; s < n; ++s) y[s] = static_cast<double>(s % model.num_classes);
        b.labels = Tensor::vector(y);
    }
    b.label_mask.assign(n, true);
    b.label_mask[n - 1] = false;
    return b;
}

Case composite_case(std::string name, const ModelConfig& model, ModalFeatureBatch batch, LossConfig loss, bool pretrain,
                    std::uint64_t seed) {
    ParamStore params = init_weights(model, seed);
    // Non-zero biases so their gradients are exercised away from the initial point.
    Rng rng(derive_seed(seed, 99));
    for (auto& [pname, t] : params.entries())
        if (pname.size() > 5 && pname.substr(pname.size() - 5) == ".bias")
            for (auto& v : t.data()) v = 0.1 * rng.normal();
    std::vector<std::string> names;
    std::vector<Tensor> inputs;
    for (const auto& [pname, t] : params.entries()) {
        names.push_back(pname);
        inputs.push_back(t);
    }
    return {std::move(name), std::move(inputs),
            [model, batch = std::move(batch), loss = std::move(loss), names, pretrain](std::span<const ad::Var> in) {
                BoundParams bound;
                for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], in[i]);
                return pretrain ? pretrain_loss(model, bound, batch, loss).total : train_loss(model, bound, batch, loss).total;
            }};
}

}  // namespace

std::vector<Case> default_cases(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Case> cases;
    using Span = std::span<const ad::Var>;

    cases.push_back({"matmul", {gaussian(rng, {3, 4}), gaussian(rng, {4, 2})}, [](Span x) { return ad::matmul(x[0], x[1]); }});
    cases.push_back({"transpose", {gaussian(rng, {2, 3})}, [](Span x) { return ad::transpose(x[0]); }});
    cases.push_back({"add", {gaussian(rng, {2, 3}), gaussian(rng, {2, 3})}, [](Span x) { return ad::add(x[0], x[1]); }});
    cases.push_back({"sub", {gaussian(rng, {2, 3}), gaussian(rng, {2, 3})}, [](Span x) { return ad::sub(x[0], x[1]); }});
    cases.push_back({"mul", {gaussian(rng, {2, 3}), gaussian(rng, {2, 3})}, [](Span x) { return ad::mul(x[0], x[1]); }});
    cases.push_back({"scale", {gaussian(rng, {4})}, [](Span x) { return ad::scale(x[0], -2.5); }});
    cases.push_back({"add_scalar", {gaussian(rng, {4})}, [](Span x) { return ad::add_scalar(x[0], 0.75); }});
    cases.push_back({"relu", {gaussian(rng, {3, 3}, 1e-3)}, [](Span x) { return ad::relu(x[0]); }});
    cases.push_back({"tanh", {gaussian(rng, {3, 3})}, [](Span x) { return ad::tanh(x[0]); }});
    cases.push_back({"exp", {gaussian(rng, {3, 3})}, [](Span x) { return ad::exp(x[0]); }});
    cases.push_back({"log", {positive(rng, {3, 3})}, [](Span x) { return ad::log(x[0]); }});
    cases.push_back({"sigmoid", {gaussian(rng, {3, 3})}, [](Span x) { return ad::sigmoid(x[0]); }});
    cases.push_back({"softplus", {gaussian(rng, {3, 3})}, [](Span x) { return ad::softplus(x[0]); }});
    cases.push_back({"sum", {gaussian(rng, {3, 4})}, [](Span x) { return ad::sum(x[0]); }});
    cases.push_back({"sum_axis0", {gaussian(rng, {3, 4})}, [](Span x) { return ad::sum(x[0], 0); }});
    cases.push_back({"sum_axis1", {gaussian(rng, {3, 4})}, [](Span x) { return ad::sum(x[0], 1); }});
    cases.push_back({"mean", {gaussian(rng, {3, 4})}, [](Span x) { return ad::mean(x[0]); }});
    cases.push_back({"mean_axis0", {gaussian(rng, {3, 4})}, [](Span x) { return ad::mean(x[0], 0); }});
    cases.push_back({"mean_axis1", {gaussian(rng, {3, 4})}, [](Span x) { return ad::mean(x[0], 1); }});
    cases.push_back({"max", {distinct(rng, {3, 4})}, [](Span x) { return ad::max(x[0]); }});
    cases.push_back({"max_axis0", {distinct(rng, {3, 4})}, [](Span x) { return ad::max(x[0], 0); }});
    cases.push_back({"max_axis1", {distinct(rng, {3, 4})}, [](Span x) { return ad::max(x[0], 1); }});
    cases.push_back({"add_row", {gaussian(rng, {3, 4}), gaussian(rng, {4})}, [](Span x) { return ad::add_row(x[0], x[1]); }});
    cases.push_back({"concat_cols",
                     {gaussian(rng, {3, 2}), gaussian(rng, {3, 4})},
                     [](Span x) { return ad::concat_cols(x); }});
    cases.push_back({"take_rows", {gaussian(rng, {4, 3})}, [](Span x) {
                         const std::size_t rows[] = {2, 0, 2};
                         return ad::take_rows(x[0], rows);
                     }});
    cases.push_back({"cosine_similarity",
                     {gaussian(rng, {5}), gaussian(rng, {5})},
                     [](Span x) { return ad::cosine_similarity(x[0], x[1]); }});
    cases.push_back({"row_cosine", {gaussian(rng, {3, 4}), gaussian(rng, {3, 4})}, [](Span x) { return ad::row_cosine(x[0], x[1]); }});
    cases.push_back({"l2_normalize_rows", {gaussian(rng, {3, 4})}, [](Span x) { return ad::l2_normalize_rows(x[0]); }});
    cases.push_back({"log1p_sum_exp", {gaussian(rng, {5})}, [](Span x) { return ad::log1p_sum_exp(x[0]); }});
    {
        Tensor mask = Tensor::from_rows({{0, 1, 1, 0}, {1, 0, 0, 0}, {0, 0, 0, 0}});
        cases.push_back({"masked_log1p_sum_exp_rows", {gaussian(rng, {3, 4})},
                         [mask](Span x) { return ad::masked_log1p_sum_exp_rows(x[0], mask); }});
    }
    cases.push_back({"logsumexp_rows", {gaussian(rng, {3, 4})}, [](Span x) { return ad::logsumexp_rows(x[0]); }});

    // -- losses --
    cases.push_back({"refiner_loss",
                     {gaussian(rng, {4, 3}), gaussian(rng, {4, 3}), gaussian(rng, {4, 2}), gaussian(rng, {4, 2})},
                     [](Span x) {
                         const ad::Var decoded[] = {x[0], x[2]};
                         const ad::Var targets[] = {x[1], x[3]};
                         const double gamma[] = {0.1, 0.3};
                         return refiner_loss(decoded, targets, gamma);
                     }});
    {
        LossConfig cfg;
        cfg.gamma = {};
        cfg.alpha = 50.0;
        cfg.beta = 2.0;
        cfg.lambda = 0.5;
        Tensor labels = Tensor::vector({0, 1, 0, 1, 1, 0});
        std::vector<bool> mask{true, true, true, false, true, true};
        cases.push_back({"ms_loss", {gaussian(rng, {6, 4})},
                         [cfg, labels, mask](Span x) { return ms_loss(x[0], labels, mask, cfg); }});
        LossConfig raw = cfg;
        raw.similarity = SimilarityMode::RawDot;
        raw.alpha = 2.0;
        cases.push_back({"ms_loss_raw_dot", {gaussian(rng, {6, 3})},
                         [raw, labels, mask](Span x) { return ms_loss(x[0], labels, mask, raw); }});
    }
    {
        Tensor labels = Tensor::vector({2, 0, 1, 1});
        std::vector<bool> mask{true, true, false, true};
        cases.push_back({"downstream_single_label", {gaussian(rng, {4, 3})},
                         [labels, mask](Span x) { return downstream_loss(x[0], labels, mask, TaskKind::SingleLabel); }});
        Tensor multi = Tensor::from_rows({{1, 0, 1}, {0, 0, 1}, {1, 1, 0}, {0, 1, 0}});
        cases.push_back({"downstream_multi_label", {gaussian(rng, {4, 3})},
                         [multi, mask](Span x) { return downstream_loss(x[0], multi, mask, TaskKind::MultiLabel); }});
        Tensor binary = Tensor::vector({1, 0, 0, 1});
        cases.push_back({"downstream_binary", {gaussian(rng, {4, 1})},
                         [binary, mask](Span x) { return downstream_loss(x[0], binary, mask, TaskKind::Binary); }});
    }
    {
        ModelConfig model;
        model.input_dims = {3, 4};
        model.embed_dim = 4;
        model.fusion_hidden = 5;
        model.refiner_hidden = 3;
        model.refiner_dims = {3, 2};
        model.num_classes = 3;
        LossConfig loss;
        loss.gamma = {0.1, 0.1};
        loss.zeta = 0.1;
        ModalFeatureBatch batch = composite_batch(rng, model, 6, false);
        cases.push_back(composite_case("train_loss", model, batch, loss, false, derive_seed(seed, 1)));
        cases.push_back(composite_case("pretrain_loss", model, batch, loss, true, derive_seed(seed, 2)));

        ModelConfig multi = model;
        multi.task = TaskKind::MultiLabel;
        multi.fusion_hidden = 0;
        multi.refiner_dims = {};
        multi.activation = Activation::Tanh;
        cases.push_back(composite_case("train_loss_multi_label", multi, composite_batch(rng, multi, 6, true), loss, false,
                                       derive_seed(seed, 3)));
    }
    return cases;
}

}  // namespace refnet::gradcheck
