#include "refnet/losses.hpp"

#include <cmath>

#include "refnet/errors.hpp"

namespace refnet {

bool LossConfig::refiner_enabled() const {
    for (double g : gamma)
        if (g != 0.0) return true;
    return false;
}

void LossConfig::validate(std::size_t modalities) const {
    if (gamma.size() != modalities) {
        throw ConfigError("gamma has " + std::to_string(gamma.size()) + " entries for " + std::to_string(modalities) +
                          " modalities");
    }
    for (double g : gamma)
        if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("gamma entries must be finite and non-negative");
    if (!(zeta >= 0.0) || !std::isfinite(zeta)) throw ConfigError("zeta must be finite and non-negative");
    if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("alpha and beta must be positive");
    if (!std::isfinite(lambda)) throw ConfigError("lambda must be finite");
    if (positive_rule == PositiveRule::Jaccard && !(jaccard_threshold >= 0.0 && jaccard_threshold <= 1.0)) {
        throw ConfigError("jaccard_threshold must lie in [0, 1]");
    }
}

ad::Var refiner_loss(std::span<const ad::Var> decoded, std::span<const ad::Var> targets, std::span<const double> gamma) {
    if (decoded.size() != targets.size() || decoded.size() != gamma.size()) {
        throw DimensionError("refiner_loss: " + std::to_string(decoded.size()) + " decoded sets, " +
                             std::to_string(targets.size()) + " targets, " + std::to_string(gamma.size()) + " weights");
    }
    ad::Var total;
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        if (gamma[i] == 0.0) continue;
        if (!decoded[i].value().same_shape(targets[i].value())) {
            throw DimensionError("refiner_loss: modality " + std::to_string(i) + " decoded " + decoded[i].value().shape_str() +
                                 " vs target " + targets[i].value().shape_str());
        }
        ad::Var cos;
        try {
            cos = ad::row_cosine(decoded[i], targets[i]);
        } catch (const DegenerateVectorError& e) {
            throw DegenerateVectorError("refiner loss, modality " + std::to_string(i) + ": " + e.what());
        }
        ad::Var term = ad::scale(ad::add_scalar(ad::neg(ad::mean(cos)), 1.0), gamma[i]);
        total = total.valid() ? ad::add(total, term) : term;
    }
    if (!total.valid()) return ad::Var(Tensor::scalar(0.0));
    return total;
}

namespace {

std::size_t class_index(const Tensor& labels, std::size_t s) {
    double v = labels[s];
    if (!(v >= 0.0) || v != std::floor(v)) throw DomainError("label " + std::to_string(v) + " is not a class index", s);
    return static_cast<std::size_t>(v);
}

bool is_positive_pair(const Tensor& labels, std::size_t a, std::size_t b, const LossConfig& config) {
    if (labels.rank() != 2) return class_index(labels, a) == class_index(labels, b);
    std::size_t inter = 0, uni = 0;
    bool identical = true;
    for (std::size_t c = 0; c < labels.cols(); ++c) {
        bool x = labels(a, c) != 0.0, y = labels(b, c) != 0.0;
        inter += (x && y);
        uni += (x || y);
        identical = identical && (x == y);
    }
    if (config.positive_rule == PositiveRule::ExactMatch) return identical;
    double jaccard = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return jaccard >= config.jaccard_threshold;
}

}  // namespace

PairMasks ms_pair_masks(const Tensor& labels, std::span<const std::size_t> samples, const LossConfig& config) {
    const std::size_t t = samples.size();
    PairMasks masks{Tensor::zeros({t, t}), Tensor::zeros({t, t})};
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t k = 0; k < t; ++k) {
            if (i == k) continue;
            if (is_positive_pair(labels, samples[i], samples[k], config))
                masks.positive(i, k) = 1.0;
            else
                masks.negative(i, k) = 1.0;
        }
    return masks;
}

ad::Var ms_loss(const ad::Var& embedding, const Tensor& labels, const std::vector<bool>& mask, const LossConfig& config) {
    const Tensor& E = embedding.value();
    if (E.rank() != 2) throw DimensionError("ms_loss: embedding must be a matrix, got " + E.shape_str());
    if (mask.size() != E.rows()) throw DimensionError("ms_loss: mask length does not match the batch");
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < mask.size(); ++s)
        if (mask[s]) idx.push_back(s);
    if (idx.empty()) throw Error("ms_loss: no masked-in samples");

    PairMasks pairs = ms_pair_masks(labels, idx, config);
    ad::Var z = ad::take_rows(embedding, idx);
    if (config.similarity == SimilarityMode::Cosine) z = ad::l2_normalize_rows(z);
    ad::Var sim;
    try {
        sim = ad::matmul(z, ad::transpose(z));
    } catch (const NumericError&) {
        throw NumericError("ms_loss: non-finite similarity");
    }
    ad::Var shifted = ad::add_scalar(sim, -config.lambda);
    ad::Var pos = ad::scale(ad::masked_log1p_sum_exp_rows(ad::scale(shifted, -config.alpha), pairs.positive), 1.0 / config.alpha);
    ad::Var neg = ad::scale(ad::masked_log1p_sum_exp_rows(ad::scale(shifted, config.beta), pairs.negative), 1.0 / config.beta);
    return ad::mean(ad::add(pos, neg));
}

ad::Var downstream_loss(const ad::Var& logits, const Tensor& labels, const std::vector<bool>& mask, TaskKind task) {
    const Tensor& Z = logits.value();
    if (Z.rank() != 2) throw DimensionError("downstream_loss: logits must be a matrix, got " + Z.shape_str());
    const std::size_t n = Z.rows(), c = Z.cols();
    if (mask.size() != n) throw DimensionError("downstream_loss: mask length does not match the logits");
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < n; ++s)
        if (mask[s]) idx.push_back(s);
    if (idx.empty()) throw Error("downstream_loss: all samples are masked out");

    ad::Var z = ad::take_rows(logits, idx);
    Tensor target = Tensor::zeros({idx.size(), c});
    switch (task) {
        case TaskKind::SingleLabel: {
            if (labels.rank() != 1 || labels.size() != n) {
                throw DimensionError("downstream_loss: single-label targets must be a length-" + std::to_string(n) + " vector");
            }
            for (std::size_t k = 0; k < idx.size(); ++k) {
                std::size_t cls = class_index(labels, idx[k]);
                if (cls >= c) {
                    throw DomainError("label " + std::to_string(cls) + " out of range for " + std::to_string(c) + " classes", idx[k]);
                }
                target(k, cls) = 1.0;
            }
            ad::Var picked = ad::sum(ad::mul(z, ad::Var(target)), 1);
            return ad::mean(ad::sub(ad::logsumexp_rows(z), picked));
        }
        case TaskKind::Binary:
        case TaskKind::MultiLabel: {
            if (task == TaskKind::Binary) {
                if (c != 1) throw DimensionError("downstream_loss: binary task needs one logit per sample, got " + Z.shape_str());
                if (labels.size() != n) throw DimensionError("downstream_loss: binary targets must have one entry per sample");
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    std::size_t cls = class_index(labels, idx[k]);
                    if (cls > 1) throw DomainError("binary label must be 0 or 1", idx[k]);
                    target(k, 0) = static_cast<double>(cls);
                }
            } else {
                if (labels.rank() != 2 || labels.rows() != n || labels.cols() != c) {
                    throw DimensionError("downstream_loss: multi-label targets must be " + std::to_string(n) + "x" +
                                         std::to_string(c) + ", got " + labels.shape_str());
                }
                for (std::size_t k = 0; k < idx.size(); ++k)
                    for (std::size_t j = 0; j < c; ++j) {
                        double y = labels(idx[k], j);
                        if (y != 0.0 && y != 1.0) throw DomainError("multi-label targets must be 0 or 1", idx[k]);
                        target(k, j) = y;
                    }
            }
            // -[y log s(z) + (1-y) log(1 - s(z))] = softplus(z) - y z
            return ad::mean(ad::sub(ad::softplus(z), ad::mul(ad::Var(target), z)));
        }
    }
    throw ConfigError("downstream_loss: unknown task kind");
}

namespace {

void add_term(ad::Var& total, const ad::Var& term) { total = total.valid() ? ad::add(total, term) : term; }

}  // namespace

TrainLoss train_loss(const ModelConfig& model, const BoundParams& params, const ModalFeatureBatch& batch,
                     const LossConfig& config) {
    config.validate(model.modalities());
    auto features = feature_vars(batch);
    ad::Var embedding = FusionModule(model).forward(params, features);

    TrainLoss out;
    ad::Var total;
    out.supervised = batch.labels.has_value() && batch.labeled_count() > 0;
    if (out.supervised) {
        ad::Var logits = DownstreamHead(model).forward(params, embedding);
        ad::Var down = downstream_loss(logits, *batch.labels, batch.label_mask, model.task);
        out.downstream = down.value().item();
        add_term(total, down);
    }
    if (config.refiner_enabled()) {
        RefinerModule refiner(model);
        auto decoded = refiner.forward(params, embedding);
        auto targets = refiner.targets(params, features);
        ad::Var ref = refiner_loss(decoded, targets, config.gamma);
        out.refiner = ref.value().item();
        add_term(total, ref);
    }
    if (config.zeta > 0.0 && out.supervised) {
        ad::Var ms = ms_loss(embedding, *batch.labels, batch.label_mask, config);
        out.ms = ms.value().item();
        add_term(total, ad::scale(ms, config.zeta));
    }
    out.has_gradient = total.valid() && total.requires_grad();
    out.total = total.valid() ? total : ad::Var(Tensor::scalar(0.0));
    return out;
}

TrainLoss pretrain_loss(const ModelConfig& model, const BoundParams& params, const ModalFeatureBatch& batch,
                        const LossConfig& config) {
    config.validate(model.modalities());
    auto features = feature_vars(batch);
    ad::Var embedding = FusionModule(model).forward(params, features);
    RefinerModule refiner(model);
    auto decoded = refiner.forward(params, embedding);
    auto targets = refiner.targets(params, features);
    TrainLoss out;
    out.total = refiner_loss(decoded, targets, config.gamma);
    out.refiner = out.total.value().item();
    out.has_gradient = out.total.requires_grad();
    return out;
}

}  // namespace refnet
