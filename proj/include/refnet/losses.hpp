#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "refnet/autodiff.hpp"
#include "refnet/batch.hpp"
#include "refnet/model.hpp"

namespace refnet {

/// How pairwise similarities inside the Multi-Similarity loss are measured.
enum class SimilarityMode { Cosine, RawDot };
/// When two multi-label samples count as a positive pair.
enum class PositiveRule { ExactMatch, Jaccard };

struct LossConfig {
    std::vector<double> gamma;  // per-modality refiner weights
    double zeta = 0.0;          // Multi-Similarity weight
    double alpha = 50.0;
    double beta = 2.0;
    double lambda = 0.5;
    SimilarityMode similarity = SimilarityMode::Cosine;
    PositiveRule positive_rule = PositiveRule::ExactMatch;
    double jaccard_threshold = 0.5;

    bool refiner_enabled() const;
    void validate(std::size_t modalities) const;
};

/// sum_i gamma_i * mean_s (1 - cos(R_i[s], target_i[s])). Modalities with gamma_i = 0 are skipped.
ad::Var refiner_loss(std::span<const ad::Var> decoded, std::span<const ad::Var> targets, std::span<const double> gamma);

/// Positive and negative pair masks among the given samples (diagonal excluded).
struct PairMasks {
    Tensor positive;
    Tensor negative;
};
PairMasks ms_pair_masks(const Tensor& labels, std::span<const std::size_t> samples, const LossConfig& config);

/// Multi-Similarity loss over the masked-in rows of `embedding`, averaged over anchors.
ad::Var ms_loss(const ad::Var& embedding, const Tensor& labels, const std::vector<bool>& mask, const LossConfig& config);

/// Mean over masked-in samples of softmax cross-entropy (single-label) or the
/// per-class logistic loss averaged over classes (multi-label, binary).
ad::Var downstream_loss(const ad::Var& logits, const Tensor& labels, const std::vector<bool>& mask, TaskKind task);

struct TrainLoss {
    ad::Var total;
    double downstream = 0.0;
    double refiner = 0.0;
    double ms = 0.0;
    bool supervised = false;  // batch held at least one visible label
    bool has_gradient = false;
};

/// downstream + sum_i gamma_i C_i + zeta * MS. The refiner term uses every sample,
/// the downstream and MS terms only masked-in ones. A batch without visible labels
/// contributes 0 for those two terms.
TrainLoss train_loss(const ModelConfig& model, const BoundParams& params, const ModalFeatureBatch& batch,
                     const LossConfig& config);

/// sum_i gamma_i C_i alone, used by the pretraining phase.
TrainLoss pretrain_loss(const ModelConfig& model, const BoundParams& params, const ModalFeatureBatch& batch,
                        const LossConfig& config);

}  // namespace refnet
