#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "refnet/model.hpp"
#include "refnet/tensor.hpp"

namespace refnet::metrics {

struct ClassCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

/// Per-class TP/FP/FN for n x C 0/1 prediction and label matrices.
std::vector<ClassCounts> class_counts(const Tensor& preds, const Tensor& labels);

/// Mean over classes of 2 p_j r_j / (p_j + r_j); a class with p_j + r_j = 0 contributes 0.
double macro_f1(const Tensor& preds, const Tensor& labels);
/// F1 from TP/FP/FN summed over all classes; 0 when undefined.
double micro_f1(const Tensor& preds, const Tensor& labels);

/// Mann-Whitney AUROC with midranks: P(s+ > s-) + P(s+ = s-) / 2.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Single-label: argmax (lowest index on ties) equals the label. Binary: sigmoid(z) > threshold
/// equals the label. Multi-label: exact match of the thresholded label set.
double accuracy(const Tensor& logits, const Tensor& labels, TaskKind task, double threshold = 0.5);

/// Mean Euclidean silhouette over all samples. Needs >= 2 classes with >= 2 members each.
double cluster_separation(const Tensor& embeddings, const std::vector<std::string>& labels);

/// 0/1 prediction matrix: one-hot argmax (single-label) or sigmoid(z) > threshold.
Tensor predictions(const Tensor& logits, TaskKind task, double threshold = 0.5);
/// 0/1 label matrix with the same layout as predictions().
Tensor label_matrix(const Tensor& labels, TaskKind task, std::size_t classes);

struct EvalReport {
    std::map<std::string, double> values;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<ClassCounts> counts;

    nlohmann::ordered_json to_json() const;
};

EvalReport evaluate(const Tensor& logits, const Tensor& labels, TaskKind task, double threshold = 0.5);

}  // namespace refnet::metrics
