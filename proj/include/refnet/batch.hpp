#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refnet/tensor.hpp"

namespace refnet {

/// A set of samples, each observed through M modalities.
///
/// `labels` is either a length-n vector of class indices (single-label and binary
/// tasks) or an n x C 0/1 matrix (multi-label). `label_mask[s]` says whether the
/// label of sample s may be seen by supervised losses.
struct ModalFeatureBatch {
    std::vector<std::string> sample_ids;
    std::vector<Tensor> features;
    std::optional<Tensor> labels;
    std::vector<bool> label_mask;

    std::size_t size() const { return sample_ids.size(); }
    std::size_t modalities() const { return features.size(); }
    bool multi_label() const { return labels && labels->rank() == 2; }

    /// Throws DimensionError if modalities disagree on n or the mask/labels have the wrong length.
    void validate() const;

    ModalFeatureBatch subset(std::span<const std::size_t> rows) const;
    std::vector<std::size_t> labeled_indices() const;
    std::size_t labeled_count() const;

    /// Stratification key of sample s: the class index, or the 0/1 pattern for multi-label data.
    std::string label_key(std::size_t s) const;
};

}  // namespace refnet
