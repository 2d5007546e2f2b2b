#include "refnet/batch.hpp"

#include "refnet/errors.hpp"

namespace refnet {

void ModalFeatureBatch::validate() const {
    const std::size_t n = sample_ids.size();
    if (features.empty()) throw DimensionError("batch has no modalities");
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].rank() != 2 || features[i].rows() != n) {
            throw DimensionError("modality " + std::to_string(i) + " has shape " + features[i].shape_str() + " but the batch has " +
                                 std::to_string(n) + " samples");
        }
    }
    if (label_mask.size() != n) {
        throw DimensionError("label mask has length " + std::to_string(label_mask.size()) + ", expected " + std::to_string(n));
    }
    if (labels && labels->rows() != n && !(labels->rank() == 1 && labels->size() == n)) {
        throw DimensionError("labels of shape " + labels->shape_str() + " do not match " + std::to_string(n) + " samples");
    }
}

ModalFeatureBatch ModalFeatureBatch::subset(std::span<const std::size_t> rows) const {
    ModalFeatureBatch out;
    out.sample_ids.reserve(rows.size());
    for (auto r : rows) out.sample_ids.push_back(sample_ids.at(r));
    for (const auto& f : features) {
        std::vector<double> data;
        data.reserve(rows.size() * f.cols());
        for (auto r : rows) {
            auto row = f.row(r);
            data.insert(data.end(), row.begin(), row.end());
        }
        out.features.push_back(Tensor::matrix(rows.size(), f.cols(), std::move(data)));
    }
    if (labels) {
        std::vector<double> data;
        for (auto r : rows) {
            if (labels->rank() == 2) {
                auto row = labels->row(r);
                data.insert(data.end(), row.begin(), row.end());
            } else {
                data.push_back((*labels)[r]);
            }
        }
        out.labels = labels->rank() == 2 ? Tensor::matrix(rows.size(), labels->cols(), std::move(data))
                                         : Tensor::vector(std::move(data));
    }
    out.label_mask.reserve(rows.size());
    for (auto r : rows) out.label_mask.push_back(label_mask.at(r));
    return out;
}

std::vector<std::size_t> ModalFeatureBatch::labeled_indices() const {
    std::vector<std::size_t> idx;
    if (!labels) return idx;
    for (std::size_t s = 0; s < label_mask.size(); ++s)
        if (label_mask[s]) idx.push_back(s);
    return idx;
}

std::size_t ModalFeatureBatch::labeled_count() const { return labeled_indices().size(); }

std::string ModalFeatureBatch::label_key(std::size_t s) const {
    if (!labels) return {};
    if (labels->rank() == 2) {
        std::string key;
        for (std::size_t c = 0; c < labels->cols(); ++c) key.push_back((*labels)(s, c) != 0.0 ? '1' : '0');
        return key;
    }
    return std::to_string(static_cast<long long>((*labels)[s]));
}

}  // namespace refnet
