#include "refnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "refnet/errors.hpp"

namespace refnet::metrics {

namespace {

void require_same(const Tensor& preds, const Tensor& labels) {
    if (preds.rows() != labels.rows() || preds.cols() != labels.cols() || preds.size() != labels.size()) {
        throw DimensionError("prediction shape " + preds.shape_str() + " does not match labels " + labels.shape_str());
    }
}

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
    const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

std::vector<ClassCounts> class_counts(const Tensor& preds, const Tensor& labels) {
    require_same(preds, labels);
    std::vector<ClassCounts> counts(preds.cols());
    for (std::size_t s = 0; s < preds.rows(); ++s)
        for (std::size_t c = 0; c < preds.cols(); ++c) {
            bool p = preds(s, c) != 0.0, y = labels(s, c) != 0.0;
            if (p && y) ++counts[c].tp;
            if (p && !y) ++counts[c].fp;
            if (!p && y) ++counts[c].fn;
        }
    return counts;
}

double macro_f1(const Tensor& preds, const Tensor& labels) {
    auto counts = class_counts(preds, labels);
    double s = 0.0;
    for (const auto& c : counts) s += f1(c.tp, c.fp, c.fn);
    return s / static_cast<double>(counts.size());
}

double micro_f1(const Tensor& preds, const Tensor& labels) {
    ClassCounts total;
    for (const auto& c : class_counts(preds, labels)) {
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn += c.fn;
    }
    return f1(total.tp, total.fp, total.fn);
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DimensionError("auroc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // midranks (1-based)
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (labels[s] != 0 && labels[s] != 1) throw DomainError("auroc: labels must be 0 or 1", s);
        if (labels[s] == 1) {
            ++pos;
            rank_sum += ranks[s];
        }
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw Error("auroc: both classes must be present");
    const double u = rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

Tensor predictions(const Tensor& logits, TaskKind task, double threshold) {
    Tensor out = Tensor::zeros({logits.rows(), logits.cols()});
    if (task == TaskKind::SingleLabel) {
        for (std::size_t s = 0; s < logits.rows(); ++s) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols(); ++c)
                if (logits(s, c) > logits(s, best)) best = c;
            out(s, best) = 1.0;
        }
        return out;
    }
    const double cut = logit(threshold);
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > cut ? 1.0 : 0.0;
    return out;
}

Tensor label_matrix(const Tensor& labels, TaskKind task, std::size_t classes) {
    if (task == TaskKind::MultiLabel) return labels;
    const std::size_t n = labels.size();
    if (task == TaskKind::Binary) return labels.reshaped({n, 1});
    Tensor out = Tensor::zeros({n, classes});
    for (std::size_t s = 0; s < n; ++s) {
        auto c = static_cast<std::size_t>(labels[s]);
        if (c >= classes) throw DomainError("label out of range", s);
        out(s, c) = 1.0;
    }
    return out;
}

double accuracy(const Tensor& logits, const Tensor& labels, TaskKind task, double threshold) {
    Tensor preds = predictions(logits, task, threshold);
    Tensor truth = label_matrix(labels, task, logits.cols());
    require_same(preds, truth);
    std::size_t correct = 0;
    for (std::size_t s = 0; s < preds.rows(); ++s) {
        bool match = true;
        for (std::size_t c = 0; c < preds.cols(); ++c) match = match && (preds(s, c) == truth(s, c));
        correct += match;
    }
    return static_cast<double>(correct) / static_cast<double>(preds.rows());
}

double cluster_separation(const Tensor& embeddings, const std::vector<std::string>& labels) {
    const std::size_t n = embeddings.rows();
    if (labels.size() != n) throw DimensionError("cluster_separation: label count does not match embeddings");
    std::map<std::string, std::size_t> class_ids;
    for (const auto& l : labels) class_ids.emplace(l, class_ids.size());
    const std::size_t k = class_ids.size();
    std::vector<std::size_t> cls(n), sizes(k, 0);
    for (std::size_t s = 0; s < n; ++s) {
        cls[s] = class_ids.at(labels[s]);
        ++sizes[cls[s]];
    }
    if (k < 2) throw Error("cluster_separation: need at least two classes");
    for (auto sz : sizes)
        if (sz < 2) throw Error("cluster_separation: every class needs at least two members");

    const std::size_t d = embeddings.cols();
    double total = 0.0;
    std::vector<double> dist_sum(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = embeddings(i, c) - embeddings(j, c);
                s += diff * diff;
            }
            dist_sum[cls[j]] += std::sqrt(s);
        }
        const double a = dist_sum[cls[i]] / static_cast<double>(sizes[cls[i]] - 1);
        double b = INFINITY;
        for (std::size_t c = 0; c < k; ++c)
            if (c != cls[i]) b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
        const double m = std::max(a, b);
        if (m == 0.0) throw Error("cluster_separation: sample " + std::to_string(i) + " coincides with every other point");
        total += (b - a) / m;
    }
    return total / static_cast<double>(n);
}

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : values) j["metrics"][k] = v;
    j["precision"] = precision;
    j["recall"] = recall;
    nlohmann::ordered_json counts_json = nlohmann::ordered_json::array();
    for (const auto& c : counts) counts_json.push_back({{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}});
    j["counts"] = counts_json;
    return j;
}

EvalReport evaluate(const Tensor& logits, const Tensor& labels, TaskKind task, double threshold) {
    EvalReport report;
    Tensor preds = predictions(logits, task, threshold);
    Tensor truth = label_matrix(labels, task, logits.cols());
    report.counts = class_counts(preds, truth);
    for (const auto& c : report.counts) {
        report.precision.push_back(c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp));
        report.recall.push_back(c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn));
    }
    report.values["accuracy"] = accuracy(logits, labels, task, threshold);
    report.values["micro_f1"] = micro_f1(preds, truth);
    report.values["macro_f1"] = macro_f1(preds, truth);

    // AUROC on a scalar score when the task has one: the binary logit or the class-1 margin.
    std::vector<double> scores;
    std::vector<int> y;
    if (task == TaskKind::Binary) {
        for (std::size_t s = 0; s < logits.rows(); ++s) scores.push_back(logits(s, 0));
    } else if (task == TaskKind::SingleLabel && logits.cols() == 2) {
        for (std::size_t s = 0; s < logits.rows(); ++s) scores.push_back(logits(s, 1) - logits(s, 0));
    }
    if (!scores.empty()) {
        for (std::size_t s = 0; s < truth.rows(); ++s) y.push_back(truth(s, truth.cols() - 1) != 0.0 ? 1 : 0);
        bool both = std::find(y.begin(), y.end(), 0) != y.end() && std::find(y.begin(), y.end(), 1) != y.end();
        if (both) report.values["auroc"] = auroc(scores, y);
    }
    return report;
}

}  // namespace refnet::metrics
