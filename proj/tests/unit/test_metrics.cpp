#include <doctest.h>

#include <cmath>
#include <map>
#include <string>

#include "refnet/errors.hpp"
#include "refnet/metrics.hpp"
#include "refnet/rng.hpp"

using namespace refnet;
using namespace refnet::metrics;

namespace {

Tensor random_binary(std::size_t n, std::size_t c, Rng& rng, double p = 0.5) {
    Tensor t = Tensor::zeros({n, c});
    for (auto& v : t.data()) v = rng.uniform() < p ? 1.0 : 0.0;
    return t;
}

struct Confusion {
    double tp = 0, fp = 0, fn = 0;
};

// Per-class confusion counts by direct enumeration.
std::vector<Confusion> confusion(const Tensor& p, const Tensor& y) {
    std::vector<Confusion> out(p.cols());
    for (std::size_t s = 0; s < p.rows(); ++s)
        for (std::size_t c = 0; c < p.cols(); ++c) {
            if (p(s, c) == 1 && y(s, c) == 1) out[c].tp += 1;
            if (p(s, c) == 1 && y(s, c) == 0) out[c].fp += 1;
            if (p(s, c) == 0 && y(s, c) == 1) out[c].fn += 1;
        }
    return out;
}

double f1_of(double tp, double fp, double fn) {
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
}

double macro_oracle(const Tensor& p, const Tensor& y) {
    double sum = 0.0;
    for (const auto& c : confusion(p, y)) sum += f1_of(c.tp, c.fp, c.fn);
    return sum / static_cast<double>(p.cols());
}

double micro_oracle(const Tensor& p, const Tensor& y) {
    Confusion t;
    for (const auto& c : confusion(p, y)) {
        t.tp += c.tp;
        t.fp += c.fp;
        t.fn += c.fn;
    }
    return f1_of(t.tp, t.fp, t.fn);
}

// Fraction of positive-negative pairs ranked correctly, ties counting one half.
double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double good = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1.0;
                good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return good / pairs;
}

double silhouette_oracle(const Tensor& e, const std::vector<std::string>& labels) {
    const std::size_t n = e.rows();
    auto dist = [&](std::size_t a, std::size_t b) {
        double d = 0.0;
        for (std::size_t c = 0; c < e.cols(); ++c) d += (e(a, c) - e(b, c)) * (e(a, c) - e(b, c));
        return std::sqrt(d);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::map<std::string, std::pair<double, double>> acc;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            auto& a = acc[labels[j]];
            a.first += dist(i, j);
            a.second += 1.0;
        }
        double a = 0.0, b = INFINITY;
        for (const auto& [label, sums] : acc) {
            const double mean = sums.first / sums.second;
            if (label == labels[i]) {
                a = mean;
            } else {
                b = std::min(b, mean);
            }
        }
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("F1 examples") {
    Tensor y = Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}});
    CHECK(macro_f1(y, y) == 1.0);
    CHECK(micro_f1(y, y) == 1.0);
    CHECK(macro_f1(Tensor::zeros({3, 2}), y) == 0.0);
    CHECK(micro_f1(Tensor::zeros({3, 2}), y) == 0.0);

    // class 0: TP 1 FP 1 FN 0; class 1: TP 1 FP 0 FN 1
    Tensor p2 = Tensor::from_rows({{1, 1}, {1, 0}, {0, 0}});
    Tensor y2 = Tensor::from_rows({{1, 1}, {0, 0}, {0, 1}});
    CHECK(macro_f1(p2, y2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(micro_f1(p2, y2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    Tensor p1 = Tensor::from_rows({{1}, {0}, {1}, {1}}), y1 = Tensor::from_rows({{1}, {1}, {0}, {1}});
    CHECK(micro_f1(p1, y1) == macro_f1(p1, y1));
}

TEST_CASE("F1 matches a confusion-matrix oracle") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.index(20), c = 1 + rng.index(4);
        Tensor p = random_binary(n, c, rng, rng.uniform()), y = random_binary(n, c, rng, rng.uniform());
        CHECK(macro_f1(p, y) == macro_oracle(p, y));
        CHECK(micro_f1(p, y) == micro_oracle(p, y));
        auto counts = class_counts(p, y);
        auto oracle = confusion(p, y);
        for (std::size_t k = 0; k < c; ++k) {
            CHECK(static_cast<double>(counts[k].tp) == oracle[k].tp);
            CHECK(static_cast<double>(counts[k].fp) == oracle[k].fp);
            CHECK(static_cast<double>(counts[k].fn) == oracle[k].fn);
        }
    }
}

TEST_CASE("AUROC examples") {
    CHECK(auroc({0.1, 0.4, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(auroc({0.9, 0.8, 0.4, 0.1}, {0, 0, 1, 1}) == 0.0);
    CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    CHECK_THROWS(auroc({0.1, 0.2}, {1, 1}));
}

TEST_CASE("AUROC matches the pairwise oracle and ignores monotone transforms") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.index(20);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.index(6)) / 5.0;  // coarse grid forces ties
            y[i] = static_cast<int>(rng.index(2));
        }
        y[0] = 0;
        y[1] = 1;
        const double a = auroc(s, y);
        CHECK(a == auroc_oracle(s, y));
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
        CHECK(auroc(t, y) == a);
    }
}

TEST_CASE("accuracy examples") {
    Tensor labels = Tensor::vector({0, 1, 1, 0});
    Tensor logits = Tensor::from_rows({{2, 1}, {0, 3}, {1, 0}, {5, -5}});
    CHECK(accuracy(logits, labels, TaskKind::SingleLabel) == 0.75);
    CHECK(accuracy(Tensor::from_rows({{0, 0}}), Tensor::vector({0}), TaskKind::SingleLabel) == 1.0);
    Tensor right = Tensor::from_rows({{2, 1}, {0, 3}, {-1, 0}, {5, -5}});
    CHECK(accuracy(right, labels, TaskKind::SingleLabel) == 1.0);
    CHECK(accuracy(Tensor::from_rows({{0.3}, {-0.2}}), Tensor::vector({1, 0}), TaskKind::Binary) == 1.0);
}

TEST_CASE("micro-F1 equals accuracy for single-label argmax predictions") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.index(15), c = 2 + rng.index(3);
        Tensor logits = Tensor::zeros({n, c});
        for (auto& v : logits.data()) v = rng.normal();
        std::vector<double> lab(n);
        for (auto& v : lab) v = static_cast<double>(rng.index(c));
        Tensor labels = Tensor::vector(lab);
        Tensor p = predictions(logits, TaskKind::SingleLabel);
        Tensor y = label_matrix(labels, TaskKind::SingleLabel, c);
        CHECK(micro_f1(p, y) == doctest::Approx(accuracy(logits, labels, TaskKind::SingleLabel)).epsilon(1e-15));
    }
}

TEST_CASE("metrics are invariant to sample order") {
    Rng rng(4);
    Tensor p = random_binary(12, 3, rng), y = random_binary(12, 3, rng);
    std::vector<std::size_t> perm{5, 3, 11, 0, 2, 9, 1, 4, 10, 8, 7, 6};
    Tensor pp = Tensor::zeros({12, 3}), yp = Tensor::zeros({12, 3});
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            pp(i, c) = p(perm[i], c);
            yp(i, c) = y(perm[i], c);
        }
    CHECK(macro_f1(pp, yp) == macro_f1(p, y));
    CHECK(micro_f1(pp, yp) == micro_f1(p, y));
    std::vector<double> s(12), sp(12);
    std::vector<int> l(12), lp(12);
    for (std::size_t i = 0; i < 12; ++i) {
        s[i] = rng.normal();
        l[i] = static_cast<int>(i % 2);
    }
    for (std::size_t i = 0; i < 12; ++i) {
        sp[i] = s[perm[i]];
        lp[i] = l[perm[i]];
    }
    CHECK(auroc(sp, lp) == auroc(s, l));
}

TEST_CASE("silhouette examples") {
    Rng rng(5);
    Tensor e = Tensor::zeros({40, 2});
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < 40; ++i) {
        const double centre = i < 20 ? -100.0 : 100.0;
        e(i, 0) = centre + 0.1 * rng.normal();
        e(i, 1) = 0.1 * rng.normal();
        labels.push_back(i < 20 ? "a" : "b");
    }
    CHECK(cluster_separation(e, labels) > 0.9);

    Tensor blob = Tensor::zeros({1000, 2});
    std::vector<std::string> random_labels;
    for (std::size_t i = 0; i < 1000; ++i) {
        blob(i, 0) = rng.normal();
        blob(i, 1) = rng.normal();
        random_labels.push_back(rng.uniform() < 0.5 ? "x" : "y");
    }
    CHECK(std::abs(cluster_separation(blob, random_labels)) < 0.1);
}

TEST_CASE("silhouette matches a direct oracle") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 6 + rng.index(12);
        Tensor e = Tensor::zeros({n, 3});
        for (auto& v : e.data()) v = rng.normal();
        std::vector<std::string> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = std::to_string(i < 6 ? i / 2 : rng.index(3));
        CHECK(std::abs(cluster_separation(e, labels) - silhouette_oracle(e, labels)) < 1e-12);
    }
}

TEST_CASE("silhouette needs two populated classes") {
    Tensor e = Tensor::from_rows({{0, 0}, {1, 1}, {2, 2}});
    CHECK_THROWS(cluster_separation(e, {"a", "a", "a"}));
    CHECK_THROWS(cluster_separation(e, {"a", "b", "b"}));
}

TEST_CASE("evaluate reports task metrics") {
    Tensor logits = Tensor::from_rows({{2, 1}, {0, 3}, {1, 0}, {5, -5}});
    auto r = evaluate(logits, Tensor::vector({0, 1, 1, 0}), TaskKind::SingleLabel);
    CHECK(r.values.at("accuracy") == 0.75);
    CHECK(r.values.at("micro_f1") == 0.75);
    CHECK(r.values.count("macro_f1") == 1);
    auto j = r.to_json();
    CHECK(j.contains("precision"));
}
