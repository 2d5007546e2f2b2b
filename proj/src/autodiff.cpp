#include "refnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "refnet/errors.hpp"
#include "refnet/linalg.hpp"

namespace refnet::ad {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

void require_matrix(const char* op, const Tensor& t) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + t.shape_str());
}

void require_vector(const char* op, const Tensor& t) {
    if (t.rank() != 1) throw DimensionError(std::string(op) + ": expected a vector, got " + t.shape_str());
}

template <typename F>
Var unary_map(const char* op, const Var& x, F&& f, BackwardFn bw) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = f(v);
    return make_op(op, std::move(out), {x}, std::move(bw));
}

Tensor::Shape reduced_shape(const char* op, const Tensor& x, std::optional<std::size_t> axis) {
    if (!axis) return {};
    if (*axis >= x.rank()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(*axis) + " invalid for shape " + x.shape_str());
    }
    if (x.rank() == 1) return {};
    return {*axis == 0 ? x.cols() : x.rows()};
}

// Maps flat index of x to the flat index of the reduced output.
std::size_t reduced_index(const Tensor& x, std::optional<std::size_t> axis, std::size_t flat) {
    if (!axis || x.rank() == 1) return 0;
    std::size_t r = flat / x.cols(), c = flat % x.cols();
    return *axis == 0 ? c : r;
}

double row_norm(const Tensor& x, std::size_t r) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += x(r, j) * x(r, j);
    return std::sqrt(s);
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->op = "leaf";
    node_->requires_grad = requires_grad;
}

Var make_op(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
    if (!value.all_finite()) throw NumericError(op + ": produced a non-finite value");
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = std::move(op);
    for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

const Tensor& GradientMap::operator[](const Var& leaf) const {
    auto it = grads_.find(leaf.node());
    if (it == grads_.end()) throw Error("no gradient recorded for this leaf");
    return it->second;
}

GradientMap backward(const Var& root) {
    if (root.value().size() != 1) {
        throw DimensionError("backward: root must be scalar, got shape " + root.value().shape_str());
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    auto* start = root.node_ptr().get();
    stack.emplace_back(start, 0);
    seen.insert(start);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->grad = Tensor::zeros(n->value.shape());
    start->grad.data()[0] = 1.0;

    std::vector<Tensor*> parent_grads;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward) continue;
        parent_grads.clear();
        for (auto& p : n->parents) parent_grads.push_back(p->requires_grad ? &p->grad : nullptr);
        n->backward(*n, parent_grads);
    }

    GradientMap out;
    for (Node* n : order) {
        if (n->parents.empty() && n->requires_grad) out.grads_.emplace(n, n->grad);
    }
    return out;
}

// -- linear algebra ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
        throw DimensionError("matmul: cannot multiply " + A.shape_str() + " by " + B.shape_str());
    }
    std::size_t m = A.rows(), n = A.cols(), p = B.cols();
    return make_op("matmul", linalg::matmul(A, B), {a, b}, [m, n, p](const Node& self, std::span<Tensor* const> g) {
        const double* A = self.parents[0]->value.data().data();
        const double* B = self.parents[1]->value.data().data();
        const double* G = self.grad.data().data();
        if (g[0]) {
            double* gA = g[0]->data().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t k = 0; k < n; ++k) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < p; ++j) s += G[i * p + j] * B[k * p + j];
                    gA[i * n + k] += s;
                }
        }
        if (g[1]) {
            double* gB = g[1]->data().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t k = 0; k < n; ++k) {
                    const double aik = A[i * n + k];
                    for (std::size_t j = 0; j < p; ++j) gB[k * p + j] += aik * G[i * p + j];
                }
        }
    });
}

Var transpose(const Var& x) {
    require_matrix("transpose", x.value());
    return make_op("transpose", x.value().transposed(), {x}, [](const Node& self, std::span<Tensor* const> g) {
        if (!g[0]) return;
        Tensor gt = self.grad.transposed();
        for (std::size_t i = 0; i < gt.size(); ++i) (*g[0])[i] += gt[i];
    });
}

// -- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op("add", std::move(out), {a, b}, [](const Node& self, std::span<Tensor* const> g) {
        for (auto* gi : g) {
            if (!gi) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gi)[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_op("sub", std::move(out), {a, b}, [](const Node& self, std::span<Tensor* const> g) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (g[0]) (*g[0])[i] += self.grad[i];
            if (g[1]) (*g[1])[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op("mul", std::move(out), {a, b}, [](const Node& self, std::span<Tensor* const> g) {
        const Tensor& A = self.parents[0]->value;
        const Tensor& B = self.parents[1]->value;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (g[0]) (*g[0])[i] += self.grad[i] * B[i];
            if (g[1]) (*g[1])[i] += self.grad[i] * A[i];
        }
    });
}

Var scale(const Var& x, double c) {
    return unary_map("scale", x, [c](double v) { return c * v; },
                     [c](const Node& self, std::span<Tensor* const> g) {
                         if (!g[0]) return;
                         for (std::size_t i = 0; i < self.grad.size(); ++i) (*g[0])[i] += c * self.grad[i];
                     });
}

Var add_scalar(const Var& x, double c) {
    return unary_map("add_scalar", x, [c](double v) { return v + c; },
                     [](const Node& self, std::span<Tensor* const> g) {
                         if (!g[0]) return;
                         for (std::size_t i = 0; i < self.grad.size(); ++i) (*g[0])[i] += self.grad[i];
                     });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var relu(const Var& x) {
    // Subgradient at 0 is 0.
    return unary_map("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                     [](const Node& self, std::span<Tensor* const> g) {
                         if (!g[0]) return;
                         const Tensor& X = self.parents[0]->value;
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                             if (X[i] > 0.0) (*g[0])[i] += self.grad[i];
                     });
}

Var tanh(const Var& x) {
    return unary_map("tanh", x, [](double v) { return std::tanh(v); },
                     [](const Node& self, std::span<Tensor* const> g) {
                         if (!g[0]) return;
                         for (std::size_t i = 0; i < self.grad.size(); ++i) {
                             double y = self.value[i];
                             (*g[0])[i] += self.grad[i] * (1.0 - y * y);
                         }
                     });
}

Var exp(const Var& x) {
    return unary_map("exp", x, [](double v) { return std::exp(v); },
                     [](const Node& self, std::span<Tensor* const> g) {
                         if (!g[0]) return;
                         for (std::size_t i = 0; i < self.grad.size(); ++i) (*g[0])[i] += self.grad[i] * self.value[i];
                     });
}

Var log(const Var& x) {
    const Tensor& X = x.value();
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (!(X[i] > 0.0)) {
            std::ostringstream os;
            os << "log: non-positive entry " << X[i] << " at index " << i;
            throw DomainError(os.str(), i);
        }
    }
    return unary_map("log", x, [](double v) { return std::log(v); },
                     [](const Node& self, std::span<Tensor* const> g) {
                         if (!g[0]) return;
                         const Tensor& X = self.parents[0]->value;
                         for (std::size_t i = 0; i < self.grad.size(); ++i) (*g[0])[i] += self.grad[i] / X[i];
                     });
}

namespace {
double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    double e = std::exp(v);
    return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& x) {
    return unary_map("sigmoid", x, stable_sigmoid, [](const Node& self, std::span<Tensor* const> g) {
        if (!g[0]) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double s = self.value[i];
            (*g[0])[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Var softplus(const Var& x) {
    return unary_map("softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
                     [](const Node& self, std::span<Tensor* const> g) {
                         if (!g[0]) return;
                         const Tensor& X = self.parents[0]->value;
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                             (*g[0])[i] += self.grad[i] * stable_sigmoid(X[i]);
                     });
}

// -- reductions -------------------------------------------------------------

Var sum(const Var& x, std::optional<std::size_t> axis) {
    const Tensor& X = x.value();
    Tensor out = Tensor::zeros(reduced_shape("sum", X, axis));
    for (std::size_t i = 0; i < X.size(); ++i) out[reduced_index(X, axis, i)] += X[i];
    return make_op("sum", std::move(out), {x}, [axis](const Node& self, std::span<Tensor* const> g) {
        if (!g[0]) return;
        const Tensor& X = self.parents[0]->value;
        for (std::size_t i = 0; i < X.size(); ++i) (*g[0])[i] += self.grad[reduced_index(X, axis, i)];
    });
}

Var mean(const Var& x, std::optional<std::size_t> axis) {
    const Tensor& X = x.value();
    Tensor::Shape shape = reduced_shape("mean", X, axis);
    double count = static_cast<double>(X.size()) / static_cast<double>(shape_size(shape));
    Tensor out = Tensor::zeros(shape);
    for (std::size_t i = 0; i < X.size(); ++i) out[reduced_index(X, axis, i)] += X[i];
    for (auto& v : out.data()) v /= count;
    return make_op("mean", std::move(out), {x}, [axis, count](const Node& self, std::span<Tensor* const> g) {
        if (!g[0]) return;
        const Tensor& X = self.parents[0]->value;
        for (std::size_t i = 0; i < X.size(); ++i) (*g[0])[i] += self.grad[reduced_index(X, axis, i)] / count;
    });
}

Var max(const Var& x, std::optional<std::size_t> axis) {
    const Tensor& X = x.value();
    Tensor out = Tensor::zeros(reduced_shape("max", X, axis));
    std::vector<std::size_t> argmax(out.size(), X.size());
    for (std::size_t i = 0; i < X.size(); ++i) {
        std::size_t o = reduced_index(X, axis, i);
        if (argmax[o] == X.size() || X[i] > out[o]) {
            out[o] = X[i];
            argmax[o] = i;
        }
    }
    return make_op("max", std::move(out), {x}, [argmax](const Node& self, std::span<Tensor* const> g) {
        if (!g[0]) return;
        for (std::size_t o = 0; o < argmax.size(); ++o) (*g[0])[argmax[o]] += self.grad[o];
    });
}

// -- structural ------------------------------------------------------------

Var add_row(const Var& x, const Var& b) {
    const Tensor& X = x.value();
    const Tensor& B = b.value();
    require_matrix("add_row", X);
    require_vector("add_row", B);
    if (B.size() != X.cols()) {
        throw DimensionError("add_row: row vector " + B.shape_str() + " does not match " + X.shape_str());
    }
    Tensor out = X;
    for (std::size_t r = 0; r < X.rows(); ++r)
        for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) += B[c];
    return make_op("add_row", std::move(out), {x, b}, [](const Node& self, std::span<Tensor* const> g) {
        const Tensor& G = self.grad;
        if (g[0])
            for (std::size_t i = 0; i < G.size(); ++i) (*g[0])[i] += G[i];
        if (g[1])
            for (std::size_t r = 0; r < G.rows(); ++r)
                for (std::size_t c = 0; c < G.cols(); ++c) (*g[1])[c] += G(r, c);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    std::size_t rows = parts[0].value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_matrix("concat_cols", p.value());
        if (p.value().rows() != rows) {
            throw DimensionError("concat_cols: row count mismatch " + parts[0].value().shape_str() + " vs " +
                                 p.value().shape_str());
        }
        widths.push_back(p.value().cols());
        total += p.value().cols();
    }
    Tensor out = Tensor::zeros({rows, total});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor& P = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < P.cols(); ++c) out(r, offset + c) = P(r, c);
        offset += P.cols();
    }
    return make_op("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                   [widths](const Node& self, std::span<Tensor* const> g) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                           if (g[k]) {
                               for (std::size_t r = 0; r < self.grad.rows(); ++r)
                                   for (std::size_t c = 0; c < widths[k]; ++c) (*g[k])(r, c) += self.grad(r, offset + c);
                           }
                           offset += widths[k];
                       }
                   });
}

Var take_rows(const Var& x, std::span<const std::size_t> rows) {
    const Tensor& X = x.value();
    require_matrix("take_rows", X);
    if (rows.empty()) throw DimensionError("take_rows: empty row selection");
    std::size_t cols = X.cols();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (auto r : rows) {
        if (r >= X.rows()) {
            throw DimensionError("take_rows: row " + std::to_string(r) + " out of range for " + X.shape_str());
        }
        for (std::size_t c = 0; c < cols; ++c) data.push_back(X(r, c));
    }
    Tensor out = Tensor::matrix(rows.size(), cols, std::move(data));
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_op("take_rows", std::move(out), {x}, [idx, cols](const Node& self, std::span<Tensor* const> g) {
        if (!g[0]) return;
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t c = 0; c < cols; ++c) (*g[0])(idx[k], c) += self.grad(k, c);
    });
}

// -- similarity ------------------------------------------------------------

namespace {

// Shared kernel for vector and row-wise cosine. Both operands are viewed as n x d.
Var cosine_kernel(const char* op, const Var& a, const Var& b, Tensor::Shape out_shape) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    std::size_t n = A.rows(), d = A.cols();
    std::vector<double> na(n), nb(n);
    Tensor out = Tensor::zeros(std::move(out_shape));
    for (std::size_t r = 0; r < n; ++r) {
        na[r] = row_norm(A, r);
        nb[r] = row_norm(B, r);
        if (!(na[r] > kNormEpsilon) || !(nb[r] > kNormEpsilon)) {
            std::ostringstream os;
            os << op << ": degenerate " << (na[r] > kNormEpsilon ? "second" : "first") << " operand at row " << r
               << " (norm " << std::min(na[r], nb[r]) << ")";
            throw DegenerateVectorError(os.str());
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += A(r, j) * B(r, j);
        out[r] = std::clamp(dot / (na[r] * nb[r]), -1.0, 1.0);
    }
    return make_op(op, std::move(out), {a, b}, [na, nb, n, d](const Node& self, std::span<Tensor* const> g) {
        const Tensor& A = self.parents[0]->value;
        const Tensor& B = self.parents[1]->value;
        for (std::size_t r = 0; r < n; ++r) {
            double c = self.value[r];
            double go = self.grad[r];
            for (std::size_t j = 0; j < d; ++j) {
                std::size_t i = r * d + j;
                if (g[0]) (*g[0])[i] += go * (B[i] / (na[r] * nb[r]) - c * A[i] / (na[r] * na[r]));
                if (g[1]) (*g[1])[i] += go * (A[i] / (na[r] * nb[r]) - c * B[i] / (nb[r] * nb[r]));
            }
        }
    });
}

}  // namespace

Var cosine_similarity(const Var& a, const Var& b) {
    require_vector("cosine_similarity", a.value());
    require_same_shape("cosine_similarity", a.value(), b.value());
    return cosine_kernel("cosine_similarity", a, b, {});
}

Var row_cosine(const Var& a, const Var& b) {
    require_matrix("row_cosine", a.value());
    require_same_shape("row_cosine", a.value(), b.value());
    return cosine_kernel("row_cosine", a, b, {a.value().rows()});
}

Var l2_normalize_rows(const Var& x) {
    const Tensor& X = x.value();
    require_matrix("l2_normalize_rows", X);
    std::vector<double> norms(X.rows());
    Tensor out = X;
    for (std::size_t r = 0; r < X.rows(); ++r) {
        norms[r] = row_norm(X, r);
        if (!(norms[r] > kNormEpsilon)) {
            throw DegenerateVectorError("l2_normalize_rows: degenerate row " + std::to_string(r));
        }
        for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) /= norms[r];
    }
    return make_op("l2_normalize_rows", std::move(out), {x}, [norms](const Node& self, std::span<Tensor* const> g) {
        if (!g[0]) return;
        const Tensor& Y = self.value;
        const Tensor& G = self.grad;
        for (std::size_t r = 0; r < Y.rows(); ++r) {
            double yg = 0.0;
            for (std::size_t c = 0; c < Y.cols(); ++c) yg += Y(r, c) * G(r, c);
            for (std::size_t c = 0; c < Y.cols(); ++c) (*g[0])(r, c) += (G(r, c) - Y(r, c) * yg) / norms[r];
        }
    });
}

// -- log-sum-exp family ----------------------------------------------------

namespace {

// m + log(e^{-m} + sum e^{x_j - m}) with m = max(0, max_j x_j) over the selected entries.
double log1p_sum_exp_selected(const Tensor& X, std::size_t r, const Tensor* mask) {
    double m = 0.0;
    bool any = false;
    for (std::size_t c = 0; c < X.cols(); ++c) {
        if (mask && (*mask)(r, c) == 0.0) continue;
        any = true;
        m = std::max(m, X(r, c));
    }
    if (!any) return 0.0;
    double s = std::exp(-m);
    for (std::size_t c = 0; c < X.cols(); ++c) {
        if (mask && (*mask)(r, c) == 0.0) continue;
        s += std::exp(X(r, c) - m);
    }
    return m + std::log(s);
}

BackwardFn softmax_like_backward(std::optional<Tensor> mask) {
    // d out_r / d x(r, c) = e^{x(r,c) - out_r} for every selected entry.
    return [mask = std::move(mask)](const Node& self, std::span<Tensor* const> g) {
        if (!g[0]) return;
        const Tensor& X = self.parents[0]->value;
        for (std::size_t r = 0; r < X.rows(); ++r) {
            double out = self.value[r];
            double go = self.grad[r];
            for (std::size_t c = 0; c < X.cols(); ++c) {
                if (mask && (*mask)(r, c) == 0.0) continue;
                (*g[0])(r, c) += go * std::exp(X(r, c) - out);
            }
        }
    };
}

}  // namespace

Var log1p_sum_exp(const Var& x) {
    require_vector("log1p_sum_exp", x.value());
    Tensor out = Tensor::scalar(log1p_sum_exp_selected(x.value(), 0, nullptr));
    return make_op("log1p_sum_exp", std::move(out), {x}, softmax_like_backward(std::nullopt));
}

Var masked_log1p_sum_exp_rows(const Var& x, const Tensor& mask) {
    const Tensor& X = x.value();
    require_matrix("masked_log1p_sum_exp_rows", X);
    require_same_shape("masked_log1p_sum_exp_rows", X, mask);
    Tensor out = Tensor::zeros({X.rows()});
    for (std::size_t r = 0; r < X.rows(); ++r) out[r] = log1p_sum_exp_selected(X, r, &mask);
    return make_op("masked_log1p_sum_exp_rows", std::move(out), {x}, softmax_like_backward(mask));
}

Var logsumexp_rows(const Var& x) {
    const Tensor& X = x.value();
    require_matrix("logsumexp_rows", X);
    Tensor out = Tensor::zeros({X.rows()});
    for (std::size_t r = 0; r < X.rows(); ++r) {
        double m = X(r, 0);
        for (std::size_t c = 1; c < X.cols(); ++c) m = std::max(m, X(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < X.cols(); ++c) s += std::exp(X(r, c) - m);
        out[r] = m + std::log(s);
    }
    return make_op("logsumexp_rows", std::move(out), {x}, softmax_like_backward(std::nullopt));
}

}  // namespace refnet::ad
