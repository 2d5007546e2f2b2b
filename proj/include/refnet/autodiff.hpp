#pragma once

// Tape-free reverse-mode differentiation over Tensor values.
//
// Every operation returns a Var that owns a Node holding the forward value,
// references to its inputs and a closure that pushes the output adjoint back
// to the inputs. backward() walks the graph in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "refnet/tensor.hpp"

namespace refnet::ad {

struct Node;

/// Accumulates the contribution of `self.grad` into the gradients of the parents.
/// Entries of `parent_grads` are null for parents that do not require a gradient.
using BackwardFn = std::function<void(const Node& self, std::span<Tensor* const> parent_grads)>;

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::string op;
    BackwardFn backward;
    bool requires_grad = false;
};

class Var {
   public:
    Var() = default;
    /// Leaf holding `value`. Parameters are leaves with requires_grad = true.
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    const Tensor::Shape& shape() const { return node_->value.shape(); }
    const std::string& op() const { return node_->op; }
    bool requires_grad() const { return node_->requires_grad; }
    bool valid() const { return node_ != nullptr; }

    const Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

   private:
    std::shared_ptr<Node> node_;
};

/// Builds a node from a precomputed value. This is the extension point used by
/// every built-in op; it checks the value for NaN/Inf.
Var make_op(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward);

/// Gradients of a scalar root with respect to the leaves that require them.
class GradientMap {
   public:
    const Tensor& operator[](const Var& leaf) const;
    bool contains(const Var& leaf) const { return grads_.count(leaf.node()) != 0; }
    std::size_t size() const { return grads_.size(); }

   private:
    friend GradientMap backward(const Var& root);
    std::unordered_map<const Node*, Tensor> grads_;
};

/// Zeroes every adjoint reachable from `root`, seeds d(root)/d(root) = 1 and
/// propagates in reverse topological order. Root must hold a single element.
GradientMap backward(const Var& root);

// -- linear algebra ---------------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);

// -- elementwise ------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var neg(const Var& x);
Var relu(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var sigmoid(const Var& x);
/// log(1 + e^x), evaluated without overflow.
Var softplus(const Var& x);

// -- reductions -------------------------------------------------------------
// axis = nullopt reduces everything to a rank-0 scalar.
Var sum(const Var& x, std::optional<std::size_t> axis = std::nullopt);
Var mean(const Var& x, std::optional<std::size_t> axis = std::nullopt);
/// Gradient flows to the first maximal entry along the reduced axis.
Var max(const Var& x, std::optional<std::size_t> axis = std::nullopt);

// -- structural ------------------------------------------------------------
/// x[n x k] + b[k] added to every row.
Var add_row(const Var& x, const Var& b);
Var concat_cols(std::span<const Var> parts);
Var take_rows(const Var& x, std::span<const std::size_t> rows);

// -- similarity ------------------------------------------------------------
inline constexpr double kNormEpsilon = 1e-12;

/// a.b / (|a||b|) for two vectors of equal length; throws on norms <= 1e-12.
Var cosine_similarity(const Var& a, const Var& b);
/// Row-wise cosine of two n x d matrices, returned as a length-n vector.
Var row_cosine(const Var& a, const Var& b);
Var l2_normalize_rows(const Var& x);

// -- log-sum-exp family ----------------------------------------------------
/// log(1 + sum_i e^{x_i}) over a vector, stabilised with m = max(0, max x).
Var log1p_sum_exp(const Var& x);
/// Row-wise log(1 + sum_{j : mask(i,j) != 0} e^{x(i,j)}); rows with an empty mask give 0.
Var masked_log1p_sum_exp_rows(const Var& x, const Tensor& mask);
/// Row-wise log(sum_j e^{x(i,j)}).
Var logsumexp_rows(const Var& x);

}  // namespace refnet::ad
