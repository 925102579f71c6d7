#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "etma/common.hpp"
#include "etma/rng.hpp"

namespace etma {

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily, same extent as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into the parents' grads (accumulating).
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major f64 tensor participating in a reverse-mode graph.
/// Value-semantic handle; copies share the node. Rank 0 is a scalar.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return full({}, value); }
    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
    static Tensor normal(Shape shape, Rng& rng, double mean, double stddev);
    /// Normal(0, stddev) resampled until within +-clip*stddev.
    static Tensor trunc_normal(Shape shape, Rng& rng, double stddev, double clip = 2.0);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    double value() const;  // scalar read; ContractError unless size()==1

    Tensor& set_requires_grad(bool b = true) {
        node_->requires_grad = b;
        return *this;
    }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf(); }

    /// Gradient accumulated by backward(); empty span before any backward.
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// ---- graph operations -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] * [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m x k] * [n x k]^T

// Elementwise; b may broadcast by the trailing-dimension rule: b's shape
// must be a suffix of a's (a rank-0 b broadcasts everywhere).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Row r of x scaled by s[r]; x is [n x d], s is [n].
Tensor scale_rows(const Tensor& x, const Tensor& s);

Tensor softmax(const Tensor& x, std::size_t axis = 0);
Tensor gelu(const Tensor& x);  // exact form: x * Phi(x)
Tensor tanh(const Tensor& x);
/// log(max(x, 1e-12)); the clamp also caps the gradient of tiny inputs.
Tensor log_clamped(const Tensor& x);

/// Per-row standardization (x - mean) / sqrt(var + eps); affine scale and
/// shift live in the layer on top.
Tensor layernorm_rows(const Tensor& x, double eps);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Rows of `table` selected by id; backward scatters into the picked rows.
Tensor gather(const Tensor& table, const std::vector<int>& ids);

/// Reverse sweep from a scalar loss. Non-leaf grads in the reachable graph
/// are reset first; leaf grads accumulate across calls until zero_grad().
void backward(const Tensor& loss);

/// Max relative error between the analytic gradient of loss_fn() w.r.t. x
/// and central differences, step h scaled per coordinate by max(1, |x_i|).
/// loss_fn must be deterministic and rebuild the graph on every call.
double finite_difference_check(const std::function<Tensor()>& loss_fn, Tensor x, double h = 1e-5);

// ---- serialization -----------------------------------------------------
// Little-endian: magic "ETMA", u16 version, u32 rank, u64 extents, f64 data.

inline constexpr std::uint16_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

}  // namespace etma
