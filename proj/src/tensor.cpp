#include "etma/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "etma/kernels.hpp"

namespace etma {

namespace {

using detail::Node;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLogClamp = 1e-12;

#ifndef NDEBUG
void debug_assert_finite(const Node& n) {
    for (double v : n.data) assert(std::isfinite(v) && "non-finite value out of a forward op");
}
#else
void debug_assert_finite(const Node&) {}
#endif

std::shared_ptr<Node> make_node(Shape shape) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.assign(shape_numel(n->shape), 0.0);
    return n;
}

// Links parents and installs the backward rule only when some parent needs
// gradients; otherwise the node is a detached constant.
Tensor finish_op(std::shared_ptr<Node> n, std::initializer_list<Tensor> parents,
                 std::function<void(Node&)> backward_fn) {
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || p.node()->requires_grad;
    if (needs) {
        n->requires_grad = true;
        for (const Tensor& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    debug_assert_finite(*n);
    return Tensor(std::move(n));
}

void check_suffix_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (b.size() > a.size())
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " +
                             shape_str(a));
    const std::size_t off = a.size() - b.size();
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (a[off + i] != b[i])
            throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                 shape_str(b) + " do not align on trailing dimensions");
    }
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " +
                             shape_str(t.shape()));
}

}  // namespace

// ---- constructors -------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return Tensor(make_node(std::move(shape))); }

Tensor Tensor::full(Shape shape, double value) {
    auto n = make_node(std::move(shape));
    std::fill(n->data.begin(), n->data.end(), value);
    return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("Tensor::from: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return Tensor(std::move(n));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    auto n = make_node(std::move(shape));
    for (double& v : n->data) v = rng.next_uniform(lo, hi);
    return Tensor(std::move(n));
}

Tensor Tensor::normal(Shape shape, Rng& rng, double mean, double stddev) {
    auto n = make_node(std::move(shape));
    for (double& v : n->data) v = mean + stddev * rng.next_normal();
    return Tensor(std::move(n));
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, double stddev, double clip) {
    auto n = make_node(std::move(shape));
    for (double& v : n->data) {
        double z;
        do {
            z = rng.next_normal();
        } while (std::abs(z) > clip);
        v = stddev * z;
    }
    return Tensor(std::move(n));
}

double Tensor::value() const {
    if (size() != 1) throw ContractError("value(): tensor is not a scalar: " + shape_str(shape()));
    return node_->data[0];
}

// ---- matmul -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " * " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_node({m, n});
    const auto& K = kernels::active();
    K.matmul_nn(a.data().data(), b.data().data(), out->data.data(), m, k, n);

    auto pa = a.node(), pb = b.node();
    return finish_op(std::move(out), {a, b}, [pa, pb, m, k, n](Node& self) {
        const auto& kn = kernels::active();
        if (pa->requires_grad || !pa->is_leaf()) {
            pa->ensure_grad();
            kn.matmul_nt(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad || !pb->is_leaf()) {
            pb->ensure_grad();
            kn.matmul_tn(pa->data.data(), self.grad.data(), pb->grad.data(), k, m, n);
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.dim(1) != b.dim(1))
        throw DimensionError("matmul_nt: inner extents differ: " + shape_str(a.shape()) + " * " +
                             shape_str(b.shape()) + "^T");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    auto out = make_node({m, n});
    const auto& K = kernels::active();
    K.matmul_nt(a.data().data(), b.data().data(), out->data.data(), m, k, n);

    auto pa = a.node(), pb = b.node();
    return finish_op(std::move(out), {a, b}, [pa, pb, m, k, n](Node& self) {
        const auto& kn = kernels::active();
        if (pa->requires_grad || !pa->is_leaf()) {
            pa->ensure_grad();
            kn.matmul_nn(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad || !pb->is_leaf()) {
            pb->ensure_grad();
            kn.matmul_tn(self.grad.data(), pa->data.data(), pb->grad.data(), n, m, k);
        }
    });
}

// ---- elementwise with suffix broadcast -----------------------------------

namespace {

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b, const char* name) {
    check_suffix_broadcast(a.shape(), b.shape(), name);
    const std::size_t na = a.size(), nb = b.size();
    auto out = make_node(a.shape());
    const auto& K = kernels::active();
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out->data.data();

    if (nb == 1) {
        const double s = bd[0];
        switch (kind) {
            case EwKind::Add:
                for (std::size_t i = 0; i < na; ++i) od[i] = ad[i] + s;
                break;
            case EwKind::Sub:
                for (std::size_t i = 0; i < na; ++i) od[i] = ad[i] - s;
                break;
            case EwKind::Mul:
                std::memcpy(od, ad, na * sizeof(double));
                K.scale(s, od, na);
                break;
        }
    } else {
        for (std::size_t off = 0; off < na; off += nb) {
            switch (kind) {
                case EwKind::Add:
                    K.add(ad + off, bd, od + off, nb);
                    break;
                case EwKind::Sub:
                    K.sub(ad + off, bd, od + off, nb);
                    break;
                case EwKind::Mul:
                    K.mul(ad + off, bd, od + off, nb);
                    break;
            }
        }
    }

    auto pa = a.node(), pb = b.node();
    return finish_op(std::move(out), {a, b}, [pa, pb, kind, na, nb](Node& self) {
        const auto& kn = kernels::active();
        const double* g = self.grad.data();
        if (pa->requires_grad || !pa->is_leaf()) {
            pa->ensure_grad();
            double* ga = pa->grad.data();
            switch (kind) {
                case EwKind::Add:
                case EwKind::Sub:
                    kn.axpy(1.0, g, ga, na);
                    break;
                case EwKind::Mul:
                    if (nb == 1) {
                        kn.axpy(pb->data[0], g, ga, na);
                    } else {
                        for (std::size_t off = 0; off < na; off += nb)
                            kn.mul_add(g + off, pb->data.data(), ga + off, nb);
                    }
                    break;
            }
        }
        if (pb->requires_grad || !pb->is_leaf()) {
            pb->ensure_grad();
            double* gb = pb->grad.data();
            switch (kind) {
                case EwKind::Add:
                    if (nb == 1) {
                        gb[0] += kn.sum(g, na);
                    } else {
                        for (std::size_t off = 0; off < na; off += nb)
                            kn.axpy(1.0, g + off, gb, nb);
                    }
                    break;
                case EwKind::Sub:
                    if (nb == 1) {
                        gb[0] -= kn.sum(g, na);
                    } else {
                        for (std::size_t off = 0; off < na; off += nb)
                            kn.axpy(-1.0, g + off, gb, nb);
                    }
                    break;
                case EwKind::Mul:
                    if (nb == 1) {
                        gb[0] += kn.dot(g, pa->data.data(), na);
                    } else {
                        for (std::size_t off = 0; off < na; off += nb)
                            kn.mul_add(g + off, pa->data.data() + off, gb, nb);
                    }
                    break;
            }
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwKind::Add, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwKind::Sub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwKind::Mul, a, b, "mul"); }

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    require_rank2(x, "scale_rows");
    if (s.rank() != 1 || s.dim(0) != x.dim(0))
        throw DimensionError("scale_rows: row weights " + shape_str(s.shape()) +
                             " do not match rows of " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    auto out = make_node(x.shape());
    const double* xd = x.data().data();
    const double* sd = s.data().data();
    for (std::size_t r = 0; r < n; ++r) {
        std::memcpy(out->data.data() + r * d, xd + r * d, d * sizeof(double));
        kernels::active().scale(sd[r], out->data.data() + r * d, d);
    }

    auto px = x.node(), ps = s.node();
    return finish_op(std::move(out), {x, s}, [px, ps, n, d](Node& self) {
        const auto& kn = kernels::active();
        if (px->requires_grad || !px->is_leaf()) {
            px->ensure_grad();
            for (std::size_t r = 0; r < n; ++r)
                kn.axpy(ps->data[r], self.grad.data() + r * d, px->grad.data() + r * d, d);
        }
        if (ps->requires_grad || !ps->is_leaf()) {
            ps->ensure_grad();
            for (std::size_t r = 0; r < n; ++r)
                ps->grad[r] += kn.dot(self.grad.data() + r * d, px->data.data() + r * d, d);
        }
    });
}

// ---- softmax --------------------------------------------------------------

namespace {

struct SliceIter {
    std::size_t count;   // number of slices
    std::size_t len;     // elements per slice
    std::size_t stride;  // element stride inside a slice
    std::size_t step;    // base offset between slices
};

SliceIter softmax_slices(const Tensor& x, std::size_t axis) {
    if (x.rank() == 1) {
        if (axis != 0) throw DimensionError("softmax: axis out of range for rank-1 tensor");
        return {1, x.dim(0), 1, 0};
    }
    if (x.rank() == 2) {
        if (axis == 1) return {x.dim(0), x.dim(1), 1, x.dim(1)};
        if (axis == 0) return {x.dim(1), x.dim(0), x.dim(1), 1};
        throw DimensionError("softmax: axis out of range for rank-2 tensor");
    }
    throw DimensionError("softmax: expected rank 1 or 2, got " + shape_str(x.shape()));
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
    const SliceIter it = softmax_slices(x, axis);
    auto out = make_node(x.shape());
    const double* xd = x.data().data();
    double* od = out->data.data();
    const auto& K = kernels::active();

    std::vector<double> buf(it.len);
    for (std::size_t s = 0; s < it.count; ++s) {
        const std::size_t base = s * it.step;
        if (it.stride == 1) {
            const double m = K.max(xd + base, it.len);
            for (std::size_t i = 0; i < it.len; ++i) buf[i] = std::exp(xd[base + i] - m);
            const double z = K.sum(buf.data(), it.len);
            for (std::size_t i = 0; i < it.len; ++i) od[base + i] = buf[i] / z;
        } else {
            double m = xd[base];
            for (std::size_t i = 1; i < it.len; ++i) m = std::max(m, xd[base + i * it.stride]);
            double z = 0.0;
            for (std::size_t i = 0; i < it.len; ++i) z += buf[i] = std::exp(xd[base + i * it.stride] - m);
            for (std::size_t i = 0; i < it.len; ++i) od[base + i * it.stride] = buf[i] / z;
        }
    }

    auto px = x.node();
    return finish_op(std::move(out), {x}, [px, it](Node& self) {
        px->ensure_grad();
        // dx = y * (dy - sum(dy * y)) per slice
        for (std::size_t s = 0; s < it.count; ++s) {
            const std::size_t base = s * it.step;
            double acc = 0.0;
            for (std::size_t i = 0; i < it.len; ++i) {
                const std::size_t idx = base + i * it.stride;
                acc += self.grad[idx] * self.data[idx];
            }
            for (std::size_t i = 0; i < it.len; ++i) {
                const std::size_t idx = base + i * it.stride;
                px->grad[idx] += self.data[idx] * (self.grad[idx] - acc);
            }
        }
    });
}

// ---- pointwise nonlinearities ----------------------------------------------

Tensor gelu(const Tensor& x) {
    auto out = make_node(x.shape());
    const double* xd = x.data().data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(xd[i] * kInvSqrt2));
        out->data[i] = xd[i] * cdf;
    }
    auto px = x.node();
    return finish_op(std::move(out), {x}, [px](Node& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            const double v = px->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            px->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor tanh(const Tensor& x) {
    auto out = make_node(x.shape());
    const double* xd = x.data().data();
    for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = std::tanh(xd[i]);
    auto px = x.node();
    return finish_op(std::move(out), {x}, [px](Node& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i)
            px->grad[i] += self.grad[i] * (1.0 - self.data[i] * self.data[i]);
    });
}

Tensor log_clamped(const Tensor& x) {
    auto out = make_node(x.shape());
    const double* xd = x.data().data();
    for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = std::log(std::max(xd[i], kLogClamp));
    auto px = x.node();
    return finish_op(std::move(out), {x}, [px](Node& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            const double v = px->data[i];
            if (v > kLogClamp) px->grad[i] += self.grad[i] / v;
            // below the clamp the forward value is constant, so the true
            // derivative is zero
        }
    });
}

Tensor layernorm_rows(const Tensor& x, double eps) {
    const std::size_t rows = x.rank() == 1 ? 1 : x.dim(0);
    const std::size_t d = x.rank() == 1 ? x.dim(0) : x.dim(1);
    if (x.rank() > 2) throw DimensionError("layernorm_rows: expected rank 1 or 2");
    auto out = make_node(x.shape());
    const auto& K = kernels::active();
    const double* xd = x.data().data();

    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd + r * d;
        const double mu = K.sum(row, d) / static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = row[i] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t i = 0; i < d; ++i) out->data[r * d + i] = (row[i] - mu) * inv;
    }

    auto px = x.node();
    return finish_op(std::move(out), {x}, [px, rows, d, inv_std](Node& self) {
        px->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double g_mean = 0.0, gy_mean = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                g_mean += g[i];
                gy_mean += g[i] * y[i];
            }
            g_mean /= static_cast<double>(d);
            gy_mean /= static_cast<double>(d);
            for (std::size_t i = 0; i < d; ++i)
                px->grad[r * d + i] += inv_std[r] * (g[i] - g_mean - y[i] * gy_mean);
        }
    });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto out = make_node({});
    out->data[0] = kernels::active().sum(x.data().data(), x.size());
    auto px = x.node();
    return finish_op(std::move(out), {x}, [px](Node& self) {
        px->ensure_grad();
        const double g = self.grad[0];
        for (double& v : px->grad) v += g;
    });
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    auto out = make_node({});
    out->data[0] = kernels::active().sum(x.data().data(), x.size()) * inv;
    auto px = x.node();
    return finish_op(std::move(out), {x}, [px, inv](Node& self) {
        px->ensure_grad();
        const double g = self.grad[0] * inv;
        for (double& v : px->grad) v += g;
    });
}

namespace {

Tensor reduce_axis(const Tensor& x, std::size_t axis, bool take_mean, const char* name) {
    require_rank2(x, name);
    if (axis > 1) throw DimensionError(std::string(name) + ": axis out of range");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const std::size_t out_len = axis == 0 ? cols : rows;
    const double scale = take_mean ? 1.0 / static_cast<double>(axis == 0 ? rows : cols) : 1.0;
    auto out = make_node({out_len});
    const auto& K = kernels::active();
    const double* xd = x.data().data();
    if (axis == 0) {
        for (std::size_t r = 0; r < rows; ++r) K.axpy(scale, xd + r * cols, out->data.data(), cols);
    } else {
        for (std::size_t r = 0; r < rows; ++r) out->data[r] = K.sum(xd + r * cols, cols) * scale;
    }
    auto px = x.node();
    return finish_op(std::move(out), {x}, [px, axis, rows, cols, scale](Node& self) {
        px->ensure_grad();
        const auto& kn = kernels::active();
        if (axis == 0) {
            for (std::size_t r = 0; r < rows; ++r)
                kn.axpy(scale, self.grad.data(), px->grad.data() + r * cols, cols);
        } else {
            for (std::size_t r = 0; r < rows; ++r) {
                const double g = self.grad[r] * scale;
                for (std::size_t c = 0; c < cols; ++c) px->grad[r * cols + c] += g;
            }
        }
    });
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, false, "sum"); }
Tensor mean(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, true, "mean"); }

// ---- shape ops ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                             " changes element count");
    auto out = make_node(std::move(shape));
    out->data = std::vector<double>(x.data().begin(), x.data().end());
    auto px = x.node();
    return finish_op(std::move(out), {x}, [px](Node& self) {
        px->ensure_grad();
        kernels::active().axpy(1.0, self.grad.data(), px->grad.data(), px->grad.size());
    });
}

Tensor transpose(const Tensor& x) {
    require_rank2(x, "transpose");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    auto out = make_node({cols, rows});
    const double* xd = x.data().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out->data[c * rows + r] = xd[r * cols + c];
    auto px = x.node();
    return finish_op(std::move(out), {x}, [px, rows, cols](Node& self) {
        px->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                px->grad[r * cols + c] += self.grad[c * rows + r];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: empty part list");
    const std::size_t rank = parts[0].rank();
    if (rank == 0 || rank > 2 || axis >= rank)
        throw DimensionError("concat: unsupported rank/axis combination");

    Shape out_shape = parts[0].shape();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (s.size() != rank)
            throw DimensionError("concat: rank mismatch between parts");
        for (std::size_t i = 0; i < rank; ++i) {
            if (i == axis) continue;
            if (s[i] != out_shape[i])
                throw DimensionError("concat: part " + shape_str(s) + " does not align with " +
                                     shape_str(parts[0].shape()));
        }
        out_shape[axis] += s[axis];
    }

    auto out = make_node(out_shape);
    const std::size_t out_cols = rank == 2 ? out_shape[1] : out_shape[0];
    std::vector<std::size_t> offsets;  // element (axis==0/rank1) or column offsets
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(off);
        if (rank == 1 || axis == 0) {
            std::memcpy(out->data.data() + (rank == 2 ? off * out_cols : off),
                        p.data().data(), p.size() * sizeof(double));
            off += p.dim(axis);
        } else {
            const std::size_t rows = p.dim(0), cols = p.dim(1);
            for (std::size_t r = 0; r < rows; ++r)
                std::memcpy(out->data.data() + r * out_cols + off, p.data().data() + r * cols,
                            cols * sizeof(double));
            off += cols;
        }
    }

    std::vector<std::shared_ptr<Node>> parent_nodes;
    bool needs = false;
    for (const Tensor& p : parts) {
        parent_nodes.push_back(p.node());
        needs = needs || p.node()->requires_grad;
    }
    if (needs) {
        out->requires_grad = true;
        out->parents = parent_nodes;
        const std::size_t cols_total = out_cols;
        std::vector<Shape> part_shapes;
        for (const Tensor& p : parts) part_shapes.push_back(p.shape());
        out->backward_fn = [parent_nodes, offsets, part_shapes, rank, axis,
                            cols_total](Node& self) {
            for (std::size_t p = 0; p < parent_nodes.size(); ++p) {
                auto& parent = parent_nodes[p];
                parent->ensure_grad();
                const Shape& s = part_shapes[p];
                if (rank == 1 || axis == 0) {
                    const std::size_t base =
                        rank == 2 ? offsets[p] * cols_total : offsets[p];
                    kernels::active().axpy(1.0, self.grad.data() + base, parent->grad.data(),
                                           parent->grad.size());
                } else {
                    const std::size_t rows = s[0], cols = s[1];
                    for (std::size_t r = 0; r < rows; ++r)
                        kernels::active().axpy(1.0,
                                               self.grad.data() + r * cols_total + offsets[p],
                                               parent->grad.data() + r * cols, cols);
                }
            }
        };
    }
    debug_assert_finite(*out);
    return Tensor(std::move(out));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    if (x.rank() == 0 || x.rank() > 2 || axis >= x.rank())
        throw DimensionError("slice: unsupported rank/axis combination");
    if (begin > end || end > x.dim(axis))
        throw IndexError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") exceeds extent " + std::to_string(x.dim(axis)));

    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    auto out = make_node(out_shape);
    const double* xd = x.data().data();

    if (x.rank() == 1 || axis == 0) {
        const std::size_t cols = x.rank() == 2 ? x.dim(1) : 1;
        std::memcpy(out->data.data(), xd + begin * cols, out->data.size() * sizeof(double));
    } else {
        const std::size_t rows = x.dim(0), cols = x.dim(1), w = end - begin;
        for (std::size_t r = 0; r < rows; ++r)
            std::memcpy(out->data.data() + r * w, xd + r * cols + begin, w * sizeof(double));
    }

    auto px = x.node();
    const std::size_t rank = x.rank();
    return finish_op(std::move(out), {x}, [px, rank, axis, begin](Node& self) {
        px->ensure_grad();
        if (rank == 1 || axis == 0) {
            const std::size_t cols = rank == 2 ? px->shape[1] : 1;
            kernels::active().axpy(1.0, self.grad.data(), px->grad.data() + begin * cols,
                                   self.grad.size());
        } else {
            const std::size_t rows = px->shape[0], cols = px->shape[1], w = self.shape[1];
            for (std::size_t r = 0; r < rows; ++r)
                kernels::active().axpy(1.0, self.grad.data() + r * w,
                                       px->grad.data() + r * cols + begin, w);
        }
    });
}

Tensor gather(const Tensor& table, const std::vector<int>& ids) {
    require_rank2(table, "gather");
    const std::size_t rows = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= rows)
            throw IndexError("gather: id " + std::to_string(id) + " outside table with " +
                             std::to_string(rows) + " rows");
    }
    auto out = make_node({ids.size(), d});
    const double* td = table.data().data();
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out->data.data() + i * d, td + static_cast<std::size_t>(ids[i]) * d,
                    d * sizeof(double));

    auto pt = table.node();
    return finish_op(std::move(out), {table}, [pt, ids, d](Node& self) {
        pt->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            kernels::active().axpy(1.0, self.grad.data() + i * d,
                                   pt->grad.data() + static_cast<std::size_t>(ids[i]) * d, d);
    });
}

// ---- backward ------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ContractError("backward: loss must be a scalar, got " + shape_str(loss.shape()));

    Node* root = loss.node().get();
    if (!root->requires_grad && root->is_leaf()) {
        root->ensure_grad();
        root->grad[0] += 1.0;
        return;
    }

    // Iterative post-order DFS over the requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Fresh grads for interior nodes; leaves keep accumulating across calls.
    for (Node* n : order) {
        if (n->is_leaf())
            n->ensure_grad();
        else
            n->grad.assign(n->data.size(), 0.0);
    }
    root->ensure_grad();
    root->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

double finite_difference_check(const std::function<Tensor()>& loss_fn, Tensor x, double h) {
    if (!x.requires_grad())
        throw ContractError("finite_difference_check: x does not require gradients");

    x.zero_grad();
    backward(loss_fn());
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());

    double max_rel = 0.0;
    auto data = x.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        const double step = h * std::max(1.0, std::abs(orig));
        data[i] = orig + step;
        const double xp = data[i];
        const double fp = loss_fn().value();
        data[i] = orig - step;
        const double xm = data[i];
        const double fm = loss_fn().value();
        data[i] = orig;
        // Divide by the step that was actually applied, not the nominal 2h;
        // linear functions then difference exactly.
        const double numeric = (fp - fm) / (xp - xm);
        const double rel = std::abs(analytic[i] - numeric) /
                           std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// ---- serialization ------------------------------------------------------------

namespace {

void store_u16(std::ostream& out, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(b, 2);
}

void store_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void store_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

std::uint64_t load_bytes(std::istream& in, int count) {
    unsigned char b[8] = {0};
    in.read(reinterpret_cast<char*>(b), count);
    if (in.gcount() != count) throw IoError("tensor stream: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < count; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write("ETMA", 4);
    store_u16(out, kTensorFormatVersion);
    store_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) store_u64(out, d);
    for (double v : t.data()) store_u64(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw IoError("tensor stream: write failed");
}

Tensor read_tensor(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "ETMA", 4) != 0)
        throw IoError("tensor stream: bad magic bytes");
    const auto version = static_cast<std::uint16_t>(load_bytes(in, 2));
    if (version != kTensorFormatVersion)
        throw IoError("tensor stream: format version mismatch: expected " +
                      std::to_string(kTensorFormatVersion) + ", found " + std::to_string(version));
    const auto rank = static_cast<std::uint32_t>(load_bytes(in, 4));
    if (rank > 8) throw IoError("tensor stream: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(load_bytes(in, 8));
    const std::size_t count = shape_numel(shape);
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i)
        data[i] = std::bit_cast<double>(load_bytes(in, 8));
    return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace etma
