#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
// Every op builds a node in a dynamic tape; backward() walks the tape in
// reverse topological order. Slices copy; there are no views.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dsct/errors.hpp"
#include "dsct/rng.hpp"

namespace dsct {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename S>
struct NodeT {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad; // empty until first accumulation
    bool requires_grad = false;
    bool backward_ran = false; // set on the node backward() was seeded from
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backward_fn;

    NodeT() = default;
    explicit NodeT(Shape s) : shape(std::move(s)), data(shape_numel(shape), S(0)) {}
    NodeT(Shape s, S fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}
    NodeT(Shape s, std::vector<S> d) : shape(std::move(s)), data(std::move(d)) {}

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), S(0));
    }
    void accumulate(const std::vector<S>& g) {
        ensure_grad();
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
};

template <typename S>
class TensorT {
public:
    using Scalar = S;
    using Node = NodeT<S>;

    TensorT() : node_(std::make_shared<Node>()) {}
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static TensorT zeros(Shape s) { return TensorT(std::make_shared<Node>(std::move(s))); }
    static TensorT full(Shape s, S v) { return TensorT(std::make_shared<Node>(std::move(s), v)); }
    static TensorT from(Shape s, std::vector<S> d) {
        if (shape_numel(s) != d.size())
            throw ShapeError("tensor: shape " + shape_str(s) + " does not hold " +
                             std::to_string(d.size()) + " values");
        return TensorT(std::make_shared<Node>(std::move(s), std::move(d)));
    }
    static TensorT scalar(S v) { return full({1}, v); }
    static TensorT randn(Shape s, Rng& rng, S stddev = S(1)) {
        auto n = std::make_shared<Node>(std::move(s));
        for (auto& v : n->data) v = S(rng.normal()) * stddev;
        return TensorT(std::move(n));
    }

    const Shape& shape() const { return node_->shape; }
    size_t dim(size_t i) const { return node_->shape[i]; }
    size_t ndim() const { return node_->shape.size(); }
    size_t numel() const { return node_->data.size(); }

    const std::vector<S>& values() const { return node_->data; }
    std::vector<S>& values_mut() { return node_->data; }
    S value(size_t i) const { return node_->data[i]; }
    S at(size_t r, size_t c) const { return node_->data[r * node_->shape[1] + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    TensorT& set_requires_grad(bool b = true) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<S>& grad() const {
        if (node_->grad.empty()) throw StateError("tensor: no gradient accumulated; run backward() first");
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); node_->backward_ran = false; }

    std::shared_ptr<Node> node() const { return node_; }

    void backward() const;

private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

namespace detail {

template <typename S>
void topo_sort(const std::shared_ptr<NodeT<S>>& root, std::vector<NodeT<S>*>& order) {
    // Iterative post-order DFS; graphs can be a few thousand nodes deep.
    std::unordered_set<NodeT<S>*> visited;
    std::vector<std::pair<NodeT<S>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            NodeT<S>* p = node->parents[next_child++].get();
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

} // namespace detail

template <typename S>
void TensorT<S>::backward() const {
    if (numel() != 1)
        throw ContractError("backward: seed must be scalar, got shape " + shape_str(shape()));
    if (node_->backward_ran)
        throw StateError("backward: graph already consumed; rebuild the forward pass or zero_grad first");
    node_->backward_ran = true;

    std::vector<Node*> order;
    detail::topo_sort(node_, order);

    node_->ensure_grad();
    node_->grad[0] += S(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// op helpers

namespace detail {

template <typename S>
std::shared_ptr<NodeT<S>> make_result(Shape shape, const std::vector<std::shared_ptr<NodeT<S>>>& parents) {
    auto n = std::make_shared<NodeT<S>>(std::move(shape));
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->parents = parents;
    return n;
}

// b broadcasts against a iff b's shape is a trailing suffix of a's shape
inline bool trailing_broadcast(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    size_t off = a.size() - b.size();
    for (size_t i = 0; i < b.size(); ++i)
        if (a[off + i] != b[i]) return false;
    return true;
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise add / sub / mul, with trailing-suffix broadcast of the rhs

template <typename S, typename FwdFn, typename BwdFn>
TensorT<S> binary_pointwise(const TensorT<S>& a, const TensorT<S>& b, const char* name,
                            FwdFn fwd, BwdFn bwd) {
    const bool same = a.shape() == b.shape();
    if (!same && !detail::trailing_broadcast(a.shape(), b.shape()))
        throw ShapeError(std::string(name) + ": shapes not compatible: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    auto an = a.node();
    auto bn = b.node();
    auto rn = detail::make_result<S>(a.shape(), {an, bn});
    const size_t bs = bn->data.size();
    for (size_t i = 0; i < rn->data.size(); ++i)
        rn->data[i] = fwd(an->data[i], bn->data[i % bs]);
    if (rn->requires_grad) {
        rn->backward_fn = [an, bn, bwd](NodeT<S>& r) {
            const size_t bs = bn->data.size();
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (size_t i = 0; i < r.grad.size(); ++i) {
                auto [da, db] = bwd(an->data[i], bn->data[i % bs], r.grad[i]);
                if (an->requires_grad) an->grad[i] += da;
                if (bn->requires_grad) bn->grad[i % bs] += db; // broadcast reduces by accumulation
            }
        };
    }
    return TensorT<S>(rn);
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_pointwise(a, b, "add",
                            [](S x, S y) { return x + y; },
                            [](S, S, S g) { return std::pair<S, S>(g, g); });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_pointwise(a, b, "sub",
                            [](S x, S y) { return x - y; },
                            [](S, S, S g) { return std::pair<S, S>(g, -g); });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_pointwise(a, b, "mul",
                            [](S x, S y) { return x * y; },
                            [](S x, S y, S g) { return std::pair<S, S>(g * y, g * x); });
}

template <typename S> TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) { return add(a, b); }
template <typename S> TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) { return sub(a, b); }
template <typename S> TensorT<S> operator*(const TensorT<S>& a, const TensorT<S>& b) { return mul(a, b); }

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    auto an = a.node();
    auto rn = detail::make_result<S>(a.shape(), {an});
    for (size_t i = 0; i < rn->data.size(); ++i) rn->data[i] = an->data[i] * c;
    if (rn->requires_grad) {
        rn->backward_fn = [an, c](NodeT<S>& r) {
            an->ensure_grad();
            for (size_t i = 0; i < r.grad.size(); ++i) an->grad[i] += r.grad[i] * c;
        };
    }
    return TensorT<S>(rn);
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
    auto an = a.node();
    auto rn = detail::make_result<S>(a.shape(), {an});
    for (size_t i = 0; i < rn->data.size(); ++i) rn->data[i] = an->data[i] > S(0) ? an->data[i] : S(0);
    if (rn->requires_grad) {
        rn->backward_fn = [an](NodeT<S>& r) {
            an->ensure_grad();
            for (size_t i = 0; i < r.grad.size(); ++i)
                if (an->data[i] > S(0)) an->grad[i] += r.grad[i];
        };
    }
    return TensorT<S>(rn);
}

// ---------------------------------------------------------------------------
// matmul / transpose (2-D)

template <typename S>
void matmul_raw(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
    std::fill(c, c + m * n, S(0));
    for (size_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const S av = arow[p];
            const S* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto an = a.node();
    auto bn = b.node();
    auto rn = detail::make_result<S>({m, n}, {an, bn});
    matmul_raw(an->data.data(), bn->data.data(), rn->data.data(), m, k, n);
    if (rn->requires_grad) {
        rn->backward_fn = [an, bn, m, k, n](NodeT<S>& r) {
            const S* g = r.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dC · Bᵀ
                S* da = an->grad.data();
                const S* bd = bn->data.data();
                for (size_t i = 0; i < m; ++i)
                    for (size_t p = 0; p < k; ++p) {
                        S acc = S(0);
                        const S* grow = g + i * n;
                        const S* brow = bd + p * n;
                        for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[i * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB = Aᵀ · dC
                S* db = bn->grad.data();
                const S* ad = an->data.data();
                for (size_t i = 0; i < m; ++i) {
                    const S* grow = g + i * n;
                    for (size_t p = 0; p < k; ++p) {
                        const S av = ad[i * k + p];
                        S* dbrow = db + p * n;
                        for (size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return TensorT<S>(rn);
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expects 2-D, got " + shape_str(a.shape()));
    const size_t m = a.dim(0), n = a.dim(1);
    auto an = a.node();
    auto rn = detail::make_result<S>({n, m}, {an});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) rn->data[j * m + i] = an->data[i * n + j];
    if (rn->requires_grad) {
        rn->backward_fn = [an, m, n](NodeT<S>& r) {
            an->ensure_grad();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) an->grad[i * n + j] += r.grad[j * m + i];
        };
    }
    return TensorT<S>(rn);
}

// ---------------------------------------------------------------------------
// reductions and per-line ops along an axis

namespace detail {

struct AxisView {
    size_t outer, len, inner;
};

inline AxisView axis_view(const Shape& s, size_t axis) {
    if (axis >= s.size())
        throw ContractError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    AxisView v{1, s[axis], 1};
    for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

inline Shape drop_axis(const Shape& s, size_t axis) {
    Shape r;
    for (size_t i = 0; i < s.size(); ++i)
        if (i != axis) r.push_back(s[i]);
    if (r.empty()) r.push_back(1);
    return r;
}

} // namespace detail

template <typename S>
TensorT<S> softmax(const TensorT<S>& x, size_t axis) {
    auto v = detail::axis_view(x.shape(), axis);
    auto xn = x.node();
    auto rn = detail::make_result<S>(x.shape(), {xn});
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t in = 0; in < v.inner; ++in) {
            const size_t base = o * v.len * v.inner + in;
            S mx = xn->data[base];
            for (size_t t = 1; t < v.len; ++t) mx = std::max(mx, xn->data[base + t * v.inner]);
            S sum = S(0);
            for (size_t t = 0; t < v.len; ++t) {
                S e = std::exp(xn->data[base + t * v.inner] - mx);
                rn->data[base + t * v.inner] = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (size_t t = 0; t < v.len; ++t) rn->data[base + t * v.inner] *= inv;
        }
    if (rn->requires_grad) {
        auto rnw = std::weak_ptr<NodeT<S>>(rn);
        rn->backward_fn = [xn, v, rnw](NodeT<S>& r) {
            xn->ensure_grad();
            // dx = s ⊙ (g − ⟨g,s⟩)
            for (size_t o = 0; o < v.outer; ++o)
                for (size_t in = 0; in < v.inner; ++in) {
                    const size_t base = o * v.len * v.inner + in;
                    S dot = S(0);
                    for (size_t t = 0; t < v.len; ++t) {
                        const size_t idx = base + t * v.inner;
                        dot += r.grad[idx] * r.data[idx];
                    }
                    for (size_t t = 0; t < v.len; ++t) {
                        const size_t idx = base + t * v.inner;
                        xn->grad[idx] += r.data[idx] * (r.grad[idx] - dot);
                    }
                }
        };
    }
    return TensorT<S>(rn);
}

template <typename S>
TensorT<S> log_softmax(const TensorT<S>& x, size_t axis) {
    auto v = detail::axis_view(x.shape(), axis);
    auto xn = x.node();
    auto rn = detail::make_result<S>(x.shape(), {xn});
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t in = 0; in < v.inner; ++in) {
            const size_t base = o * v.len * v.inner + in;
            S mx = xn->data[base];
            for (size_t t = 1; t < v.len; ++t) mx = std::max(mx, xn->data[base + t * v.inner]);
            S sum = S(0);
            for (size_t t = 0; t < v.len; ++t) sum += std::exp(xn->data[base + t * v.inner] - mx);
            const S lse = mx + std::log(sum);
            for (size_t t = 0; t < v.len; ++t)
                rn->data[base + t * v.inner] = xn->data[base + t * v.inner] - lse;
        }
    if (rn->requires_grad) {
        rn->backward_fn = [xn, v](NodeT<S>& r) {
            xn->ensure_grad();
            // dx = g − softmax · Σg
            for (size_t o = 0; o < v.outer; ++o)
                for (size_t in = 0; in < v.inner; ++in) {
                    const size_t base = o * v.len * v.inner + in;
                    S gsum = S(0);
                    for (size_t t = 0; t < v.len; ++t) gsum += r.grad[base + t * v.inner];
                    for (size_t t = 0; t < v.len; ++t) {
                        const size_t idx = base + t * v.inner;
                        xn->grad[idx] += r.grad[idx] - std::exp(r.data[idx]) * gsum;
                    }
                }
        };
    }
    return TensorT<S>(rn);
}

template <typename S>
TensorT<S> reduce_mean(const TensorT<S>& x, size_t axis) {
    auto v = detail::axis_view(x.shape(), axis);
    auto xn = x.node();
    auto rn = detail::make_result<S>(detail::drop_axis(x.shape(), axis), {xn});
    const S invn = S(1) / S(v.len);
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t in = 0; in < v.inner; ++in) {
            S acc = S(0);
            for (size_t t = 0; t < v.len; ++t) acc += xn->data[o * v.len * v.inner + t * v.inner + in];
            rn->data[o * v.inner + in] = acc * invn;
        }
    if (rn->requires_grad) {
        rn->backward_fn = [xn, v, invn](NodeT<S>& r) {
            xn->ensure_grad();
            for (size_t o = 0; o < v.outer; ++o)
                for (size_t in = 0; in < v.inner; ++in) {
                    const S g = r.grad[o * v.inner + in] * invn;
                    for (size_t t = 0; t < v.len; ++t)
                        xn->grad[o * v.len * v.inner + t * v.inner + in] += g;
                }
        };
    }
    return TensorT<S>(rn);
}

// population variance (divide by n)
template <typename S>
TensorT<S> reduce_var(const TensorT<S>& x, size_t axis) {
    auto v = detail::axis_view(x.shape(), axis);
    auto xn = x.node();
    auto rn = detail::make_result<S>(detail::drop_axis(x.shape(), axis), {xn});
    const S invn = S(1) / S(v.len);
    std::vector<S> means(v.outer * v.inner);
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t in = 0; in < v.inner; ++in) {
            S acc = S(0);
            for (size_t t = 0; t < v.len; ++t) acc += xn->data[o * v.len * v.inner + t * v.inner + in];
            const S m = acc * invn;
            means[o * v.inner + in] = m;
            S var = S(0);
            for (size_t t = 0; t < v.len; ++t) {
                const S d = xn->data[o * v.len * v.inner + t * v.inner + in] - m;
                var += d * d;
            }
            rn->data[o * v.inner + in] = var * invn;
        }
    if (rn->requires_grad) {
        rn->backward_fn = [xn, v, invn, means = std::move(means)](NodeT<S>& r) {
            xn->ensure_grad();
            // dvar/dx_t = 2(x_t − mean)/n
            for (size_t o = 0; o < v.outer; ++o)
                for (size_t in = 0; in < v.inner; ++in) {
                    const S g = r.grad[o * v.inner + in];
                    const S m = means[o * v.inner + in];
                    for (size_t t = 0; t < v.len; ++t) {
                        const size_t idx = o * v.len * v.inner + t * v.inner + in;
                        xn->grad[idx] += g * S(2) * (xn->data[idx] - m) * invn;
                    }
                }
        };
    }
    return TensorT<S>(rn);
}

template <typename S>
std::pair<TensorT<S>, TensorT<S>> reduce_moments(const TensorT<S>& x, size_t axis) {
    return {reduce_mean(x, axis), reduce_var(x, axis)};
}

template <typename S>
TensorT<S> sum(const TensorT<S>& x) {
    auto xn = x.node();
    auto rn = detail::make_result<S>({1}, {xn});
    S acc = S(0);
    for (S v : xn->data) acc += v;
    rn->data[0] = acc;
    if (rn->requires_grad) {
        rn->backward_fn = [xn](NodeT<S>& r) {
            xn->ensure_grad();
            for (auto& g : xn->grad) g += r.grad[0];
        };
    }
    return TensorT<S>(rn);
}

// ---------------------------------------------------------------------------
// structural ops (all copies)

template <typename S>
TensorT<S> slice_cols(const TensorT<S>& x, size_t start, size_t len) {
    if (x.ndim() != 2) throw ShapeError("slice_cols: expects 2-D, got " + shape_str(x.shape()));
    if (start + len > x.dim(1))
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(x.shape()));
    const size_t rows = x.dim(0), cols = x.dim(1);
    auto xn = x.node();
    auto rn = detail::make_result<S>({rows, len}, {xn});
    for (size_t i = 0; i < rows; ++i)
        std::copy_n(xn->data.begin() + i * cols + start, len, rn->data.begin() + i * len);
    if (rn->requires_grad) {
        rn->backward_fn = [xn, start, len, rows, cols](NodeT<S>& r) {
            xn->ensure_grad();
            for (size_t i = 0; i < rows; ++i)
                for (size_t j = 0; j < len; ++j) xn->grad[i * cols + start + j] += r.grad[i * len + j];
        };
    }
    return TensorT<S>(rn);
}

template <typename S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const size_t rows = parts[0].dim(0);
    size_t cols = 0;
    std::vector<std::shared_ptr<NodeT<S>>> parents;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != rows)
            throw ShapeError("concat_cols: row counts differ: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        cols += p.dim(1);
        parents.push_back(p.node());
    }
    auto rn = detail::make_result<S>({rows, cols}, parents);
    size_t off = 0;
    for (const auto& p : parents) {
        const size_t w = p->shape[1];
        for (size_t i = 0; i < rows; ++i)
            std::copy_n(p->data.begin() + i * w, w, rn->data.begin() + i * cols + off);
        off += w;
    }
    if (rn->requires_grad) {
        rn->backward_fn = [parents, rows, cols](NodeT<S>& r) {
            size_t off = 0;
            for (const auto& p : parents) {
                const size_t w = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < rows; ++i)
                        for (size_t j = 0; j < w; ++j) p->grad[i * w + j] += r.grad[i * cols + off + j];
                }
                off += w;
            }
        };
    }
    return TensorT<S>(rn);
}

// rows of `table` gathered by id; gradient scatters back into the table
template <typename S>
TensorT<S> gather_rows(const TensorT<S>& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw ShapeError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
    const size_t v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || size_t(id) >= v)
            throw ContractError("gather_rows: id " + std::to_string(id) + " out of range [0," +
                                std::to_string(v) + ")");
    auto tn = table.node();
    auto rn = detail::make_result<S>({ids.size(), d}, {tn});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(tn->data.begin() + size_t(ids[i]) * d, d, rn->data.begin() + i * d);
    if (rn->requires_grad) {
        rn->backward_fn = [tn, ids, d](NodeT<S>& r) {
            tn->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (size_t j = 0; j < d; ++j) tn->grad[size_t(ids[i]) * d + j] += r.grad[i * d + j];
        };
    }
    return TensorT<S>(rn);
}

// out[i] = x[i, ids[i]]
template <typename S>
TensorT<S> pick_per_row(const TensorT<S>& x, const std::vector<int>& ids) {
    if (x.ndim() != 2) throw ShapeError("pick_per_row: expects 2-D, got " + shape_str(x.shape()));
    if (ids.size() != x.dim(0))
        throw ShapeError("pick_per_row: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(x.dim(0)) + " rows");
    const size_t cols = x.dim(1);
    for (int id : ids)
        if (id < 0 || size_t(id) >= cols)
            throw ContractError("pick_per_row: id " + std::to_string(id) + " out of range [0," +
                                std::to_string(cols) + ")");
    auto xn = x.node();
    auto rn = detail::make_result<S>({ids.size()}, {xn});
    for (size_t i = 0; i < ids.size(); ++i) rn->data[i] = xn->data[i * cols + size_t(ids[i])];
    if (rn->requires_grad) {
        rn->backward_fn = [xn, ids, cols](NodeT<S>& r) {
            xn->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i) xn->grad[i * cols + size_t(ids[i])] += r.grad[i];
        };
    }
    return TensorT<S>(rn);
}

// each row of x scaled by the matching entry of s: out[i,:] = x[i,:] * s[i]
template <typename S>
TensorT<S> scale_rows(const TensorT<S>& x, const TensorT<S>& s) {
    if (x.ndim() != 2 || s.ndim() != 1 || s.dim(0) != x.dim(0))
        throw ShapeError("scale_rows: got " + shape_str(x.shape()) + " and " + shape_str(s.shape()));
    const size_t rows = x.dim(0), cols = x.dim(1);
    auto xn = x.node();
    auto sn = s.node();
    auto rn = detail::make_result<S>({rows, cols}, {xn, sn});
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) rn->data[i * cols + j] = xn->data[i * cols + j] * sn->data[i];
    if (rn->requires_grad) {
        rn->backward_fn = [xn, sn, rows, cols](NodeT<S>& r) {
            if (xn->requires_grad) xn->ensure_grad();
            if (sn->requires_grad) sn->ensure_grad();
            for (size_t i = 0; i < rows; ++i) {
                S dot = S(0);
                for (size_t j = 0; j < cols; ++j) {
                    const size_t idx = i * cols + j;
                    if (xn->requires_grad) xn->grad[idx] += r.grad[idx] * sn->data[i];
                    dot += r.grad[idx] * xn->data[idx];
                }
                if (sn->requires_grad) sn->grad[i] += dot;
            }
        };
    }
    return TensorT<S>(rn);
}

// forward takes the given hard values; backward passes gradients straight
// through to x (the soft relaxation)
template <typename S>
TensorT<S> straight_through(const TensorT<S>& x, std::vector<S> hard_values) {
    if (hard_values.size() != x.numel())
        throw ShapeError("straight_through: value count " + std::to_string(hard_values.size()) +
                         " does not match " + shape_str(x.shape()));
    auto xn = x.node();
    auto rn = detail::make_result<S>(x.shape(), {xn});
    rn->data = std::move(hard_values);
    if (rn->requires_grad) {
        rn->backward_fn = [xn](NodeT<S>& r) {
            xn->ensure_grad();
            for (size_t i = 0; i < r.grad.size(); ++i) xn->grad[i] += r.grad[i];
        };
    }
    return TensorT<S>(rn);
}

// inverted dropout; identity when not training
template <typename S>
TensorT<S> dropout(const TensorT<S>& x, double keep_prob, Rng& rng, bool training) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
        throw ContractError("dropout: keep_prob must be in (0,1], got " + std::to_string(keep_prob));
    if (!training || keep_prob == 1.0) return x;
    auto xn = x.node();
    auto rn = detail::make_result<S>(x.shape(), {xn});
    std::vector<S> mask(x.numel());
    const S scale = S(1.0 / keep_prob);
    for (size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform() < keep_prob ? scale : S(0);
        rn->data[i] = xn->data[i] * mask[i];
    }
    if (rn->requires_grad) {
        rn->backward_fn = [xn, mask = std::move(mask)](NodeT<S>& r) {
            xn->ensure_grad();
            for (size_t i = 0; i < r.grad.size(); ++i) xn->grad[i] += r.grad[i] * mask[i];
        };
    }
    return TensorT<S>(rn);
}

// ---------------------------------------------------------------------------
// forward-only helpers

template <typename S>
std::vector<int> argmax_rows(const TensorT<S>& x) {
    if (x.ndim() != 2) throw ShapeError("argmax_rows: expects 2-D, got " + shape_str(x.shape()));
    const size_t rows = x.dim(0), cols = x.dim(1);
    std::vector<int> out(rows);
    for (size_t i = 0; i < rows; ++i) {
        size_t best = 0;
        for (size_t j = 1; j < cols; ++j)
            if (x.value(i * cols + j) > x.value(i * cols + best)) best = j; // ties keep lowest index
        out[i] = int(best);
    }
    return out;
}

template <typename S>
bool all_finite(const TensorT<S>& x) {
    for (S v : x.values())
        if (!std::isfinite(double(v))) return false;
    return true;
}

// ---------------------------------------------------------------------------
// gradient checking: central differences against backward()

// f: callable taking TensorT<double> and returning a scalar TensorT<double>.
// Returns max_i |analytic_i − numeric_i| / max(1, |numeric_i|).
template <typename F>
double grad_check(F f, const TensorT<double>& x, double eps = 1e-5) {
    if (!(eps > 0)) throw ContractError("grad_check: eps must be positive");
    TensorT<double> probe = TensorT<double>::from(x.shape(), x.values());
    probe.set_requires_grad();
    TensorT<double> y = f(probe);
    if (y.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
    y.backward();
    std::vector<double> analytic = probe.grad();

    double max_err = 0.0;
    std::vector<double> vals = x.values();
    for (size_t i = 0; i < vals.size(); ++i) {
        const double keep = vals[i];
        vals[i] = keep + eps;
        const double fp = f(TensorT<double>::from(x.shape(), vals)).value(0);
        vals[i] = keep - eps;
        const double fm = f(TensorT<double>::from(x.shape(), vals)).value(0);
        vals[i] = keep;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace dsct
