#pragma once

// Dense row-major N-d arrays with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Operations record their
// parents and a backward closure whenever gradient recording is enabled and
// at least one input requires a gradient. `backward(loss)` sweeps the graph
// in reverse topological order and accumulates gradients additively, so a
// node consumed twice receives the sum of both contributions.
//
// Broadcasting is limited to size-1 dimensions between operands of equal
// rank.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "gliomaforge/error.hpp"

namespace gliomaforge {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

inline Shape contiguous_strides(const Shape& s) {
    Shape st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
    /// Gradient buffer of parent i, or nullptr when it does not want one.
    T* parent_grad(std::size_t i) {
        Node& p = *parents[i];
        return p.requires_grad ? p.grad.data() : nullptr;
    }
};

namespace detail {
inline thread_local bool grad_recording = true;
}

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
    ~NoGradGuard() { detail::grad_recording = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
class Tensor {
public:
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        for (auto d : shape) require(d >= 1, ErrorKind::shape, "nonpositive dimension in " + shape_str(shape));
        require(static_cast<std::int64_t>(values.size()) == shape_numel(shape), ErrorKind::shape,
                "value count " + std::to_string(values.size()) + " does not fill " + shape_str(shape));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor full(const Shape& shape, T v, bool requires_grad = false) {
        return from(shape, std::vector<T>(static_cast<std::size_t>(shape_numel(shape)), v), requires_grad);
    }
    static Tensor zeros(const Shape& shape, bool requires_grad = false) { return full(shape, T(0), requires_grad); }
    static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

    const std::vector<T>& values() const { return node_->value; }
    /// Mutable storage; only meant for leaves (parameters, inputs).
    std::vector<T>& mutable_values() { return node_->value; }
    T item() const {
        require(node_->value.size() == 1, ErrorKind::usage, "item() on non-scalar " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient, or zeros when none has been accumulated.
    std::vector<T> grad() const {
        return node_->grad.empty() ? std::vector<T>(node_->value.size(), T(0)) : node_->grad;
    }
    std::vector<T>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    /// A leaf sharing no graph history, holding a copy of the values.
    Tensor detach() const { return from(shape(), values(), false); }

    const NodePtr& node() const { return node_; }
    const char* op() const { return node_->op; }

private:
    NodePtr node_;
};

/// Creates the output node of an operation. The backward closure is kept
/// only when recording is on and some parent requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn, const char* op) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    bool needs = false;
    if (detail::grad_recording)
        for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        n->requires_grad = true;
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(n));
}

/// Reverse-mode sweep from a scalar.
template <typename T>
void backward(const Tensor<T>& loss) {
    require(loss.numel() == 1, ErrorKind::usage, "backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    Node<T>* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->backward_fn || n->grad.empty()) continue;
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// GEMM kernel shared by matmul and the convolutions.

/// C[MxN] (+)= op(A) * op(B) on contiguous row-major buffers, where op(A) is
/// MxK (A stored KxM when trans_a) and op(B) is KxN (B stored NxK when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C,
          bool accumulate) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    Eigen::Map<Mat> c(C, M, N);
    const CMap a(A, trans_a ? K : M, trans_a ? M : K);
    const CMap b(B, trans_b ? N : K, trans_b ? K : N);
    auto run = [&](const auto& lhs, const auto& rhs) {
        if (accumulate)
            c.noalias() += lhs * rhs;
        else
            c.noalias() = lhs * rhs;
    };
    if (!trans_a && !trans_b) run(a, b);
    else if (trans_a && !trans_b) run(a.transpose(), b);
    else if (!trans_a && trans_b) run(a, b.transpose());
    else run(a.transpose(), b.transpose());
}

// ---------------------------------------------------------------------------
// Elementwise operations.

namespace detail {

struct BroadcastPlan {
    Shape out;
    Shape stride_a, stride_b;
    bool same = false;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    require(a.size() == b.size(), ErrorKind::shape,
            std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    BroadcastPlan plan;
    plan.same = a == b;
    plan.out.resize(a.size());
    const Shape sa = contiguous_strides(a), sb = contiguous_strides(b);
    plan.stride_a.resize(a.size());
    plan.stride_b.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        require(a[i] == b[i] || a[i] == 1 || b[i] == 1, ErrorKind::shape,
                std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        plan.out[i] = std::max(a[i], b[i]);
        plan.stride_a[i] = a[i] == 1 ? 0 : sa[i];
        plan.stride_b[i] = b[i] == 1 ? 0 : sb[i];
    }
    return plan;
}

/// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
    const std::int64_t n = shape_numel(plan.out);
    if (plan.same) {
        for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t r = plan.out.size();
    Shape counter(r, 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++counter[d];
            ia += plan.stride_a[d];
            ib += plan.stride_b[d];
            if (counter[d] < plan.out[d]) break;
            ia -= plan.stride_a[d] * counter[d];
            ib -= plan.stride_b[d] * counter[d];
            counter[d] = 0;
        }
    }
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, DA da, DB db) {
    const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), op);
    std::vector<T> out(static_cast<std::size_t>(shape_numel(plan.out)));
    const T* av = a.values().data();
    const T* bv = b.values().data();
    for_each_broadcast(plan, [&](std::int64_t o, std::int64_t i, std::int64_t j) { out[o] = fwd(av[i], bv[j]); });
    return make_result<T>(plan.out, std::move(out), {a, b},
                          [plan, da, db](Node<T>& self) {
                              const T* x = self.parents[0]->value.data();
                              const T* y = self.parents[1]->value.data();
                              T* gx = self.parent_grad(0);
                              T* gy = self.parent_grad(1);
                              const T* g = self.grad.data();
                              for_each_broadcast(plan, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
                                  if (gx) gx[i] += g[o] * da(x[i], y[j]);
                                  if (gy) gy[j] += g[o] * db(x[i], y[j]);
                              });
                          },
                          op);
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const Tensor<T>& a, const char* op, Fwd fwd, Deriv deriv) {
    std::vector<T> out(a.values().size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    return make_result<T>(a.shape(), std::move(out), {a},
                          [deriv](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              const auto& x = self.parents[0]->value;
                              for (std::size_t i = 0; i < x.size(); ++i)
                                  gx[i] += self.grad[i] * deriv(x[i], self.value[i]);
                          },
                          op);
}

} // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return detail::unary_op(a, "scale", [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary_op(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op(
        a, "relu", [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return detail::unary_op(
        a, "gelu", [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [](T x, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            return cdf + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_op(
        a, "sigmoid",
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return detail::unary_op(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T total = T(0);
    for (T v : a.values()) total += v;
    return make_result<T>({1}, {total}, {a},
                          [](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              const std::size_t n = self.parents[0]->value.size();
                              for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
                          },
                          "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Matrix products.

/// Batched product: a [..., m, k] times b [..., k, n] with equal batch dims,
/// or times a shared b [k, n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() >= 2 && b.rank() >= 2, ErrorKind::shape, "matmul needs rank >= 2 operands");
    const std::int64_t m = a.shape()[a.rank() - 2], k = a.shape()[a.rank() - 1];
    const std::int64_t kb = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
    require(k == kb, ErrorKind::shape, "matmul inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    const std::int64_t batch = shape_numel(a.shape()) / (m * k);
    const bool shared = b.rank() == 2;
    if (!shared) {
        require(b.rank() == a.rank() && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()),
                ErrorKind::shape, "matmul batch dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }

    std::vector<T> out(static_cast<std::size_t>(batch * m * n));
    if (shared) {
        gemm<T>(false, false, batch * m, n, k, a.values().data(), b.values().data(), out.data(), false);
    } else {
        for (std::int64_t i = 0; i < batch; ++i)
            gemm<T>(false, false, m, n, k, a.values().data() + i * m * k, b.values().data() + i * k * n,
                    out.data() + i * m * n, false);
    }
    return make_result<T>(out_shape, std::move(out), {a, b},
                          [batch, m, n, k, shared](Node<T>& self) {
                              const T* av = self.parents[0]->value.data();
                              const T* bv = self.parents[1]->value.data();
                              T* ga = self.parent_grad(0);
                              T* gb = self.parent_grad(1);
                              const T* g = self.grad.data();
                              if (shared) {
                                  if (ga) gemm<T>(false, true, batch * m, k, n, g, bv, ga, true);
                                  if (gb) gemm<T>(true, false, k, n, batch * m, av, g, gb, true);
                                  return;
                              }
                              for (std::int64_t i = 0; i < batch; ++i) {
                                  if (ga) gemm<T>(false, true, m, k, n, g + i * m * n, bv + i * k * n, ga + i * m * k, true);
                                  if (gb) gemm<T>(true, false, k, n, m, av + i * m * k, g + i * m * n, gb + i * k * n, true);
                              }
                          },
                          "matmul");
}

// ---------------------------------------------------------------------------
// Structural operations.

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    std::int64_t known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            require(infer < 0, ErrorKind::shape, "reshape: more than one -1");
            infer = static_cast<int>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0) {
        require(known > 0 && a.numel() % known == 0, ErrorKind::shape, "reshape: cannot infer dimension");
        shape[static_cast<std::size_t>(infer)] = a.numel() / known;
    }
    require(shape_numel(shape) == a.numel(), ErrorKind::shape,
            "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
    return make_result<T>(shape, a.values(), {a},
                          [](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
                          },
                          "reshape");
}

/// Output axis i is input axis dims[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& dims) {
    const std::size_t r = a.rank();
    require(dims.size() == r, ErrorKind::shape, "permute: wrong number of axes");
    std::vector<bool> seen(r, false);
    for (auto d : dims) {
        require(d < r && !seen[d], ErrorKind::shape, "permute: invalid axis list");
        seen[d] = true;
    }
    const Shape in_strides = contiguous_strides(a.shape());
    Shape out_shape(r), src_strides(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = a.shape()[dims[i]];
        src_strides[i] = in_strides[dims[i]];
    }
    // gather[o] = input offset feeding output element o
    const std::int64_t n = a.numel();
    auto gather = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
    {
        Shape counter(r, 0);
        std::int64_t src = 0;
        for (std::int64_t o = 0; o < n; ++o) {
            (*gather)[static_cast<std::size_t>(o)] = src;
            for (std::size_t d = r; d-- > 0;) {
                ++counter[d];
                src += src_strides[d];
                if (counter[d] < out_shape[d]) break;
                src -= src_strides[d] * counter[d];
                counter[d] = 0;
            }
        }
    }
    std::vector<T> out(static_cast<std::size_t>(n));
    const auto& av = a.values();
    for (std::int64_t o = 0; o < n; ++o) out[static_cast<std::size_t>(o)] = av[static_cast<std::size_t>((*gather)[static_cast<std::size_t>(o)])];
    return make_result<T>(out_shape, std::move(out), {a},
                          [gather](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              for (std::size_t o = 0; o < self.grad.size(); ++o) gx[(*gather)[o]] += self.grad[o];
                          },
                          "permute");
}

namespace detail {
/// outer x len x inner decomposition around one axis.
inline void split_axis(const Shape& s, std::size_t axis, std::int64_t& outer, std::int64_t& len, std::int64_t& inner) {
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
} // namespace detail

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::int64_t start, std::int64_t length) {
    require(axis < a.rank(), ErrorKind::shape, "slice: axis out of range");
    require(start >= 0 && length >= 1 && start + length <= a.shape()[axis], ErrorKind::shape,
            "slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of " + shape_str(a.shape()));
    std::int64_t outer, len, inner;
    detail::split_axis(a.shape(), axis, outer, len, inner);
    Shape out_shape = a.shape();
    out_shape[axis] = length;
    std::vector<T> out(static_cast<std::size_t>(outer * length * inner));
    const auto& av = a.values();
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(av.begin() + (o * len + start) * inner, length * inner, out.begin() + o * length * inner);
    return make_result<T>(out_shape, std::move(out), {a},
                          [outer, len, inner, start, length](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              for (std::int64_t o = 0; o < outer; ++o)
                                  for (std::int64_t i = 0; i < length * inner; ++i)
                                      gx[(o * len + start) * inner + i] += self.grad[static_cast<std::size_t>(o * length * inner + i)];
                          },
                          "slice");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    require(!parts.empty(), ErrorKind::shape, "concat of nothing");
    const Shape& first = parts[0].shape();
    require(axis < first.size(), ErrorKind::shape, "concat: axis out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::int64_t> lens;
    for (const auto& p : parts) {
        require(p.rank() == first.size(), ErrorKind::shape, "concat: rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i)
            require(i == axis || p.shape()[i] == first[i], ErrorKind::shape,
                    "concat: shapes " + shape_str(first) + " and " + shape_str(p.shape()) + " differ off-axis");
        out_shape[axis] += p.shape()[axis];
        lens.push_back(p.shape()[axis]);
    }
    std::int64_t outer, len, inner;
    detail::split_axis(out_shape, axis, outer, len, inner);
    std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
    std::int64_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& pv = parts[p].values();
        const std::int64_t block = lens[p] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + o * block, block, out.begin() + (o * len + offset) * inner);
        offset += lens[p];
    }
    return make_result<T>(out_shape, std::move(out), parts,
                          [lens, outer, len, inner](Node<T>& self) {
                              std::int64_t offset = 0;
                              for (std::size_t p = 0; p < lens.size(); ++p) {
                                  T* gp = self.parent_grad(p);
                                  const std::int64_t block = lens[p] * inner;
                                  if (gp)
                                      for (std::int64_t o = 0; o < outer; ++o)
                                          for (std::int64_t i = 0; i < block; ++i)
                                              gp[o * block + i] += self.grad[static_cast<std::size_t>((o * len + offset) * inner + i)];
                                  offset += lens[p];
                              }
                          },
                          "concat");
}

// ---------------------------------------------------------------------------
// Normalisation.

/// Softmax along `axis`, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
    require(axis < a.rank(), ErrorKind::shape, "softmax: axis out of range");
    std::int64_t outer, len, inner;
    detail::split_axis(a.shape(), axis, outer, len, inner);
    const auto& x = a.values();
    std::vector<T> y(x.size());
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * len * inner + i;
            T mx = x[static_cast<std::size_t>(base)];
            for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, x[static_cast<std::size_t>(base + j * inner)]);
            T total = T(0);
            for (std::int64_t j = 0; j < len; ++j) {
                const auto idx = static_cast<std::size_t>(base + j * inner);
                y[idx] = std::exp(x[idx] - mx);
                total += y[idx];
            }
            for (std::int64_t j = 0; j < len; ++j) y[static_cast<std::size_t>(base + j * inner)] /= total;
        }
    return make_result<T>(a.shape(), std::move(y), {a},
                          [outer, len, inner](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              const auto& y = self.value;
                              const auto& g = self.grad;
                              for (std::int64_t o = 0; o < outer; ++o)
                                  for (std::int64_t i = 0; i < inner; ++i) {
                                      const std::int64_t base = o * len * inner + i;
                                      T dot = T(0);
                                      for (std::int64_t j = 0; j < len; ++j) {
                                          const auto idx = static_cast<std::size_t>(base + j * inner);
                                          dot += g[idx] * y[idx];
                                      }
                                      for (std::int64_t j = 0; j < len; ++j) {
                                          const auto idx = static_cast<std::size_t>(base + j * inner);
                                          gx[idx] += y[idx] * (g[idx] - dot);
                                      }
                                  }
                          },
                          "softmax");
}

/// Layer normalisation over the last axis with affine gamma/beta of that size.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const std::int64_t c = x.shape().back();
    require(gamma.numel() == c && beta.numel() == c, ErrorKind::shape,
            "layer_norm: affine size differs from last axis " + std::to_string(c));
    const std::int64_t rows = x.numel() / c;
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    auto xhat = std::make_shared<std::vector<T>>(xv.size());
    auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    std::vector<T> out(xv.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * c;
        T mu = T(0);
        for (std::int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (std::int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(c);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[static_cast<std::size_t>(r)] = rs;
        for (std::int64_t j = 0; j < c; ++j) {
            const auto idx = static_cast<std::size_t>(r * c + j);
            (*xhat)[idx] = (row[j] - mu) * rs;
            out[idx] = (*xhat)[idx] * gv[static_cast<std::size_t>(j)] + bv[static_cast<std::size_t>(j)];
        }
    }
    return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                          [xhat, rstd, rows, c](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              T* gg = self.parent_grad(1);
                              T* gb = self.parent_grad(2);
                              const auto& gamma_v = self.parents[1]->value;
                              const auto& g = self.grad;
                              std::vector<T> dxhat(static_cast<std::size_t>(c));
                              for (std::int64_t r = 0; r < rows; ++r) {
                                  T mean_d = T(0), mean_dx = T(0);
                                  for (std::int64_t j = 0; j < c; ++j) {
                                      const auto idx = static_cast<std::size_t>(r * c + j);
                                      const T d = g[idx] * gamma_v[static_cast<std::size_t>(j)];
                                      dxhat[static_cast<std::size_t>(j)] = d;
                                      mean_d += d;
                                      mean_dx += d * (*xhat)[idx];
                                      if (gg) gg[j] += g[idx] * (*xhat)[idx];
                                      if (gb) gb[j] += g[idx];
                                  }
                                  if (!gx) continue;
                                  mean_d /= static_cast<T>(c);
                                  mean_dx /= static_cast<T>(c);
                                  const T rs = (*rstd)[static_cast<std::size_t>(r)];
                                  for (std::int64_t j = 0; j < c; ++j) {
                                      const auto idx = static_cast<std::size_t>(r * c + j);
                                      gx[idx] += rs * (dxhat[static_cast<std::size_t>(j)] - mean_d - (*xhat)[idx] * mean_dx);
                                  }
                              }
                          },
                          "layer_norm");
}

} // namespace gliomaforge
