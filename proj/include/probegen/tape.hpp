#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "probegen/tensor.hpp"

namespace probegen {

// Reverse-mode autodiff over a dynamically built graph. Ops append nodes and
// install a backward closure; backward() replays the closures in reverse id
// order. Graphs are rebuilt for every forward pass.
template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    int add(Tensor<T> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.grad = Tensor<T>(n.value.shape);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int input(Tensor<T> value, bool requires_grad = false) {
        return add(std::move(value), requires_grad);
    }

    void set_backward(int id, std::function<void()> fn) {
        nodes_[static_cast<std::size_t>(id)].backward = std::move(fn);
    }

    Tensor<T>& val(int id) { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor<T>& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    T scalar(int id) {
        check_contract(val(id).numel() == 1, "tape: node is not a scalar");
        return val(id).data[0];
    }

    void backward(int loss_id) {
        check_contract(val(loss_id).numel() == 1, "tape: backward target must be a scalar");
        check_contract(requires_grad(loss_id), "tape: backward target does not require gradients");
        grad(loss_id).data[0] = T(1);
        for (int id = loss_id; id >= 0; --id) {
            auto& n = nodes_[static_cast<std::size_t>(id)];
            if (n.requires_grad && n.backward) n.backward();
        }
    }

private:
    std::vector<Node> nodes_;
};

// Graph-building ops. Each returns the output node id; gradients accumulate
// into every parent that requires them.
namespace ops {

template <typename T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// ---- elementwise ----

namespace detail {

template <typename T, typename F>
int unary(Tape<T>& t, int x, F f, std::function<T(T xv, T yv)> dfdx) {
    const auto& xv = t.val(x);
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(xv.data[i]);
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, dfdx]() {
            const auto& g = t.grad(id);
            const auto& xval = t.val(x);
            const auto& yval = t.val(id);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                gx.data[i] += g.data[i] * dfdx(xval.data[i], yval.data[i]);
        });
    return id;
}

} // namespace detail

template <typename T>
int relu(Tape<T>& t, int x) {
    return detail::unary<T>(
        t, x, [](T v) { return v > T(0) ? v : T(0); },
        [](T xv, T) { return xv > T(0) ? T(1) : T(0); });
}

template <typename T>
T sigmoid_scalar(T v) {
    if (v >= T(0)) {
        T e = std::exp(-v);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(v);
    return e / (T(1) + e);
}

template <typename T>
int sigmoid(Tape<T>& t, int x) {
    return detail::unary<T>(
        t, x, [](T v) { return sigmoid_scalar(v); }, [](T, T yv) { return yv * (T(1) - yv); });
}

template <typename T>
T softplus_scalar(T v) {
    T m = v > T(0) ? v : T(0);
    return m + std::log1p(std::exp(-std::abs(v)));
}

template <typename T>
int softplus(Tape<T>& t, int x) {
    return detail::unary<T>(
        t, x, [](T v) { return softplus_scalar(v); },
        [](T xv, T) { return sigmoid_scalar(xv); });
}

template <typename T>
int exp_op(Tape<T>& t, int x) {
    return detail::unary<T>(
        t, x, [](T v) { return std::exp(v); }, [](T, T yv) { return yv; });
}

template <typename T>
int add_scalar(Tape<T>& t, int x, T c) {
    return detail::unary<T>(
        t, x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
int mul_scalar(Tape<T>& t, int x, T c) {
    return detail::unary<T>(
        t, x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

namespace detail {

template <typename T>
int binary(Tape<T>& t, int a, int b, T (*f)(T, T), T (*dfa)(T, T), T (*dfb)(T, T)) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    check_contract(av.same_shape(bv), "tape: elementwise shape mismatch");
    Tensor<T> out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(av.data[i], bv.data[i]);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, a, b, dfa, dfb]() {
            const auto& g = t.grad(id);
            const auto& av2 = t.val(a);
            const auto& bv2 = t.val(b);
            if (t.requires_grad(a)) {
                auto& ga = t.grad(a);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * dfa(av2.data[i], bv2.data[i]);
            }
            if (t.requires_grad(b)) {
                auto& gb = t.grad(b);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    gb.data[i] += g.data[i] * dfb(av2.data[i], bv2.data[i]);
            }
        });
    return id;
}

} // namespace detail

template <typename T>
int add(Tape<T>& t, int a, int b) {
    return detail::binary<T>(
        t, a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
int sub(Tape<T>& t, int a, int b) {
    return detail::binary<T>(
        t, a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
int mul(Tape<T>& t, int a, int b) {
    return detail::binary<T>(
        t, a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
int square(Tape<T>& t, int x) {
    return detail::unary<T>(
        t, x, [](T v) { return v * v; }, [](T xv, T) { return T(2) * xv; });
}

// ---- reductions and shaping ----

template <typename T>
int sum_all(Tape<T>& t, int x) {
    const auto& xv = t.val(x);
    Tensor<T> out({1});
    T s = T(0);
    for (T v : xv.data) s += v;
    out.data[0] = s;
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x]() {
            const T g = t.grad(id).data[0];
            auto& gx = t.grad(x);
            for (auto& v : gx.data) v += g;
        });
    return id;
}

template <typename T>
int mean_all(Tape<T>& t, int x) {
    const std::int64_t n = t.val(x).numel();
    return mul_scalar(t, sum_all(t, x), T(1) / static_cast<T>(n));
}

// Reduces every axis except the leading one: [N, ...] -> [N].
template <typename T>
int sum_per_row(Tape<T>& t, int x) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() >= 1, "sum_per_row: needs at least one axis");
    const std::int64_t n = xv.dim(0);
    const std::int64_t stride = xv.numel() / n;
    Tensor<T> out({n});
    for (std::int64_t r = 0; r < n; ++r) {
        T s = T(0);
        for (std::int64_t i = 0; i < stride; ++i) s += xv.data[static_cast<std::size_t>(r * stride + i)];
        out.data[static_cast<std::size_t>(r)] = s;
    }
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, n, stride]() {
            const auto& g = t.grad(id);
            auto& gx = t.grad(x);
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t i = 0; i < stride; ++i)
                    gx.data[static_cast<std::size_t>(r * stride + i)] += g.data[static_cast<std::size_t>(r)];
        });
    return id;
}

// [N, M] -> [N, M*r]: each entry repeated r times contiguously within its row.
template <typename T>
int repeat_cols(Tape<T>& t, int x, std::int64_t r) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() == 2 && r >= 1, "repeat_cols: needs [N, M] and r >= 1");
    const std::int64_t n = xv.dim(0);
    const std::int64_t m = xv.dim(1);
    Tensor<T> out({n, m * r});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) {
            const T v = xv.data[static_cast<std::size_t>(i * m + j)];
            for (std::int64_t k = 0; k < r; ++k)
                out.data[static_cast<std::size_t>((i * m + j) * r + k)] = v;
        }
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, n, m, r]() {
            const auto& g = t.grad(id);
            auto& gx = t.grad(x);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < m; ++j) {
                    T acc = T(0);
                    for (std::int64_t k = 0; k < r; ++k)
                        acc += g.data[static_cast<std::size_t>((i * m + j) * r + k)];
                    gx.data[static_cast<std::size_t>(i * m + j)] += acc;
                }
        });
    return id;
}

template <typename T>
int reshape(Tape<T>& t, int x, std::vector<std::int64_t> shape) {
    const auto& xv = t.val(x);
    check_contract(Tensor<T>::numel_of(shape) == xv.numel(), "reshape: element count mismatch");
    Tensor<T> out(shape);
    out.data = xv.data;
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x]() {
            const auto& g = t.grad(id);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
        });
    return id;
}

// Row r of a [N, ...] tensor, keeping the trailing shape.
template <typename T>
int slice_row(Tape<T>& t, int x, std::int64_t r) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() >= 2 && r >= 0 && r < xv.dim(0), "slice_row: row out of range");
    std::vector<std::int64_t> shape(xv.shape.begin() + 1, xv.shape.end());
    const std::int64_t stride = xv.numel() / xv.dim(0);
    Tensor<T> out(shape);
    for (std::int64_t i = 0; i < stride; ++i)
        out.data[static_cast<std::size_t>(i)] = xv.data[static_cast<std::size_t>(r * stride + i)];
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, r, stride]() {
            const auto& g = t.grad(id);
            auto& gx = t.grad(x);
            for (std::int64_t i = 0; i < stride; ++i)
                gx.data[static_cast<std::size_t>(r * stride + i)] += g.data[static_cast<std::size_t>(i)];
        });
    return id;
}

// Stacks equally shaped tensors along a new leading axis.
template <typename T>
int stack_rows(Tape<T>& t, const std::vector<int>& rows) {
    check_contract(!rows.empty(), "stack_rows: empty input");
    const auto& first = t.val(rows[0]);
    std::vector<std::int64_t> shape;
    shape.push_back(static_cast<std::int64_t>(rows.size()));
    for (auto d : first.shape) shape.push_back(d);
    const std::int64_t stride = first.numel();
    Tensor<T> out(shape);
    bool rg = false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& rv = t.val(rows[r]);
        check_contract(rv.same_shape(first), "stack_rows: shape mismatch");
        for (std::int64_t i = 0; i < stride; ++i)
            out.data[static_cast<std::size_t>(static_cast<std::int64_t>(r) * stride + i)] =
                rv.data[static_cast<std::size_t>(i)];
        rg = rg || t.requires_grad(rows[r]);
    }
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, rows, stride]() {
            const auto& g = t.grad(id);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (!t.requires_grad(rows[r])) continue;
                auto& gx = t.grad(rows[r]);
                for (std::int64_t i = 0; i < stride; ++i)
                    gx.data[static_cast<std::size_t>(i)] +=
                        g.data[static_cast<std::size_t>(static_cast<std::int64_t>(r) * stride + i)];
            }
        });
    return id;
}

// Concatenates along axis 1; all other axes must agree.
template <typename T>
int concat_axis1(Tape<T>& t, int a, int b) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    check_contract(av.ndim() == bv.ndim() && av.ndim() >= 2, "concat_axis1: rank mismatch");
    for (int i = 0; i < av.ndim(); ++i)
        if (i != 1) check_contract(av.dim(i) == bv.dim(i), "concat_axis1: shape mismatch");
    const std::int64_t n = av.dim(0);
    const std::int64_t ca = av.dim(1), cb = bv.dim(1);
    const std::int64_t inner_a = av.numel() / (n * ca);
    std::vector<std::int64_t> shape = av.shape;
    shape[1] = ca + cb;
    Tensor<T> out(shape);
    const std::int64_t sa = ca * inner_a, sb = cb * inner_a, so = (ca + cb) * inner_a;
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t i = 0; i < sa; ++i)
            out.data[static_cast<std::size_t>(r * so + i)] = av.data[static_cast<std::size_t>(r * sa + i)];
        for (std::int64_t i = 0; i < sb; ++i)
            out.data[static_cast<std::size_t>(r * so + sa + i)] = bv.data[static_cast<std::size_t>(r * sb + i)];
    }
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, a, b, n, sa, sb, so]() {
            const auto& g = t.grad(id);
            for (std::int64_t r = 0; r < n; ++r) {
                if (t.requires_grad(a)) {
                    auto& ga = t.grad(a);
                    for (std::int64_t i = 0; i < sa; ++i)
                        ga.data[static_cast<std::size_t>(r * sa + i)] += g.data[static_cast<std::size_t>(r * so + i)];
                }
                if (t.requires_grad(b)) {
                    auto& gb = t.grad(b);
                    for (std::int64_t i = 0; i < sb; ++i)
                        gb.data[static_cast<std::size_t>(r * sb + i)] +=
                            g.data[static_cast<std::size_t>(r * so + sa + i)];
                }
            }
        });
    return id;
}

// Concatenates two 1-D vectors.
template <typename T>
int concat_vec(Tape<T>& t, int a, int b) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    check_contract(av.ndim() == 1 && bv.ndim() == 1, "concat_vec: inputs must be vectors");
    const std::int64_t na = av.numel(), nb = bv.numel();
    Tensor<T> out({na + nb});
    for (std::int64_t i = 0; i < na; ++i) out.data[static_cast<std::size_t>(i)] = av.data[static_cast<std::size_t>(i)];
    for (std::int64_t i = 0; i < nb; ++i) out.data[static_cast<std::size_t>(na + i)] = bv.data[static_cast<std::size_t>(i)];
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, a, b, na, nb]() {
            const auto& g = t.grad(id);
            if (t.requires_grad(a)) {
                auto& ga = t.grad(a);
                for (std::int64_t i = 0; i < na; ++i) ga.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(i)];
            }
            if (t.requires_grad(b)) {
                auto& gb = t.grad(b);
                for (std::int64_t i = 0; i < nb; ++i)
                    gb.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(na + i)];
            }
        });
    return id;
}

// ---- vector softmax family ----

template <typename T>
int log_softmax_vec(Tape<T>& t, int x) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() == 1, "log_softmax_vec: input must be a vector");
    T mx = xv.data[0];
    for (T v : xv.data) mx = std::max(mx, v);
    T lse = T(0);
    for (T v : xv.data) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = xv.data[i] - lse;
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x]() {
            const auto& g = t.grad(id);
            const auto& y = t.val(id);
            auto& gx = t.grad(x);
            T gsum = T(0);
            for (T v : g.data) gsum += v;
            for (std::size_t i = 0; i < g.data.size(); ++i)
                gx.data[i] += g.data[i] - std::exp(y.data[i]) * gsum;
        });
    return id;
}

template <typename T>
int softmax_vec(Tape<T>& t, int x) {
    return exp_op(t, log_softmax_vec(t, x));
}

template <typename T>
int logsumexp_vec(Tape<T>& t, int x) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() == 1, "logsumexp_vec: input must be a vector");
    T mx = xv.data[0];
    for (T v : xv.data) mx = std::max(mx, v);
    T s = T(0);
    for (T v : xv.data) s += std::exp(v - mx);
    Tensor<T> out({1});
    out.data[0] = mx + std::log(s);
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x]() {
            const T g = t.grad(id).data[0];
            const T y = t.val(id).data[0];
            const auto& xval = t.val(x);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                gx.data[i] += g * std::exp(xval.data[i] - y);
        });
    return id;
}

// ---- mixture helpers ----

// A[m, d] minus broadcast vector v[d].
template <typename T>
int sub_rowvec(Tape<T>& t, int a, int v) {
    const auto& av = t.val(a);
    const auto& vv = t.val(v);
    check_contract(av.ndim() == 2 && vv.ndim() == 1 && av.dim(1) == vv.numel(),
                   "sub_rowvec: shape mismatch");
    const std::int64_t m = av.dim(0), d = av.dim(1);
    Tensor<T> out(av.shape);
    for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t i = 0; i < d; ++i)
            out.data[static_cast<std::size_t>(r * d + i)] =
                av.data[static_cast<std::size_t>(r * d + i)] - vv.data[static_cast<std::size_t>(i)];
    const bool rg = t.requires_grad(a) || t.requires_grad(v);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, a, v, m, d]() {
            const auto& g = t.grad(id);
            if (t.requires_grad(a)) {
                auto& ga = t.grad(a);
                for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (t.requires_grad(v)) {
                auto& gv = t.grad(v);
                for (std::int64_t r = 0; r < m; ++r)
                    for (std::int64_t i = 0; i < d; ++i)
                        gv.data[static_cast<std::size_t>(i)] -= g.data[static_cast<std::size_t>(r * d + i)];
            }
        });
    return id;
}

// w[m]^T A[m, d] -> [d].
template <typename T>
int weighted_sum_rows(Tape<T>& t, int a, int w) {
    const auto& av = t.val(a);
    const auto& wv = t.val(w);
    check_contract(av.ndim() == 2 && wv.ndim() == 1 && av.dim(0) == wv.numel(),
                   "weighted_sum_rows: shape mismatch");
    const std::int64_t m = av.dim(0), d = av.dim(1);
    Tensor<T> out({d});
    for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t i = 0; i < d; ++i)
            out.data[static_cast<std::size_t>(i)] +=
                wv.data[static_cast<std::size_t>(r)] * av.data[static_cast<std::size_t>(r * d + i)];
    const bool rg = t.requires_grad(a) || t.requires_grad(w);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, a, w, m, d]() {
            const auto& g = t.grad(id);
            const auto& av2 = t.val(a);
            const auto& wv2 = t.val(w);
            if (t.requires_grad(a)) {
                auto& ga = t.grad(a);
                for (std::int64_t r = 0; r < m; ++r)
                    for (std::int64_t i = 0; i < d; ++i)
                        ga.data[static_cast<std::size_t>(r * d + i)] +=
                            wv2.data[static_cast<std::size_t>(r)] * g.data[static_cast<std::size_t>(i)];
            }
            if (t.requires_grad(w)) {
                auto& gw = t.grad(w);
                for (std::int64_t r = 0; r < m; ++r) {
                    T s = T(0);
                    for (std::int64_t i = 0; i < d; ++i)
                        s += av2.data[static_cast<std::size_t>(r * d + i)] * g.data[static_cast<std::size_t>(i)];
                    gw.data[static_cast<std::size_t>(r)] += s;
                }
            }
        });
    return id;
}

// ---- dense ----

// x[N, K] * w[K, M] + b[M] -> [N, M].
template <typename T>
int dense(Tape<T>& t, int x, int w, int b) {
    const auto& xv = t.val(x);
    const auto& wv = t.val(w);
    const auto& bv = t.val(b);
    check_contract(xv.ndim() == 2 && wv.ndim() == 2 && bv.ndim() == 1, "dense: bad ranks");
    const std::int64_t n = xv.dim(0), k = xv.dim(1), m = wv.dim(1);
    check_contract(wv.dim(0) == k && bv.numel() == m, "dense: shape mismatch");
    Tensor<T> out({n, m});
    {
        Eigen::Map<const MatCM<T>> xm(xv.ptr(), k, n);
        Eigen::Map<const MatCM<T>> wm(wv.ptr(), m, k);
        Eigen::Map<MatCM<T>> om(out.ptr(), m, n);
        om.noalias() = wm * xm;
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t j = 0; j < m; ++j) out.data[static_cast<std::size_t>(r * m + j)] += bv.data[static_cast<std::size_t>(j)];
    }
    const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, w, b, n, k, m]() {
            const auto& g = t.grad(id);
            const auto& xv2 = t.val(x);
            const auto& wv2 = t.val(w);
            Eigen::Map<const MatCM<T>> gm(g.ptr(), m, n);
            if (t.requires_grad(x)) {
                Eigen::Map<const MatCM<T>> wm(wv2.ptr(), m, k);
                Eigen::Map<MatCM<T>> gxm(t.grad(x).ptr(), k, n);
                gxm.noalias() += wm.transpose() * gm;
            }
            if (t.requires_grad(w)) {
                Eigen::Map<const MatCM<T>> xm(xv2.ptr(), k, n);
                Eigen::Map<MatCM<T>> gwm(t.grad(w).ptr(), m, k);
                gwm.noalias() += gm * xm.transpose();
            }
            if (t.requires_grad(b)) {
                auto& gb = t.grad(b);
                for (std::int64_t r = 0; r < n; ++r)
                    for (std::int64_t j = 0; j < m; ++j) gb.data[static_cast<std::size_t>(j)] += g.data[static_cast<std::size_t>(r * m + j)];
            }
        });
    return id;
}

// ---- convolution ----

namespace detail {

struct Conv2dGeom {
    std::int64_t n, cin, h, w, cout, kh, kw, sh, sw, ph, pw, dh, dw, ho, wo;
};

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p,
                                    std::int64_t d) {
    const std::int64_t eff = (k - 1) * d + 1;
    return (in + 2 * p - eff) / s + 1;
}

template <typename T>
void im2col2d(const T* x, const Conv2dGeom& g, std::int64_t sample, std::vector<T>& col) {
    const std::int64_t K = g.cin * g.kh * g.kw;
    const T* xs = x + sample * g.cin * g.h * g.w;
    std::int64_t p = 0;
    for (std::int64_t oy = 0; oy < g.ho; ++oy)
        for (std::int64_t ox = 0; ox < g.wo; ++ox, ++p) {
            T* colp = col.data() + p * K;
            std::int64_t k = 0;
            for (std::int64_t c = 0; c < g.cin; ++c)
                for (std::int64_t ki = 0; ki < g.kh; ++ki) {
                    const std::int64_t iy = oy * g.sh - g.ph + ki * g.dh;
                    for (std::int64_t kj = 0; kj < g.kw; ++kj, ++k) {
                        const std::int64_t ix = ox * g.sw - g.pw + kj * g.dw;
                        colp[k] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                      ? xs[(c * g.h + iy) * g.w + ix]
                                      : T(0);
                    }
                }
        }
}

template <typename T>
void col2im2d(const T* col, const Conv2dGeom& g, std::int64_t sample, T* gx) {
    const std::int64_t K = g.cin * g.kh * g.kw;
    T* xs = gx + sample * g.cin * g.h * g.w;
    std::int64_t p = 0;
    for (std::int64_t oy = 0; oy < g.ho; ++oy)
        for (std::int64_t ox = 0; ox < g.wo; ++ox, ++p) {
            const T* colp = col + p * K;
            std::int64_t k = 0;
            for (std::int64_t c = 0; c < g.cin; ++c)
                for (std::int64_t ki = 0; ki < g.kh; ++ki) {
                    const std::int64_t iy = oy * g.sh - g.ph + ki * g.dh;
                    for (std::int64_t kj = 0; kj < g.kw; ++kj, ++k) {
                        const std::int64_t ix = ox * g.sw - g.pw + kj * g.dw;
                        if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                            xs[(c * g.h + iy) * g.w + ix] += colp[k];
                    }
                }
        }
}

} // namespace detail

// x[N, Cin, H, W] conv w[Cout, Cin, kh, kw] + b[Cout], zero padding.
template <typename T>
int conv2d(Tape<T>& t, int x, int w, int b, std::int64_t stride, std::int64_t pad,
           std::int64_t dilation = 1) {
    const auto& xv = t.val(x);
    const auto& wv = t.val(w);
    const auto& bv = t.val(b);
    check_contract(xv.ndim() == 4 && wv.ndim() == 4 && bv.ndim() == 1, "conv2d: bad ranks");
    detail::Conv2dGeom g;
    g.n = xv.dim(0);
    g.cin = xv.dim(1);
    g.h = xv.dim(2);
    g.w = xv.dim(3);
    g.cout = wv.dim(0);
    g.kh = wv.dim(2);
    g.kw = wv.dim(3);
    g.sh = g.sw = stride;
    g.ph = g.pw = pad;
    g.dh = g.dw = dilation;
    check_contract(wv.dim(1) == g.cin, "conv2d: channel mismatch");
    check_contract(bv.numel() == g.cout, "conv2d: bias size mismatch");
    g.ho = detail::conv_out_extent(g.h, g.kh, g.sh, g.ph, g.dh);
    g.wo = detail::conv_out_extent(g.w, g.kw, g.sw, g.pw, g.dw);
    check_contract(g.ho > 0 && g.wo > 0, "conv2d: empty output");

    const std::int64_t K = g.cin * g.kh * g.kw;
    const std::int64_t P = g.ho * g.wo;
    Tensor<T> out({g.n, g.cout, g.ho, g.wo});
    auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(g.n * K * P));
    for (std::int64_t s = 0; s < g.n; ++s) {
        std::vector<T> colbuf(static_cast<std::size_t>(K * P));
        detail::im2col2d(xv.ptr(), g, s, colbuf);
        Eigen::Map<const MatCM<T>> colm(colbuf.data(), K, P);
        Eigen::Map<const MatCM<T>> wmat(wv.ptr(), K, g.cout);
        Eigen::Map<MatCM<T>> om(out.ptr() + s * g.cout * P, P, g.cout);
        om.noalias() = colm.transpose() * wmat;
        for (std::int64_t co = 0; co < g.cout; ++co) {
            T* op = out.ptr() + (s * g.cout + co) * P;
            const T bias = bv.data[static_cast<std::size_t>(co)];
            for (std::int64_t p = 0; p < P; ++p) op[p] += bias;
        }
        std::copy(colbuf.begin(), colbuf.end(), cols->begin() + static_cast<std::ptrdiff_t>(s * K * P));
    }
    const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, w, b, g, K, P, cols]() {
            const auto& gout = t.grad(id);
            const auto& wv2 = t.val(w);
            for (std::int64_t s = 0; s < g.n; ++s) {
                Eigen::Map<const MatCM<T>> gm(gout.ptr() + s * g.cout * P, P, g.cout);
                Eigen::Map<const MatCM<T>> colm(cols->data() + s * K * P, K, P);
                if (t.requires_grad(w)) {
                    Eigen::Map<MatCM<T>> gwm(t.grad(w).ptr(), K, g.cout);
                    gwm.noalias() += colm * gm;
                }
                if (t.requires_grad(b)) {
                    auto& gb = t.grad(b);
                    for (std::int64_t co = 0; co < g.cout; ++co) {
                        const T* gp = gout.ptr() + (s * g.cout + co) * P;
                        T acc = T(0);
                        for (std::int64_t p = 0; p < P; ++p) acc += gp[p];
                        gb.data[static_cast<std::size_t>(co)] += acc;
                    }
                }
                if (t.requires_grad(x)) {
                    Eigen::Map<const MatCM<T>> wmat(wv2.ptr(), K, g.cout);
                    std::vector<T> dcol(static_cast<std::size_t>(K * P));
                    Eigen::Map<MatCM<T>> dcolm(dcol.data(), K, P);
                    dcolm.noalias() = wmat * gm.transpose();
                    detail::col2im2d(dcol.data(), g, s, t.grad(x).ptr());
                }
            }
        });
    return id;
}

namespace detail {

struct Conv3dGeom {
    std::int64_t n, cin, d, h, w, cout, kd, kh, kw, sd, sh, sw, pd, ph, pw, dd, dh, dw, dO, ho, wo;
};

template <typename T>
void im2col3d(const T* x, const Conv3dGeom& g, std::int64_t sample, std::vector<T>& col) {
    const std::int64_t K = g.cin * g.kd * g.kh * g.kw;
    const T* xs = x + sample * g.cin * g.d * g.h * g.w;
    std::int64_t p = 0;
    for (std::int64_t od = 0; od < g.dO; ++od)
        for (std::int64_t oy = 0; oy < g.ho; ++oy)
            for (std::int64_t ox = 0; ox < g.wo; ++ox, ++p) {
                T* colp = col.data() + p * K;
                std::int64_t k = 0;
                for (std::int64_t c = 0; c < g.cin; ++c)
                    for (std::int64_t kd = 0; kd < g.kd; ++kd) {
                        const std::int64_t iz = od * g.sd - g.pd + kd * g.dd;
                        for (std::int64_t ki = 0; ki < g.kh; ++ki) {
                            const std::int64_t iy = oy * g.sh - g.ph + ki * g.dh;
                            for (std::int64_t kj = 0; kj < g.kw; ++kj, ++k) {
                                const std::int64_t ix = ox * g.sw - g.pw + kj * g.dw;
                                colp[k] = (iz >= 0 && iz < g.d && iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                              ? xs[((c * g.d + iz) * g.h + iy) * g.w + ix]
                                              : T(0);
                            }
                        }
                    }
            }
}

template <typename T>
void col2im3d(const T* col, const Conv3dGeom& g, std::int64_t sample, T* gx) {
    const std::int64_t K = g.cin * g.kd * g.kh * g.kw;
    T* xs = gx + sample * g.cin * g.d * g.h * g.w;
    std::int64_t p = 0;
    for (std::int64_t od = 0; od < g.dO; ++od)
        for (std::int64_t oy = 0; oy < g.ho; ++oy)
            for (std::int64_t ox = 0; ox < g.wo; ++ox, ++p) {
                const T* colp = col + p * K;
                std::int64_t k = 0;
                for (std::int64_t c = 0; c < g.cin; ++c)
                    for (std::int64_t kd = 0; kd < g.kd; ++kd) {
                        const std::int64_t iz = od * g.sd - g.pd + kd * g.dd;
                        for (std::int64_t ki = 0; ki < g.kh; ++ki) {
                            const std::int64_t iy = oy * g.sh - g.ph + ki * g.dh;
                            for (std::int64_t kj = 0; kj < g.kw; ++kj, ++k) {
                                const std::int64_t ix = ox * g.sw - g.pw + kj * g.dw;
                                if (iz >= 0 && iz < g.d && iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                    xs[((c * g.d + iz) * g.h + iy) * g.w + ix] += colp[k];
                            }
                        }
                    }
            }
}

} // namespace detail

// x[N, Cin, D, H, W] conv w[Cout, Cin, kd, kh, kw] + b[Cout], zero padding.
template <typename T>
int conv3d(Tape<T>& t, int x, int w, int b, std::array<std::int64_t, 3> stride,
           std::array<std::int64_t, 3> pad, std::array<std::int64_t, 3> dil = {1, 1, 1}) {
    const auto& xv = t.val(x);
    const auto& wv = t.val(w);
    const auto& bv = t.val(b);
    check_contract(xv.ndim() == 5 && wv.ndim() == 5 && bv.ndim() == 1, "conv3d: bad ranks");
    detail::Conv3dGeom g;
    g.n = xv.dim(0);
    g.cin = xv.dim(1);
    g.d = xv.dim(2);
    g.h = xv.dim(3);
    g.w = xv.dim(4);
    g.cout = wv.dim(0);
    g.kd = wv.dim(2);
    g.kh = wv.dim(3);
    g.kw = wv.dim(4);
    g.sd = stride[0];
    g.sh = stride[1];
    g.sw = stride[2];
    g.pd = pad[0];
    g.ph = pad[1];
    g.pw = pad[2];
    g.dd = dil[0];
    g.dh = dil[1];
    g.dw = dil[2];
    check_contract(wv.dim(1) == g.cin, "conv3d: channel mismatch");
    check_contract(bv.numel() == g.cout, "conv3d: bias size mismatch");
    g.dO = detail::conv_out_extent(g.d, g.kd, g.sd, g.pd, g.dd);
    g.ho = detail::conv_out_extent(g.h, g.kh, g.sh, g.ph, g.dh);
    g.wo = detail::conv_out_extent(g.w, g.kw, g.sw, g.pw, g.dw);
    check_contract(g.dO > 0 && g.ho > 0 && g.wo > 0, "conv3d: empty output");

    const std::int64_t K = g.cin * g.kd * g.kh * g.kw;
    const std::int64_t P = g.dO * g.ho * g.wo;
    Tensor<T> out({g.n, g.cout, g.dO, g.ho, g.wo});
    auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(g.n * K * P));
    for (std::int64_t s = 0; s < g.n; ++s) {
        std::vector<T> colbuf(static_cast<std::size_t>(K * P));
        detail::im2col3d(xv.ptr(), g, s, colbuf);
        Eigen::Map<const MatCM<T>> colm(colbuf.data(), K, P);
        Eigen::Map<const MatCM<T>> wmat(wv.ptr(), K, g.cout);
        Eigen::Map<MatCM<T>> om(out.ptr() + s * g.cout * P, P, g.cout);
        om.noalias() = colm.transpose() * wmat;
        for (std::int64_t co = 0; co < g.cout; ++co) {
            T* op = out.ptr() + (s * g.cout + co) * P;
            const T bias = bv.data[static_cast<std::size_t>(co)];
            for (std::int64_t p = 0; p < P; ++p) op[p] += bias;
        }
        std::copy(colbuf.begin(), colbuf.end(), cols->begin() + static_cast<std::ptrdiff_t>(s * K * P));
    }
    const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, w, b, g, K, P, cols]() {
            const auto& gout = t.grad(id);
            const auto& wv2 = t.val(w);
            for (std::int64_t s = 0; s < g.n; ++s) {
                Eigen::Map<const MatCM<T>> gm(gout.ptr() + s * g.cout * P, P, g.cout);
                Eigen::Map<const MatCM<T>> colm(cols->data() + s * K * P, K, P);
                if (t.requires_grad(w)) {
                    Eigen::Map<MatCM<T>> gwm(t.grad(w).ptr(), K, g.cout);
                    gwm.noalias() += colm * gm;
                }
                if (t.requires_grad(b)) {
                    auto& gb = t.grad(b);
                    for (std::int64_t co = 0; co < g.cout; ++co) {
                        const T* gp = gout.ptr() + (s * g.cout + co) * P;
                        T acc = T(0);
                        for (std::int64_t p = 0; p < P; ++p) acc += gp[p];
                        gb.data[static_cast<std::size_t>(co)] += acc;
                    }
                }
                if (t.requires_grad(x)) {
                    Eigen::Map<const MatCM<T>> wmat(wv2.ptr(), K, g.cout);
                    std::vector<T> dcol(static_cast<std::size_t>(K * P));
                    Eigen::Map<MatCM<T>> dcolm(dcol.data(), K, P);
                    dcolm.noalias() = wmat * gm.transpose();
                    detail::col2im3d(dcol.data(), g, s, t.grad(x).ptr());
                }
            }
        });
    return id;
}

// ---- normalization ----

// Batch normalization over every axis except axis 1. Running statistics live
// outside the graph and are updated in place during training forward passes
// (biased variance, fixed momentum), matching what inference mode consumes.
template <typename T>
int batchnorm(Tape<T>& t, int x, int gamma, int beta, Tensor<T>* running_mean,
              Tensor<T>* running_var, bool training, bool update_running, T momentum, T eps) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() >= 2, "batchnorm: input must have a channel axis");
    const std::int64_t n = xv.dim(0);
    const std::int64_t c = xv.dim(1);
    const std::int64_t inner = xv.numel() / (n * c);
    const auto& gv = t.val(gamma);
    const auto& bv = t.val(beta);
    check_contract(gv.numel() == c && bv.numel() == c, "batchnorm: gamma/beta size mismatch");
    check_contract(running_mean->numel() == c && running_var->numel() == c,
                   "batchnorm: running stats size mismatch");
    const std::int64_t rcount = n * inner;

    auto xhat = std::make_shared<Tensor<T>>(xv.shape);
    auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
    Tensor<T> out(xv.shape);
    auto idx = [&](std::int64_t s, std::int64_t ch, std::int64_t i) {
        return static_cast<std::size_t>((s * c + ch) * inner + i);
    };
    if (training) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            T mean = T(0);
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t i = 0; i < inner; ++i) mean += xv.data[idx(s, ch, i)];
            mean /= static_cast<T>(rcount);
            T var = T(0);
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t i = 0; i < inner; ++i) {
                    T d = xv.data[idx(s, ch, i)] - mean;
                    var += d * d;
                }
            var /= static_cast<T>(rcount);
            const T is = T(1) / std::sqrt(var + eps);
            (*invstd)[static_cast<std::size_t>(ch)] = is;
            const T gg = gv.data[static_cast<std::size_t>(ch)];
            const T bb = bv.data[static_cast<std::size_t>(ch)];
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t i = 0; i < inner; ++i) {
                    T xh = (xv.data[idx(s, ch, i)] - mean) * is;
                    xhat->data[idx(s, ch, i)] = xh;
                    out.data[idx(s, ch, i)] = gg * xh + bb;
                }
            if (update_running) {
                running_mean->data[static_cast<std::size_t>(ch)] =
                    (T(1) - momentum) * running_mean->data[static_cast<std::size_t>(ch)] + momentum * mean;
                running_var->data[static_cast<std::size_t>(ch)] =
                    (T(1) - momentum) * running_var->data[static_cast<std::size_t>(ch)] + momentum * var;
            }
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T mean = running_mean->data[static_cast<std::size_t>(ch)];
            const T is = T(1) / std::sqrt(running_var->data[static_cast<std::size_t>(ch)] + eps);
            (*invstd)[static_cast<std::size_t>(ch)] = is;
            const T gg = gv.data[static_cast<std::size_t>(ch)];
            const T bb = bv.data[static_cast<std::size_t>(ch)];
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t i = 0; i < inner; ++i) {
                    T xh = (xv.data[idx(s, ch, i)] - mean) * is;
                    xhat->data[idx(s, ch, i)] = xh;
                    out.data[idx(s, ch, i)] = gg * xh + bb;
                }
        }
    }
    const bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, gamma, beta, xhat, invstd, n, c, inner, training]() {
            const auto& g = t.grad(id);
            const auto& gv2 = t.val(gamma);
            auto idx2 = [&](std::int64_t s, std::int64_t ch, std::int64_t i) {
                return static_cast<std::size_t>((s * c + ch) * inner + i);
            };
            const T rcount = static_cast<T>(n * inner);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                T sum_g = T(0), sum_gx = T(0);
                for (std::int64_t s = 0; s < n; ++s)
                    for (std::int64_t i = 0; i < inner; ++i) {
                        sum_g += g.data[idx2(s, ch, i)];
                        sum_gx += g.data[idx2(s, ch, i)] * xhat->data[idx2(s, ch, i)];
                    }
                if (t.requires_grad(beta)) t.grad(beta).data[static_cast<std::size_t>(ch)] += sum_g;
                if (t.requires_grad(gamma)) t.grad(gamma).data[static_cast<std::size_t>(ch)] += sum_gx;
                if (t.requires_grad(x)) {
                    auto& gx = t.grad(x);
                    const T gg = gv2.data[static_cast<std::size_t>(ch)];
                    const T is = (*invstd)[static_cast<std::size_t>(ch)];
                    if (training) {
                        const T mg = sum_g / rcount;
                        const T mgx = sum_gx / rcount;
                        for (std::int64_t s = 0; s < n; ++s)
                            for (std::int64_t i = 0; i < inner; ++i)
                                gx.data[idx2(s, ch, i)] +=
                                    gg * is *
                                    (g.data[idx2(s, ch, i)] - mg - xhat->data[idx2(s, ch, i)] * mgx);
                    } else {
                        for (std::int64_t s = 0; s < n; ++s)
                            for (std::int64_t i = 0; i < inner; ++i)
                                gx.data[idx2(s, ch, i)] += gg * is * g.data[idx2(s, ch, i)];
                    }
                }
            }
        });
    return id;
}

// ---- pooling and resampling ----

template <typename T>
int maxpool2d(Tape<T>& t, int x, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() == 4, "maxpool2d: input must be NCHW");
    const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::int64_t ho = detail::conv_out_extent(h, k, stride, pad, 1);
    const std::int64_t wo = detail::conv_out_extent(w, k, stride, pad, 1);
    check_contract(ho > 0 && wo > 0, "maxpool2d: empty output");
    Tensor<T> out({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    std::int64_t o = 0;
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T* xp = xv.ptr() + (s * c + ch) * h * w;
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox, ++o) {
                    T best = T(0);
                    std::int64_t bi = -1;
                    for (std::int64_t ki = 0; ki < k; ++ki) {
                        const std::int64_t iy = oy * stride - pad + ki;
                        if (iy < 0 || iy >= h) continue;
                        for (std::int64_t kj = 0; kj < k; ++kj) {
                            const std::int64_t ix = ox * stride - pad + kj;
                            if (ix < 0 || ix >= w) continue;
                            const T v = xp[iy * w + ix];
                            if (bi < 0 || v > best) {
                                best = v;
                                bi = iy * w + ix;
                            }
                        }
                    }
                    out.data[static_cast<std::size_t>(o)] = bi < 0 ? T(0) : best;
                    (*argmax)[static_cast<std::size_t>(o)] = bi < 0 ? -1 : (s * c + ch) * h * w + bi;
                }
        }
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, argmax]() {
            const auto& g = t.grad(id);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                const std::int64_t a = (*argmax)[i];
                if (a >= 0) gx.data[static_cast<std::size_t>(a)] += g.data[i];
            }
        });
    return id;
}

// Max pooling over (kh, kw) windows applied per depth slice of NCDHW input.
template <typename T>
int maxpool3d_spatial(Tape<T>& t, int x, std::int64_t k, std::int64_t pad) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() == 5, "maxpool3d_spatial: input must be NCDHW");
    const std::int64_t n = xv.dim(0), c = xv.dim(1), d = xv.dim(2), h = xv.dim(3), w = xv.dim(4);
    const std::int64_t ho = detail::conv_out_extent(h, k, 1, pad, 1);
    const std::int64_t wo = detail::conv_out_extent(w, k, 1, pad, 1);
    Tensor<T> out({n, c, d, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    std::int64_t o = 0;
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t dz = 0; dz < d; ++dz) {
                const std::int64_t base = ((s * c + ch) * d + dz) * h * w;
                const T* xp = xv.ptr() + base;
                for (std::int64_t oy = 0; oy < ho; ++oy)
                    for (std::int64_t ox = 0; ox < wo; ++ox, ++o) {
                        T best = T(0);
                        std::int64_t bi = -1;
                        for (std::int64_t ki = 0; ki < k; ++ki) {
                            const std::int64_t iy = oy - pad + ki;
                            if (iy < 0 || iy >= h) continue;
                            for (std::int64_t kj = 0; kj < k; ++kj) {
                                const std::int64_t ix = ox - pad + kj;
                                if (ix < 0 || ix >= w) continue;
                                const T v = xp[iy * w + ix];
                                if (bi < 0 || v > best) {
                                    best = v;
                                    bi = iy * w + ix;
                                }
                            }
                        }
                        out.data[static_cast<std::size_t>(o)] = bi < 0 ? T(0) : best;
                        (*argmax)[static_cast<std::size_t>(o)] = bi < 0 ? -1 : base + bi;
                    }
            }
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, argmax]() {
            const auto& g = t.grad(id);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                const std::int64_t a = (*argmax)[i];
                if (a >= 0) gx.data[static_cast<std::size_t>(a)] += g.data[i];
            }
        });
    return id;
}

// Nearest-neighbor 2x upsampling of NCHW input.
template <typename T>
int upsample2x(Tape<T>& t, int x) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() == 4, "upsample2x: input must be NCHW");
    const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor<T> out({n, c, 2 * h, 2 * w});
    for (std::int64_t sc = 0; sc < n * c; ++sc) {
        const T* xp = xv.ptr() + sc * h * w;
        T* op = out.ptr() + sc * 4 * h * w;
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) {
                const T v = xp[i * w + j];
                op[(2 * i) * 2 * w + 2 * j] = v;
                op[(2 * i) * 2 * w + 2 * j + 1] = v;
                op[(2 * i + 1) * 2 * w + 2 * j] = v;
                op[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
            }
    }
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, n, c, h, w]() {
            const auto& g = t.grad(id);
            auto& gx = t.grad(x);
            for (std::int64_t sc = 0; sc < n * c; ++sc) {
                const T* gp = g.ptr() + sc * 4 * h * w;
                T* gxp = gx.ptr() + sc * h * w;
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < w; ++j)
                        gxp[i * w + j] += gp[(2 * i) * 2 * w + 2 * j] + gp[(2 * i) * 2 * w + 2 * j + 1] +
                                          gp[(2 * i + 1) * 2 * w + 2 * j] +
                                          gp[(2 * i + 1) * 2 * w + 2 * j + 1];
            }
        });
    return id;
}

// [N, C, ...] -> [N, C] mean over the trailing axes.
template <typename T>
int global_avg_pool(Tape<T>& t, int x) {
    const auto& xv = t.val(x);
    check_contract(xv.ndim() >= 3, "global_avg_pool: input must have spatial axes");
    const std::int64_t n = xv.dim(0), c = xv.dim(1);
    const std::int64_t inner = xv.numel() / (n * c);
    Tensor<T> out({n, c});
    for (std::int64_t sc = 0; sc < n * c; ++sc) {
        const T* xp = xv.ptr() + sc * inner;
        T s = T(0);
        for (std::int64_t i = 0; i < inner; ++i) s += xp[i];
        out.data[static_cast<std::size_t>(sc)] = s / static_cast<T>(inner);
    }
    const bool rg = t.requires_grad(x);
    int id = t.add(std::move(out), rg);
    if (rg)
        t.set_backward(id, [&t, id, x, n, c, inner]() {
            const auto& g = t.grad(id);
            auto& gx = t.grad(x);
            for (std::int64_t sc = 0; sc < n * c; ++sc) {
                const T gv = g.data[static_cast<std::size_t>(sc)] / static_cast<T>(inner);
                T* gxp = gx.ptr() + sc * inner;
                for (std::int64_t i = 0; i < inner; ++i) gxp[i] += gv;
            }
        });
    return id;
}

} // namespace ops
} // namespace probegen
