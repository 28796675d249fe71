#pragma once
// Named parameter storage, Adam, and the layer builders shared by all networks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "probegen/common.hpp"
#include "probegen/rng.hpp"
#include "probegen/tape.hpp"
#include "probegen/tensor.hpp"

namespace probegen {

namespace detail {

inline void stream_write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void stream_write_u8(std::ostream& os, std::uint8_t v) { stream_write_bytes(os, &v, 1); }

inline void stream_write_u64(std::ostream& os, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu);
    stream_write_bytes(os, b, 8);
}

inline void stream_write_i64(std::ostream& os, std::int64_t v) {
    stream_write_u64(os, static_cast<std::uint64_t>(v));
}

inline void stream_write_f64(std::ostream& os, double v) {
    std::uint64_t u;
    static_assert(sizeof(u) == sizeof(v));
    std::memcpy(&u, &v, 8);
    stream_write_u64(os, u);
}

inline void stream_write_string(std::ostream& os, const std::string& s) {
    stream_write_u64(os, s.size());
    stream_write_bytes(os, s.data(), s.size());
}

inline void stream_read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    check_format(static_cast<std::size_t>(is.gcount()) == n, "stream: truncated read");
}

inline std::uint8_t stream_read_u8(std::istream& is) {
    std::uint8_t v;
    stream_read_bytes(is, &v, 1);
    return v;
}

inline std::uint64_t stream_read_u64(std::istream& is) {
    std::uint8_t b[8];
    stream_read_bytes(is, b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline std::int64_t stream_read_i64(std::istream& is) {
    return static_cast<std::int64_t>(stream_read_u64(is));
}

inline double stream_read_f64(std::istream& is) {
    std::uint64_t u = stream_read_u64(is);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

inline std::string stream_read_string(std::istream& is) {
    std::uint64_t n = stream_read_u64(is);
    check_format(n <= (1u << 20), "stream: implausible string length");
    std::string s(static_cast<std::size_t>(n), '\0');
    stream_read_bytes(is, s.data(), static_cast<std::size_t>(n));
    return s;
}

} // namespace detail

template <typename T>
using InitFn = std::function<void(Rng&, Tensor<T>&)>;

template <typename T>
InitFn<T> init_constant(T v) {
    return [v](Rng&, Tensor<T>& w) {
        for (auto& e : w.data) e = v;
    };
}

template <typename T>
InitFn<T> init_zeros() {
    return init_constant(T(0));
}

template <typename T>
InitFn<T> init_ones() {
    return init_constant(T(1));
}

// Normal with std sqrt(2 / fan_in); the caller states fan_in explicitly.
template <typename T>
InitFn<T> init_he_normal(std::int64_t fan_in) {
    check_contract(fan_in >= 1, "init_he_normal: fan_in must be positive");
    return [fan_in](Rng& rng, Tensor<T>& w) {
        const T sd = std::sqrt(T(2) / T(fan_in));
        for (auto& e : w.data) e = sd * static_cast<T>(rng.normal());
    };
}

template <typename T>
struct ParamEntry {
    Tensor<T> value;
    bool trainable = true;
};

// Parameters are keyed by dotted names. Each one is initialized from its own
// RNG stream derived from (init_seed, name), so the values a given name gets
// never depend on how many other parameters exist or the order of creation.
template <typename T>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}

    std::uint64_t init_seed() const { return init_seed_; }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor<T>& get_or_create(const std::string& name, const std::vector<std::int64_t>& shape,
                             bool trainable, const InitFn<T>& fill) {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            ParamEntry<T> e;
            e.value = Tensor<T>(shape);
            e.trainable = trainable;
            Rng rng(init_seed_, "init/" + name);
            fill(rng, e.value);
            it = entries_.emplace(name, std::move(e)).first;
        } else {
            check_contract(it->second.value.shape == shape,
                           "param store: shape mismatch for " + name);
            check_contract(it->second.trainable == trainable,
                           "param store: trainable flag mismatch for " + name);
        }
        return it->second.value;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = entries_.find(name);
        check_contract(it != entries_.end(), "param store: unknown parameter " + name);
        return it->second.value;
    }

    const Tensor<T>& at(const std::string& name) const {
        auto it = entries_.find(name);
        check_contract(it != entries_.end(), "param store: unknown parameter " + name);
        return it->second.value;
    }

    bool trainable(const std::string& name) const {
        auto it = entries_.find(name);
        check_contract(it != entries_.end(), "param store: unknown parameter " + name);
        return it->second.trainable;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& kv : entries_) out.push_back(kv.first);
        return out;
    }

    std::size_t size() const { return entries_.size(); }

    std::int64_t count_values(bool trainable_only) const {
        std::int64_t n = 0;
        for (const auto& kv : entries_)
            if (!trainable_only || kv.second.trainable) n += kv.second.value.numel();
        return n;
    }

    // Order-independent digest of every value byte, for frozen-parameter checks.
    std::uint64_t content_hash() const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 1099511628211ull;
            }
        };
        for (const auto& kv : entries_) {
            mix(kv.first.data(), kv.first.size());
            mix(kv.second.value.data.data(), kv.second.value.data.size() * sizeof(T));
        }
        return h;
    }

    std::uint64_t name_hash(const std::string& name) const {
        const Tensor<T>& v = at(name);
        std::uint64_t h = 1469598103934665603ull;
        const auto* b = reinterpret_cast<const unsigned char*>(v.data.data());
        for (std::size_t i = 0; i < v.data.size() * sizeof(T); ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
        return h;
    }

    void serialize(std::ostream& os) const {
        detail::stream_write_u64(os, init_seed_);
        detail::stream_write_u64(os, entries_.size());
        for (const auto& kv : entries_) {
            detail::stream_write_string(os, kv.first);
            detail::stream_write_u8(os, kv.second.trainable ? 1 : 0);
            detail::stream_write_u64(os, kv.second.value.shape.size());
            for (std::int64_t d : kv.second.value.shape) detail::stream_write_i64(os, d);
            for (T v : kv.second.value.data) detail::stream_write_f64(os, static_cast<double>(v));
        }
    }

    static ParamStore<T> deserialize(std::istream& is) {
        ParamStore<T> store(detail::stream_read_u64(is));
        const std::uint64_t n = detail::stream_read_u64(is);
        for (std::uint64_t i = 0; i < n; ++i) {
            std::string name = detail::stream_read_string(is);
            ParamEntry<T> e;
            e.trainable = detail::stream_read_u8(is) != 0;
            const std::uint64_t nd = detail::stream_read_u64(is);
            check_format(nd <= 8, "param store: implausible tensor rank");
            std::vector<std::int64_t> shape(nd);
            for (auto& d : shape) d = detail::stream_read_i64(is);
            e.value = Tensor<T>(shape);
            for (auto& v : e.value.data) v = static_cast<T>(detail::stream_read_f64(is));
            store.entries_.emplace(std::move(name), std::move(e));
        }
        return store;
    }

private:
    std::uint64_t init_seed_ = 0;
    std::map<std::string, ParamEntry<T>> entries_;
};

// Standard Adam. Moments are kept per parameter name; a parameter only moves
// on steps where a gradient for it is supplied, so networks absent from a
// phase's graph stay frozen without any special casing.
template <typename T>
class Adam {
public:
    Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    std::uint64_t step_count() const { return t_; }

    void step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads, T lr) {
        ++t_;
        const T c1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T c2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (const auto& kv : grads) {
            check_contract(params.trainable(kv.first),
                           "adam: gradient supplied for non-trainable parameter " + kv.first);
            Tensor<T>& value = params.at(kv.first);
            const Tensor<T>& g = kv.second;
            check_contract(value.shape == g.shape, "adam: gradient shape mismatch for " + kv.first);
            auto it = moments_.find(kv.first);
            if (it == moments_.end())
                it = moments_.emplace(kv.first, std::make_pair(Tensor<T>(value.shape), Tensor<T>(value.shape))).first;
            Tensor<T>& m = it->second.first;
            Tensor<T>& v = it->second.second;
            for (std::size_t i = 0; i < value.data.size(); ++i) {
                m.data[i] = beta1_ * m.data[i] + (T(1) - beta1_) * g.data[i];
                v.data[i] = beta2_ * v.data[i] + (T(1) - beta2_) * g.data[i] * g.data[i];
                const T mhat = m.data[i] / c1;
                const T vhat = v.data[i] / c2;
                value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void serialize(std::ostream& os) const {
        detail::stream_write_f64(os, static_cast<double>(beta1_));
        detail::stream_write_f64(os, static_cast<double>(beta2_));
        detail::stream_write_f64(os, static_cast<double>(eps_));
        detail::stream_write_u64(os, t_);
        detail::stream_write_u64(os, moments_.size());
        for (const auto& kv : moments_) {
            detail::stream_write_string(os, kv.first);
            detail::stream_write_u64(os, kv.second.first.shape.size());
            for (std::int64_t d : kv.second.first.shape) detail::stream_write_i64(os, d);
            for (T v : kv.second.first.data) detail::stream_write_f64(os, static_cast<double>(v));
            for (T v : kv.second.second.data) detail::stream_write_f64(os, static_cast<double>(v));
        }
    }

    static Adam<T> deserialize(std::istream& is) {
        const T beta1 = static_cast<T>(detail::stream_read_f64(is));
        const T beta2 = static_cast<T>(detail::stream_read_f64(is));
        const T eps = static_cast<T>(detail::stream_read_f64(is));
        Adam<T> a(beta1, beta2, eps);
        a.t_ = detail::stream_read_u64(is);
        const std::uint64_t n = detail::stream_read_u64(is);
        for (std::uint64_t i = 0; i < n; ++i) {
            std::string name = detail::stream_read_string(is);
            const std::uint64_t nd = detail::stream_read_u64(is);
            check_format(nd <= 8, "adam state: implausible tensor rank");
            std::vector<std::int64_t> shape(nd);
            for (auto& d : shape) d = detail::stream_read_i64(is);
            Tensor<T> m(shape), v(shape);
            for (auto& x : m.data) x = static_cast<T>(detail::stream_read_f64(is));
            for (auto& x : v.data) x = static_cast<T>(detail::stream_read_f64(is));
            a.moments_.emplace(std::move(name), std::make_pair(std::move(m), std::move(v)));
        }
        return a;
    }

private:
    T beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments_;
};

// One computation graph under construction: binds store parameters to tape
// nodes exactly once each and carries the normalization mode flags.
template <typename T>
struct GraphCtx {
    Tape<T>& tape;
    ParamStore<T>& params;
    bool training = false;
    bool update_running = true;
    T bn_momentum = T(0.1);
    T bn_eps = T(1e-5);
    std::map<std::string, int> bound;

    int param(const std::string& name, const std::vector<std::int64_t>& shape, bool trainable,
              const InitFn<T>& fill) {
        auto it = bound.find(name);
        if (it != bound.end()) return it->second;
        Tensor<T>& value = params.get_or_create(name, shape, trainable, fill);
        int id = tape.input(value, trainable);
        bound.emplace(name, id);
        return id;
    }

    // Gradients of every trainable bound parameter after backward().
    std::map<std::string, Tensor<T>> collect_gradients() const {
        std::map<std::string, Tensor<T>> out;
        for (const auto& kv : bound)
            if (tape.requires_grad(kv.second)) out.emplace(kv.first, tape.grad(kv.second));
        return out;
    }
};

template <typename T>
std::int64_t scaled_width(T width_scale, std::int64_t w) {
    return std::max<std::int64_t>(1, std::llround(static_cast<double>(width_scale) * static_cast<double>(w)));
}

namespace layers {

template <typename T>
int conv2d(GraphCtx<T>& ctx, int x, const std::string& name, std::int64_t cin, std::int64_t cout,
           std::int64_t k, std::int64_t stride, std::int64_t pad, std::int64_t dil = 1) {
    int w = ctx.param(name + ".w", {cout, cin, k, k}, true, init_he_normal<T>(cin * k * k));
    int b = ctx.param(name + ".b", {cout}, true, init_zeros<T>());
    return ops::conv2d(ctx.tape, x, w, b, stride, pad, dil);
}

template <typename T>
int conv3d(GraphCtx<T>& ctx, int x, const std::string& name, std::int64_t cin, std::int64_t cout,
           std::array<std::int64_t, 3> k, std::array<std::int64_t, 3> stride,
           std::array<std::int64_t, 3> pad, std::array<std::int64_t, 3> dil = {1, 1, 1}) {
    int w = ctx.param(name + ".w", {cout, cin, k[0], k[1], k[2]}, true,
                      init_he_normal<T>(cin * k[0] * k[1] * k[2]));
    int b = ctx.param(name + ".b", {cout}, true, init_zeros<T>());
    return ops::conv3d(ctx.tape, x, w, b, stride, pad, dil);
}

template <typename T>
int dense(GraphCtx<T>& ctx, int x, const std::string& name, std::int64_t in, std::int64_t out) {
    int w = ctx.param(name + ".w", {in, out}, true, init_he_normal<T>(in));
    int b = ctx.param(name + ".b", {out}, true, init_zeros<T>());
    return ops::dense(ctx.tape, x, w, b);
}

template <typename T>
int batchnorm(GraphCtx<T>& ctx, int x, const std::string& name, std::int64_t channels) {
    int gamma = ctx.param(name + ".gamma", {channels}, true, init_ones<T>());
    int beta = ctx.param(name + ".beta", {channels}, true, init_zeros<T>());
    Tensor<T>& rm = ctx.params.get_or_create(name + ".running_mean", {channels}, false, init_zeros<T>());
    Tensor<T>& rv = ctx.params.get_or_create(name + ".running_var", {channels}, false, init_ones<T>());
    return ops::batchnorm(ctx.tape, x, gamma, beta, &rm, &rv, ctx.training, ctx.update_running,
                          ctx.bn_momentum, ctx.bn_eps);
}

template <typename T>
int conv_bn_relu2d(GraphCtx<T>& ctx, int x, const std::string& name, std::int64_t cin,
                   std::int64_t cout, std::int64_t k, std::int64_t stride, std::int64_t pad,
                   std::int64_t dil = 1) {
    int y = conv2d(ctx, x, name, cin, cout, k, stride, pad, dil);
    y = batchnorm(ctx, y, name + ".bn", cout);
    return ops::relu(ctx.tape, y);
}

template <typename T>
int conv_bn_relu3d(GraphCtx<T>& ctx, int x, const std::string& name, std::int64_t cin,
                   std::int64_t cout, std::array<std::int64_t, 3> k,
                   std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> pad,
                   std::array<std::int64_t, 3> dil = {1, 1, 1}) {
    int y = conv3d(ctx, x, name, cin, cout, k, stride, pad, dil);
    y = batchnorm(ctx, y, name + ".bn", cout);
    return ops::relu(ctx.tape, y);
}

// Four-branch channel split of a requested output width. Small widths round
// every branch up to one channel, so the realized total can exceed the request;
// callers must consume .total.
struct InceptionSplit {
    std::int64_t b1, b3, b5, bp, total;
};

inline InceptionSplit inception_split(std::int64_t cout) {
    InceptionSplit s;
    s.b1 = std::max<std::int64_t>(1, cout / 4);
    s.b3 = std::max<std::int64_t>(1, cout / 2);
    s.b5 = std::max<std::int64_t>(1, cout / 8);
    s.bp = std::max<std::int64_t>(1, cout - s.b1 - s.b3 - s.b5);
    s.total = s.b1 + s.b3 + s.b5 + s.bp;
    return s;
}

// Mixed receptive fields at one resolution: 1x1, reduced 3x3, reduced 5x5, and
// pooled 1x1 branches concatenated on the channel axis.
template <typename T>
int inception2d(GraphCtx<T>& ctx, int x, const std::string& name, std::int64_t cin,
                const InceptionSplit& s) {
    int b1 = conv_bn_relu2d(ctx, x, name + ".b1", cin, s.b1, 1, 1, 0);
    std::int64_t r3 = std::max<std::int64_t>(1, s.b3 / 2);
    int b3 = conv_bn_relu2d(ctx, x, name + ".b3r", cin, r3, 1, 1, 0);
    b3 = conv_bn_relu2d(ctx, b3, name + ".b3", r3, s.b3, 3, 1, 1);
    std::int64_t r5 = std::max<std::int64_t>(1, s.b5 / 2);
    int b5 = conv_bn_relu2d(ctx, x, name + ".b5r", cin, r5, 1, 1, 0);
    b5 = conv_bn_relu2d(ctx, b5, name + ".b5", r5, s.b5, 5, 1, 2);
    int bp = ops::maxpool2d(ctx.tape, x, 3, 1, 1);
    bp = conv_bn_relu2d(ctx, bp, name + ".bp", cin, s.bp, 1, 1, 0);
    int y = ops::concat_axis1(ctx.tape, b1, b3);
    y = ops::concat_axis1(ctx.tape, y, b5);
    return ops::concat_axis1(ctx.tape, y, bp);
}

template <typename T>
int inception3d(GraphCtx<T>& ctx, int x, const std::string& name, std::int64_t cin,
                const InceptionSplit& s) {
    int b1 = conv_bn_relu3d(ctx, x, name + ".b1", cin, s.b1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    std::int64_t r3 = std::max<std::int64_t>(1, s.b3 / 2);
    int b3 = conv_bn_relu3d(ctx, x, name + ".b3r", cin, r3, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    b3 = conv_bn_relu3d(ctx, b3, name + ".b3", r3, s.b3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
    std::int64_t r5 = std::max<std::int64_t>(1, s.b5 / 2);
    int b5 = conv_bn_relu3d(ctx, x, name + ".b5r", cin, r5, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    b5 = conv_bn_relu3d(ctx, b5, name + ".b5", r5, s.b5, {3, 5, 5}, {1, 1, 1}, {1, 2, 2});
    int bp = ops::maxpool3d_spatial(ctx.tape, x, 3, 1);
    bp = conv_bn_relu3d(ctx, bp, name + ".bp", cin, s.bp, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    int y = ops::concat_axis1(ctx.tape, b1, b3);
    y = ops::concat_axis1(ctx.tape, y, b5);
    return ops::concat_axis1(ctx.tape, y, bp);
}

} // namespace layers

} // namespace probegen
