#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "probegen/common.hpp"

namespace probegen {

// Dense row-major n-dimensional array. Activations are NCHW (or NCDHW for
// volumetric layers); the scalar type is a template so the same graphs run in
// float for training and double for finite-difference verification.
template <typename T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) {
            check_contract(d > 0, "tensor: dimensions must be positive");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
};

} // namespace probegen
