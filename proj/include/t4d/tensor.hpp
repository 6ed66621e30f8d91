#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "t4d/common.hpp"

namespace t4d {

// Axis order convention everywhere: (batch N, channel C, time T, X, Y, Z).
// Rank 0 (empty dims) is a scalar and only arises from full reductions.
struct Shape {
    std::vector<std::size_t> dims;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> d) : dims(d) { validate(); }
    explicit Shape(std::vector<std::size_t> d) : dims(std::move(d)) { validate(); }

    std::size_t rank() const { return dims.size(); }

    std::size_t count() const {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return n;
    }

    std::size_t operator[](std::size_t i) const { return dims[i]; }

    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return dims != o.dims; }

    std::string str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
        os << "]";
        return os.str();
    }

    void validate() const {
        if (dims.size() > 6) throw ShapeError("shape rank " + std::to_string(dims.size()) + " exceeds 6");
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw ShapeError("shape " + str() + " has a zero extent");
            if (d > std::numeric_limits<std::size_t>::max() / n)
                throw ShapeError("shape " + str() + " element count overflows");
            n *= d;
        }
    }
};

// Row-major strides, last index fastest.
inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.rank(), 1);
    for (std::size_t i = s.rank(); i-- > 1;) st[i - 1] = st[i] * s.dims[i];
    return st;
}

template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape.count(), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape.count())
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape.str());
    }

    std::size_t count() const { return data.size(); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    T& at(std::initializer_list<std::size_t> idx) { return data[flat(idx)]; }
    const T& at(std::initializer_list<std::size_t> idx) const { return data[flat(idx)]; }

    std::size_t flat(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape.rank()) throw ShapeError("index rank mismatch for shape " + shape.str());
        std::size_t f = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) {
            if (i >= shape.dims[axis]) throw RangeError("index out of bounds on axis " + std::to_string(axis));
            f = f * shape.dims[axis] + i;
            ++axis;
        }
        return f;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

template <typename T>
Tensor<T> zeros(const Shape& s) {
    return Tensor<T>(s);
}

template <typename T>
Tensor<T> full(const Shape& s, T v) {
    Tensor<T> t(s);
    t.fill(v);
    return t;
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape.str() + " vs " + b.shape.str());
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < a.count(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < a.count(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < a.count(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < a.count(); ++i) out[i] = a[i] * c;
    return out;
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F&& f) {
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < a.count(); ++i) out[i] = f(a[i]);
    return out;
}

enum class Reduce { sum, mean, max };

// Reduces over the given axes; reduced axes are removed from the shape.
// Reducing every axis yields a rank-0 scalar tensor.
template <typename T>
Tensor<T> reduce(Reduce op, const Tensor<T>& a, const std::vector<std::size_t>& axes) {
    const std::size_t rank = a.shape.rank();
    std::vector<bool> reduced(rank, false);
    for (std::size_t ax : axes) {
        if (ax >= rank) throw RangeError("reduce: axis " + std::to_string(ax) + " invalid for shape " + a.shape.str());
        reduced[ax] = true;
    }

    std::vector<std::size_t> out_dims;
    std::size_t reduce_count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        if (reduced[i])
            reduce_count *= a.shape.dims[i];
        else
            out_dims.push_back(a.shape.dims[i]);
    }
    Tensor<T> out{Shape(out_dims)};
    if (op == Reduce::max) out.fill(std::numeric_limits<T>::lowest());

    const auto in_strides = row_major_strides(a.shape);
    std::vector<std::size_t> out_stride_of_axis(rank, 0);
    {
        auto out_strides = row_major_strides(out.shape);
        std::size_t j = 0;
        for (std::size_t i = 0; i < rank; ++i)
            if (!reduced[i]) out_stride_of_axis[i] = out_strides[j++];
    }

    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t f = 0; f < a.count(); ++f) {
        std::size_t of = 0;
        for (std::size_t i = 0; i < rank; ++i)
            if (!reduced[i]) of += idx[i] * out_stride_of_axis[i];
        if (op == Reduce::max)
            out[of] = std::max(out[of], a[f]);
        else
            out[of] += a[f];
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < a.shape.dims[i]) break;
            idx[i] = 0;
        }
    }
    if (op == Reduce::mean) {
        const T inv = T(1) / static_cast<T>(reduce_count);
        for (auto& v : out.data) v *= inv;
    }
    (void)in_strides;
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& s) {
    if (s.count() != a.count())
        throw ShapeError("reshape: element count mismatch " + a.shape.str() + " -> " + s.str());
    return Tensor<T>(s, a.data);
}

// Physically reorders data so the result is row-major contiguous.
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
    const std::size_t rank = a.shape.rank();
    if (perm.size() != rank) throw ShapeError("permute: permutation rank mismatch");
    std::vector<bool> seen(rank, false);
    for (std::size_t p : perm) {
        if (p >= rank || seen[p]) throw ShapeError("permute: invalid permutation");
        seen[p] = true;
    }
    std::vector<std::size_t> out_dims(rank);
    for (std::size_t i = 0; i < rank; ++i) out_dims[i] = a.shape.dims[perm[i]];
    Tensor<T> out{Shape(out_dims)};

    const auto in_strides = row_major_strides(a.shape);
    std::vector<std::size_t> idx(rank, 0);  // output index
    for (std::size_t f = 0; f < out.count(); ++f) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < rank; ++i) src += idx[i] * in_strides[perm[i]];
        out[f] = a[src];
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out.shape.dims[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    return inv;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace t4d
