#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace zeroscm {

// Error taxonomy shared across the project. ShapeError: caller passed
// non-conforming extents. NumericError: a computation produced NaN/Inf or an
// otherwise invalid value. DataError: files, formats, configs.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

inline int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape");
        n *= e;
    }
    return n;  // rank-0 => 1 (scalar)
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

/// Dense row-major tensor. Rank 0 holds exactly one value (a scalar).
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), T(0)) {}
    Tensor(std::vector<int64_t> s, T fill)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), fill) {}

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int64_t> s, T v) { return Tensor(std::move(s), v); }
    static Tensor scalar(T v) {
        Tensor t;
        t.data.assign(1, v);
        return t;
    }
    static Tensor from(std::vector<int64_t> s, std::vector<T> values) {
        Tensor t;
        t.shape = std::move(s);
        if (numel_of(t.shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("Tensor::from: value count does not match shape " + shape_str(t.shape));
        t.data = std::move(values);
        return t;
    }

    bool empty() const { return data.empty(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t extent(int axis) const { return shape.at(static_cast<size_t>(axis)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T& at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    T at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

inline std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
    return s;
}

}  // namespace zeroscm
