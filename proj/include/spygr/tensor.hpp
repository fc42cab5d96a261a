#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "spygr/errors.hpp"
#include "spygr/rng.hpp"

namespace spygr {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

template <class T>
struct dtype_of;
template <>
struct dtype_of<float> {
    static constexpr Dtype value = Dtype::f32;
};
template <>
struct dtype_of<double> {
    static constexpr Dtype value = Dtype::f64;
};

/// Extents of a [N, C, H, W] tensor, W fastest-varying.
struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << "[" << n << "," << c << "," << h << "," << w << "]";
        return os.str();
    }
};

/// Dense row-major 4-D array. Matrices ride along as [1,1,rows,cols] and
/// vectors as [1,1,len,1]; every operation states which view it expects.
template <class T>
class Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);

public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(shape), data_(check_extents(shape), fill) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_.numel())
            throw ShapeError("data length " + std::to_string(data_.size()) +
                             " does not match extents " + shape_.str());
        check_extents(shape_);
    }

    static Tensor matrix(int rows, int cols, std::vector<T> values = {}) {
        Shape s{1, 1, rows, cols};
        if (values.empty()) return Tensor(s);
        return Tensor(s, std::move(values));
    }

    static Tensor vector_col(int len, std::vector<T> values = {}) {
        Shape s{1, 1, len, 1};
        if (values.empty()) return Tensor(s);
        return Tensor(s, std::move(values));
    }

    static Tensor full(Shape shape, T value) { return Tensor(shape, value); }

    /// Uniform(-k, k) fill, k = fan_in^(-1/2).
    static Tensor init_uniform(Shape shape, int fan_in, Rng& rng) {
        Tensor t(shape);
        const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(-k, k));
        return t;
    }

    static Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng) {
        Tensor t(shape);
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }
    constexpr Dtype dtype() const { return dtype_of<T>::value; }

    bool is_matrix() const { return shape_.n == 1 && shape_.c == 1; }
    int rows() const { return shape_.h; }
    int cols() const { return shape_.w; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& at(int n, int c, int h, int w) {
        return data_[((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }
    T at(int n, int c, int h, int w) const {
        return data_[((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }

    T& operator[](std::int64_t i) { return data_[i]; }
    T operator[](std::int64_t i) const { return data_[i]; }

    /// Same data, new extents; element count must be preserved.
    Tensor reshaped(Shape shape) const {
        if (shape.numel() != shape_.numel())
            throw ShapeError("reshape " + shape_.str() + " -> " + shape.str() +
                             " changes element count");
        Tensor out = *this;
        out.shape_ = shape;
        return out;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool operator==(const Tensor& other) const = default;

    bool all_finite() const {
        for (const T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    static std::int64_t check_extents(const Shape& s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("negative extent in " + s.str());
        return s.numel();
    }

    Shape shape_;
    std::vector<T> data_;
};

/// NaN/Inf is surfaced immediately, tagged with the producing operation.
template <class T>
inline void ensure_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite())
        throw NonFiniteError(std::string(op) + " produced NaN/Inf on " + t.shape().str());
}

template <class T>
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace spygr
