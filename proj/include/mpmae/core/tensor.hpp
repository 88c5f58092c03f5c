#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "mpmae/core/rng.hpp"

namespace mpmae {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor with shared storage. Reshapes alias the data;
// clone() deep-copies.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(shape_)), T(0))) {}

    Tensor(Shape shape, std::shared_ptr<std::vector<T>> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_->size()) != shape_numel(shape_))
            throw std::invalid_argument("tensor storage size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data(), t.data() + t.numel(), v);
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values) {
        return Tensor(std::move(shape), std::make_shared<std::vector<T>>(std::move(values)));
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        T* p = t.data();
        for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return defined() ? static_cast<std::int64_t>(data_->size()) : 0; }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }
    T& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        return t;
    }

    void fill(T v) { std::fill(data(), data() + numel(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        const T* src = data();
        U* dst = out.data();
        for (std::int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<U>(src[i]);
        return out;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    T m = T(0);
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace mpmae
