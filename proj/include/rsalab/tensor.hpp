#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsalab {

/// Dense row-major tensor; the last axis varies fastest.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), T{}) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static Tensor full(std::vector<std::size_t> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    /// Square identity matrix.
    static Tensor eye(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
        return t;
    }

    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    const std::vector<std::size_t>& shape() const { return shape_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return {data_.data(), data_.size()}; }
    std::span<const T> span() const { return {data_.data(), data_.size()}; }

    template <typename... Ix>
    T& operator()(Ix... ix) { return data_[offset(ix...)]; }
    template <typename... Ix>
    const T& operator()(Ix... ix) const { return data_[offset(ix...)]; }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    template <typename... Ix>
    std::size_t offset(Ix... ix) const {
        static_assert(sizeof...(Ix) > 0);
        if (sizeof...(Ix) != shape_.size())
            throw std::invalid_argument("tensor: index rank mismatch");
        std::size_t idx[] = {static_cast<std::size_t>(ix)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < shape_.size(); ++a)
            off = off * shape_[a] + idx[a];
        return off;
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

/// Non-owning view of a row-major matrix block.
template <typename T>
struct MatView {
    const T* ptr = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    const T* row(std::size_t r) const { return ptr + r * cols; }
    T operator()(std::size_t r, std::size_t c) const { return ptr[r * cols + c]; }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (const T& v : t.span())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

}  // namespace rsalab
