#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "rsalab/tensor.hpp"

namespace rsalab {

inline constexpr double kL2Eps = 1e-12;

/// Softmax with max-subtraction, in place.
template <typename T>
void softmax_inplace(std::span<T> v) {
    if (v.empty()) return;
    T mx = *std::max_element(v.begin(), v.end());
    T sum = T(0);
    for (T& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (T& x : v) x /= sum;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& v) {
    Tensor<T> out = v;
    softmax_inplace(out.span());
    return out;
}

template <typename T>
T row_l2_norm(std::span<const T> row) {
    T s = T(0);
    for (T x : row) s += x * x;
    return std::sqrt(s);
}

/// Scale a row by 1/max(|row|_2, eps). Zero rows stay zero.
template <typename T>
void l2_normalize_row(std::span<T> row, T eps) {
    const T scale = T(1) / std::max(row_l2_norm<T>(row), eps);
    for (T& x : row) x *= scale;
}

/// Normalize every length-C row of a [..., C] tensor.
template <typename T>
void l2_normalize_rows(Tensor<T>& a, T eps = T(kL2Eps)) {
    if (eps <= T(0)) throw std::invalid_argument("l2_normalize_rows: eps must be positive");
    if (a.rank() == 0 || a.size() == 0) return;
    const std::size_t c = a.dim(a.rank() - 1);
    T* p = a.data();
    for (std::size_t r = 0; r < a.size() / c; ++r)
        l2_normalize_row(std::span<T>(p + r * c, c), eps);
}

/// Row-wise projection: [..., C] x [C, K] -> [..., K].
template <typename T>
Tensor<T> project_rows(const Tensor<T>& x, const Tensor<T>& w) {
    if (w.rank() != 2 || x.rank() == 0 || x.dim(x.rank() - 1) != w.dim(0))
        throw std::invalid_argument("project_rows: shape mismatch");
    const std::size_t c = w.dim(0), k = w.dim(1);
    std::vector<std::size_t> shape = x.shape();
    shape.back() = k;
    Tensor<T> out(std::move(shape));
    const std::size_t rows = x.size() / c;
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (std::size_t r = 0; r < rows; ++r, px += c, po += k)
        for (std::size_t i = 0; i < c; ++i) {
            const T xi = px[i];
            const T* wrow = pw + i * k;
            for (std::size_t j = 0; j < k; ++j) po[j] += xi * wrow[j];
        }
    return out;
}

/// Pull an upstream gradient back through l2_normalize_row. `pre` is the
/// row before normalization. Adds into `d_pre`.
template <typename T>
void l2_normalize_backward(std::span<const T> pre, std::span<const T> d_hat,
                           std::span<T> d_pre, T eps) {
    const T n = row_l2_norm(pre);
    if (n < eps) {
        const T inv = T(1) / eps;
        for (std::size_t i = 0; i < pre.size(); ++i) d_pre[i] += d_hat[i] * inv;
        return;
    }
    const T inv = T(1) / n;
    T dot = T(0);
    for (std::size_t i = 0; i < pre.size(); ++i) dot += pre[i] * inv * d_hat[i];
    for (std::size_t i = 0; i < pre.size(); ++i)
        d_pre[i] += (d_hat[i] - pre[i] * inv * dot) * inv;
}

}  // namespace rsalab
