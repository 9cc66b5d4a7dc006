#pragma once

#include <cstddef>
#include <stdexcept>

#include "rsalab/tensor.hpp"

namespace rsalab {

enum class Padding { Zero };

/// Centered spatio-temporal window. All extents are odd so the target sits
/// at offset (0,0,0); neighbors are enumerated row-major with dt slowest
/// and dw fastest, which fixes the vec() convention used by every kernel.
struct NeighborhoodSpec {
    int m_t = 1;
    int m_h = 1;
    int m_w = 1;
    Padding padding = Padding::Zero;

    std::size_t context_size() const {
        return static_cast<std::size_t>(m_t) * m_h * m_w;
    }

    void validate() const {
        if (m_t < 1 || m_h < 1 || m_w < 1)
            throw std::invalid_argument("neighborhood: window extents must be positive");
        if (m_t % 2 == 0 || m_h % 2 == 0 || m_w % 2 == 0)
            throw std::invalid_argument("neighborhood: window extents must be odd");
    }

    void validate_for_grid(std::size_t t, std::size_t h, std::size_t w) const {
        validate();
        if (static_cast<std::size_t>(m_t) > 2 * t + 1 ||
            static_cast<std::size_t>(m_h) > 2 * h + 1 ||
            static_cast<std::size_t>(m_w) > 2 * w + 1)
            throw std::invalid_argument("neighborhood: window exceeds 2*grid+1");
    }
};

struct GridDims {
    std::size_t batch = 1, time = 1, height = 1, width = 1, channels = 1;
    std::size_t positions() const { return time * height * width; }
};

template <typename T>
GridDims grid_of(const Tensor<T>& x) {
    if (x.rank() != 5)
        throw std::invalid_argument("feature map must have shape [B,T,H,W,C]");
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4)};
}

/// Extract every local window into an explicit [B, N, M, C] context tensor,
/// N = T*H*W. Out-of-grid neighbors are zero rows; the center row m=(M-1)/2
/// is the target feature itself.
template <typename T>
Tensor<T> unfold(const Tensor<T>& x, const NeighborhoodSpec& spec) {
    const GridDims g = grid_of(x);
    spec.validate_for_grid(g.time, g.height, g.width);
    const std::size_t M = spec.context_size();
    const std::size_t N = g.positions();
    const std::size_t C = g.channels;
    const int rt = spec.m_t / 2, rh = spec.m_h / 2, rw = spec.m_w / 2;

    Tensor<T> out({g.batch, N, M, C});
    const T* src = x.data();
    T* dst = out.data();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t t = 0; t < g.time; ++t)
            for (std::size_t h = 0; h < g.height; ++h)
                for (std::size_t w = 0; w < g.width; ++w) {
                    const std::size_t n = (t * g.height + h) * g.width + w;
                    T* row = dst + ((b * N + n) * M) * C;
                    for (int dt = -rt; dt <= rt; ++dt)
                        for (int dh = -rh; dh <= rh; ++dh)
                            for (int dw = -rw; dw <= rw; ++dw, row += C) {
                                const long tt = static_cast<long>(t) + dt;
                                const long hh = static_cast<long>(h) + dh;
                                const long ww = static_cast<long>(w) + dw;
                                if (tt < 0 || tt >= static_cast<long>(g.time) || hh < 0 ||
                                    hh >= static_cast<long>(g.height) || ww < 0 ||
                                    ww >= static_cast<long>(g.width))
                                    continue;  // zero padding
                                const T* cell =
                                    src + (((b * g.time + tt) * g.height + hh) * g.width + ww) * C;
                                for (std::size_t c = 0; c < C; ++c) row[c] = cell[c];
                            }
                }
    }
    return out;
}

/// Adjoint of unfold: scatter-add a [B, N, M, C] cotangent back onto the
/// grid, accumulating into `grad` of shape [B,T,H,W,C].
template <typename T>
void unfold_scatter_add(const Tensor<T>& d_ctx, const NeighborhoodSpec& spec, Tensor<T>& grad) {
    const GridDims g = grid_of(grad);
    const std::size_t M = spec.context_size();
    const std::size_t N = g.positions();
    const std::size_t C = g.channels;
    if (d_ctx.rank() != 4 || d_ctx.dim(0) != g.batch || d_ctx.dim(1) != N || d_ctx.dim(2) != M ||
        d_ctx.dim(3) != C)
        throw std::invalid_argument("unfold_scatter_add: cotangent shape mismatch");
    const int rt = spec.m_t / 2, rh = spec.m_h / 2, rw = spec.m_w / 2;

    const T* src = d_ctx.data();
    T* dst = grad.data();
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t t = 0; t < g.time; ++t)
            for (std::size_t h = 0; h < g.height; ++h)
                for (std::size_t w = 0; w < g.width; ++w) {
                    const std::size_t n = (t * g.height + h) * g.width + w;
                    const T* row = src + ((b * N + n) * M) * C;
                    for (int dt = -rt; dt <= rt; ++dt)
                        for (int dh = -rh; dh <= rh; ++dh)
                            for (int dw = -rw; dw <= rw; ++dw, row += C) {
                                const long tt = static_cast<long>(t) + dt;
                                const long hh = static_cast<long>(h) + dh;
                                const long ww = static_cast<long>(w) + dw;
                                if (tt < 0 || tt >= static_cast<long>(g.time) || hh < 0 ||
                                    hh >= static_cast<long>(g.height) || ww < 0 ||
                                    ww >= static_cast<long>(g.width))
                                    continue;
                                T* cell =
                                    dst + (((b * g.time + tt) * g.height + hh) * g.width + ww) * C;
                                for (std::size_t c = 0; c < C; ++c) cell[c] += row[c];
                            }
                }
}

}  // namespace rsalab
