#pragma once

#include "rsalab/ops.hpp"
#include "rsalab/threading.hpp"
#include "rsalab/unfold.hpp"

namespace rsalab {

// Comparison transforms sharing the unfolded-context abstraction: static
// convolution, query-key self-attention with ablation flags, involution,
// and lambda convolution.

template <typename T>
struct ConvParams {
    Tensor<T> weight;  // [M*C_in, C_out]
};

template <typename T>
struct SaParams {
    Tensor<T> e_q, e_k, e_v;  // [C, C]
    Tensor<T> p;              // [M, C]
    bool use_content = true;
    bool use_position = true;
    bool use_softmax = true;
    bool normalize = true;
};

template <typename T>
struct InvolutionParams {
    Tensor<T> p;  // [M, C]
};

template <typename T>
struct LambdaParams {
    Tensor<T> e_q, e_v;  // [C, C]
    Tensor<T> p;         // [M, C]
};

/// y_n = W^T vec(X_n). vec() flattens the context row-major (m outer,
/// channel inner), matching the neighbor enumeration of unfold.
template <typename T>
Tensor<T> convolution(const Tensor<T>& x, const NeighborhoodSpec& spec, const ConvParams<T>& p,
                      unsigned threads = 1) {
    const GridDims g = grid_of(x);
    const std::size_t M = spec.context_size();
    if (p.weight.rank() != 2 || p.weight.dim(0) != M * g.channels)
        throw std::invalid_argument("convolution: weight rows must equal M*C_in");
    const std::size_t c_out = p.weight.dim(1);
    const Tensor<T> ctx = unfold(x, spec);
    const std::size_t n = g.positions();

    Tensor<T> y({g.batch, g.time, g.height, g.width, c_out});
    parallel_chunks(g.batch * n, threads, [&](std::size_t lo, std::size_t hi) {
        const std::size_t mc = M * g.channels;
        for (std::size_t i = lo; i < hi; ++i) {
            const T* v = ctx.data() + i * mc;
            T* out = y.data() + i * c_out;
            for (std::size_t r = 0; r < mc; ++r) {
                const T vr = v[r];
                const T* wrow = p.weight.data() + r * c_out;
                for (std::size_t co = 0; co < c_out; ++co) out[co] += vr * wrow[co];
            }
        }
    });
    return y;
}

namespace detail {

/// Attention weights for one position: act(content * qK^T + position * qP^T).
template <typename T>
void sa_kernel_row(const SaParams<T>& p, const T* q, const T* kctx, std::size_t m_count,
                   std::size_t c, T* out) {
    for (std::size_t m = 0; m < m_count; ++m) {
        T logit = T(0);
        if (p.use_content) {
            const T* krow = kctx + m * c;
            for (std::size_t i = 0; i < c; ++i) logit += q[i] * krow[i];
        }
        if (p.use_position) {
            const T* prow = p.p.data() + m * c;
            for (std::size_t i = 0; i < c; ++i) logit += q[i] * prow[i];
        }
        out[m] = logit;
    }
    if (p.use_softmax) softmax_inplace(std::span<T>(out, m_count));
}

template <typename T>
void check_sa_shapes(const SaParams<T>& p, const GridDims& g, std::size_t m_count) {
    if (!p.use_content && !p.use_position)
        throw std::invalid_argument("self_attention: at least one interaction flag must be set");
    const std::size_t c = g.channels;
    auto square = [c](const Tensor<T>& e) { return e.rank() == 2 && e.dim(0) == c && e.dim(1) == c; };
    if (!square(p.e_q) || !square(p.e_k) || !square(p.e_v))
        throw std::invalid_argument("self_attention: embeddings must be [C, C]");
    if (p.p.rank() != 2 || p.p.dim(0) != m_count || p.p.dim(1) != c)
        throw std::invalid_argument("self_attention: position table must be [M, C]");
}

}  // namespace detail

/// Attention maps only, [B, N, M]; used for kernel dumps and diagnostics.
template <typename T>
Tensor<T> sa_kernels(const Tensor<T>& x, const NeighborhoodSpec& spec, const SaParams<T>& p,
                     unsigned threads = 1) {
    const GridDims g = grid_of(x);
    const std::size_t M = spec.context_size();
    detail::check_sa_shapes(p, g, M);

    Tensor<T> qmap = project_rows(x, p.e_q);
    Tensor<T> kmap = project_rows(x, p.e_k);
    if (p.normalize) {
        l2_normalize_rows(qmap, T(kL2Eps));
        l2_normalize_rows(kmap, T(kL2Eps));
    }
    const Tensor<T> kctx = unfold(kmap, spec);

    const std::size_t n = g.positions(), c = g.channels;
    Tensor<T> kernels({g.batch, n, M});
    parallel_chunks(g.batch * n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            detail::sa_kernel_row(p, qmap.data() + i * c, kctx.data() + i * M * c, M, c,
                                  kernels.data() + i * M);
    });
    return kernels;
}

/// y_n = act(c * q K^T + p * q P^T) V with optional L2 normalization of the
/// embedded query/key/value rows.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const NeighborhoodSpec& spec, const SaParams<T>& p,
                         unsigned threads = 1) {
    const GridDims g = grid_of(x);
    const std::size_t M = spec.context_size();
    detail::check_sa_shapes(p, g, M);

    Tensor<T> qmap = project_rows(x, p.e_q);
    Tensor<T> kmap = project_rows(x, p.e_k);
    Tensor<T> vmap = project_rows(x, p.e_v);
    if (p.normalize) {
        l2_normalize_rows(qmap, T(kL2Eps));
        l2_normalize_rows(kmap, T(kL2Eps));
        l2_normalize_rows(vmap, T(kL2Eps));
    }
    const Tensor<T> kctx = unfold(kmap, spec);
    const Tensor<T> vctx = unfold(vmap, spec);

    const std::size_t n = g.positions(), c = g.channels;
    Tensor<T> y({g.batch, g.time, g.height, g.width, c});
    parallel_chunks(g.batch * n, threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<T> kappa(M);
        for (std::size_t i = lo; i < hi; ++i) {
            detail::sa_kernel_row(p, qmap.data() + i * c, kctx.data() + i * M * c, M, c,
                                  kappa.data());
            const T* vrows = vctx.data() + i * M * c;
            T* out = y.data() + i * c;
            for (std::size_t m = 0; m < M; ++m) {
                const T km = kappa[m];
                const T* vrow = vrows + m * c;
                for (std::size_t j = 0; j < c; ++j) out[j] += km * vrow[j];
            }
        }
    });
    return y;
}

/// y_n = x_n P^T X_n; the kernel is generated from the raw target feature.
template <typename T>
Tensor<T> involution(const Tensor<T>& x, const NeighborhoodSpec& spec,
                     const InvolutionParams<T>& p, unsigned threads = 1) {
    const GridDims g = grid_of(x);
    const std::size_t M = spec.context_size(), c = g.channels;
    if (p.p.rank() != 2 || p.p.dim(0) != M || p.p.dim(1) != c)
        throw std::invalid_argument("involution: kernel table must be [M, C]");
    const Tensor<T> ctx = unfold(x, spec);

    const std::size_t n = g.positions();
    Tensor<T> y({g.batch, g.time, g.height, g.width, c});
    parallel_chunks(g.batch * n, threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<T> kappa(M);
        for (std::size_t i = lo; i < hi; ++i) {
            const T* xn = x.data() + i * c;
            for (std::size_t m = 0; m < M; ++m) {
                const T* prow = p.p.data() + m * c;
                T acc = T(0);
                for (std::size_t j = 0; j < c; ++j) acc += xn[j] * prow[j];
                kappa[m] = acc;
            }
            const T* vrows = ctx.data() + i * M * c;
            T* out = y.data() + i * c;
            for (std::size_t m = 0; m < M; ++m) {
                const T km = kappa[m];
                const T* vrow = vrows + m * c;
                for (std::size_t j = 0; j < c; ++j) out[j] += km * vrow[j];
            }
        }
    });
    return y;
}

/// y_n = x_n^Q P^T X_n^V, i.e. involution over embedded query and value.
template <typename T>
Tensor<T> lambda_conv(const Tensor<T>& x, const NeighborhoodSpec& spec, const LambdaParams<T>& p,
                      unsigned threads = 1) {
    const GridDims g = grid_of(x);
    const std::size_t M = spec.context_size(), c = g.channels;
    if (p.e_q.rank() != 2 || p.e_q.dim(0) != c || p.e_q.dim(1) != c || p.e_v.rank() != 2 ||
        p.e_v.dim(0) != c || p.e_v.dim(1) != c)
        throw std::invalid_argument("lambda_conv: embeddings must be [C, C]");
    if (p.p.rank() != 2 || p.p.dim(0) != M || p.p.dim(1) != c)
        throw std::invalid_argument("lambda_conv: position table must be [M, C]");

    Tensor<T> qmap = project_rows(x, p.e_q);
    Tensor<T> vmap = project_rows(x, p.e_v);
    const Tensor<T> vctx = unfold(vmap, spec);

    const std::size_t n = g.positions();
    Tensor<T> y({g.batch, g.time, g.height, g.width, c});
    parallel_chunks(g.batch * n, threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<T> kappa(M);
        for (std::size_t i = lo; i < hi; ++i) {
            const T* q = qmap.data() + i * c;
            for (std::size_t m = 0; m < M; ++m) {
                const T* prow = p.p.data() + m * c;
                T acc = T(0);
                for (std::size_t j = 0; j < c; ++j) acc += q[j] * prow[j];
                kappa[m] = acc;
            }
            const T* vrows = vctx.data() + i * M * c;
            T* out = y.data() + i * c;
            for (std::size_t m = 0; m < M; ++m) {
                const T km = kappa[m];
                const T* vrow = vrows + m * c;
                for (std::size_t j = 0; j < c; ++j) out[j] += km * vrow[j];
            }
        }
    });
    return y;
}

}  // namespace rsalab
