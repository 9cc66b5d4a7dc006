#pragma once

#include "rsalab/rsa.hpp"

namespace rsalab {

/// r(H1): view H1 [M*G, D] as [M, G, D]. The reshape is a pure reindex,
/// m-major, matching the vec() order of the correlation.
template <typename T>
inline const T* reshaped_h1_row(const RsaParams<T>& p, std::size_t m, std::size_t group) {
    return p.h1.data() + (m * p.corr_groups + group) * p.latent();
}

/// Order-switched relational kernel:
///   A = K (*) r(H1), A[c,d] = sum_m K[m,c] * r(H1)[m, group(c), d]
///   kappa^R = (q A) H2^T
/// Value-equal to the literal vec(corr) H path.
template <typename T>
std::vector<T> kernel_fast(std::span<const T> q, const MatView<T>& keys, const RsaParams<T>& p) {
    const std::size_t m = p.context_size(), d = p.latent(), cq = p.query_channels();
    if (q.size() != cq || keys.rows != m || keys.cols != cq)
        throw std::invalid_argument("kernel_fast: shape mismatch");
    const std::size_t width = p.group_width();

    std::vector<T> a(cq * d, T(0));
    for (std::size_t mm = 0; mm < m; ++mm) {
        const T* krow = keys.row(mm);
        for (std::size_t c = 0; c < cq; ++c) {
            const T kv = krow[c];
            const T* h1row = reshaped_h1_row(p, mm, c / width);
            T* arow = a.data() + c * d;
            for (std::size_t k = 0; k < d; ++k) arow[k] += kv * h1row[k];
        }
    }
    std::vector<T> t(d, T(0));
    for (std::size_t c = 0; c < cq; ++c) {
        const T qc = q[c];
        const T* arow = a.data() + c * d;
        for (std::size_t k = 0; k < d; ++k) t[k] += qc * arow[k];
    }
    std::vector<T> kappa(m, T(0));
    for (std::size_t mm = 0; mm < m; ++mm) {
        const T* h2row = p.h2.data() + mm * d;
        T acc = T(0);
        for (std::size_t k = 0; k < d; ++k) acc += t[k] * h2row[k];
        kappa[mm] = acc;
    }
    return kappa;
}

/// Factorized forward pass:
///   y = q (P1^T + K (*) r(H1)) (H2^T V) (I + V^T G)
/// Neighbor rows are gathered straight from the embedded maps, so the
/// per-position working set is the three small matrices
/// [Cq,D], [D,Cq], [Cq,Cq] regardless of M.
template <typename T>
Tensor<T> rsa_forward_fast(const Tensor<T>& x, const NeighborhoodSpec& spec,
                           const RsaParams<T>& p, unsigned threads = 1) {
    p.validate();
    const GridDims g = grid_of(x);
    if (g.channels != p.channels())
        throw std::invalid_argument("rsa_forward_fast: channel count mismatch");
    if (spec.context_size() != p.context_size())
        throw std::invalid_argument("rsa_forward_fast: context size mismatch");
    spec.validate_for_grid(g.time, g.height, g.width);

    Tensor<T> qmap = project_rows(x, p.e_q);
    Tensor<T> kmap = project_rows(x, p.e_k);
    Tensor<T> vmap = project_rows(x, p.e_v);
    const std::size_t n = g.positions(), cq = p.query_channels(), d = p.latent(),
                      width = p.group_width();
    Tensor<T> queries({g.batch, n, p.queries, cq},
                      std::vector<T>(qmap.data(), qmap.data() + qmap.size()));
    if (p.normalize) {
        l2_normalize_rows(queries, T(kL2Eps));
        l2_normalize_rows(kmap, T(kL2Eps));
        l2_normalize_rows(vmap, T(kL2Eps));
    }

    const int rt = spec.m_t / 2, rh = spec.m_h / 2, rw = spec.m_w / 2;
    Tensor<T> y({g.batch, g.time, g.height, g.width, g.channels});

    parallel_chunks(g.batch * n, threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<T> a(cq * d), hv(d * cq), ivg(cq * cq), t(d), u(cq);
        for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t b = i / n, pos = i % n;
            const std::size_t pt = pos / (g.height * g.width);
            const std::size_t ph = (pos / g.width) % g.height;
            const std::size_t pw = pos % g.width;

            std::fill(a.begin(), a.end(), T(0));
            std::fill(hv.begin(), hv.end(), T(0));
            std::fill(ivg.begin(), ivg.end(), T(0));
            std::size_t mm = 0;
            for (int dt = -rt; dt <= rt; ++dt)
                for (int dh = -rh; dh <= rh; ++dh)
                    for (int dw = -rw; dw <= rw; ++dw, ++mm) {
                        const long tt = static_cast<long>(pt) + dt;
                        const long hh = static_cast<long>(ph) + dh;
                        const long ww = static_cast<long>(pw) + dw;
                        if (tt < 0 || tt >= static_cast<long>(g.time) || hh < 0 ||
                            hh >= static_cast<long>(g.height) || ww < 0 ||
                            ww >= static_cast<long>(g.width))
                            continue;  // zero row contributes nothing
                        const std::size_t j =
                            b * n + (static_cast<std::size_t>(tt) * g.height + hh) * g.width + ww;
                        const T* krow = kmap.data() + j * cq;
                        const T* vrow = vmap.data() + j * cq;
                        for (std::size_t c = 0; c < cq; ++c) {
                            const T kv = krow[c];
                            const T* h1row = reshaped_h1_row(p, mm, c / width);
                            T* arow = a.data() + c * d;
                            for (std::size_t k = 0; k < d; ++k) arow[k] += kv * h1row[k];
                        }
                        const T* h2row = p.h2.data() + mm * d;
                        for (std::size_t k = 0; k < d; ++k) {
                            const T h = h2row[k];
                            T* hrow = hv.data() + k * cq;
                            for (std::size_t c = 0; c < cq; ++c) hrow[c] += h * vrow[c];
                        }
                        const T* grow = p.g_ctx.data() + mm * cq;
                        for (std::size_t ci = 0; ci < cq; ++ci) {
                            const T v = vrow[ci];
                            T* irow = ivg.data() + ci * cq;
                            for (std::size_t cj = 0; cj < cq; ++cj) irow[cj] += v * grow[cj];
                        }
                    }
            for (std::size_t c = 0; c < cq; ++c) ivg[c * cq + c] += T(1);

            for (std::size_t l = 0; l < p.queries; ++l) {
                const T* q = queries.data() + (i * p.queries + l) * cq;
                std::fill(t.begin(), t.end(), T(0));
                for (std::size_t c = 0; c < cq; ++c) {
                    const T qc = q[c];
                    const T* arow = a.data() + c * d;
                    for (std::size_t k = 0; k < d; ++k) t[k] += qc * (p.p1(k, c) + arow[k]);
                }
                std::fill(u.begin(), u.end(), T(0));
                for (std::size_t k = 0; k < d; ++k) {
                    const T tk = t[k];
                    const T* hrow = hv.data() + k * cq;
                    for (std::size_t c = 0; c < cq; ++c) u[c] += tk * hrow[c];
                }
                T* out = y.data() + i * g.channels + l * cq;
                for (std::size_t ci = 0; ci < cq; ++ci) {
                    const T uc = u[ci];
                    const T* irow = ivg.data() + ci * cq;
                    for (std::size_t cj = 0; cj < cq; ++cj) out[cj] += uc * irow[cj];
                }
            }
        }
    });
    return y;
}

/// Multi-query entry point: validates L | C, then runs the factorized path,
/// which already shares one key/value context across the L sub-queries and
/// concatenates their outputs in order.
template <typename T>
Tensor<T> multi_query_forward(const Tensor<T>& x, const NeighborhoodSpec& spec,
                              const RsaParams<T>& p, unsigned threads = 1) {
    if (p.queries == 0 || p.channels() % p.queries != 0)
        throw std::invalid_argument("multi_query_forward: query count must divide channels");
    return rsa_forward_fast(x, spec, p, threads);
}

}  // namespace rsalab
