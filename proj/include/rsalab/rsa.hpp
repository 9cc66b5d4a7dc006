#pragma once

#include <array>
#include <vector>

#include "rsalab/ops.hpp"
#include "rsalab/rng.hpp"
#include "rsalab/threading.hpp"
#include "rsalab/unfold.hpp"

namespace rsalab {

/// Learnable state of the relational transform. The kernel projection H and
/// the position table P exist only in factorized form (H = H1 H2^T,
/// P = H2 P1); the literal path multiplies the factors out on demand, so the
/// reference and factorized evaluations agree by construction.
///
/// Multi-query layout: the query embedding is [C, C] and its output is split
/// into L contiguous sub-queries of C_Q = C/L channels; key and value
/// embeddings map straight to C_Q channels and are shared by all sub-queries.
template <typename T>
struct RsaParams {
    Tensor<T> e_q;    // [C, C]
    Tensor<T> e_k;    // [C, Cq]
    Tensor<T> e_v;    // [C, Cq]
    Tensor<T> p1;     // [D, Cq]
    Tensor<T> h1;     // [M*G, D]
    Tensor<T> h2;     // [M, D]
    Tensor<T> g_ctx;  // [M, Cq]
    std::size_t queries = 1;      // L
    std::size_t corr_groups = 1;  // G; 1 = dot product, Cq = Hadamard
    bool normalize = true;

    std::size_t channels() const { return e_q.dim(0); }
    std::size_t query_channels() const { return e_k.dim(1); }
    std::size_t latent() const { return h2.dim(1); }
    std::size_t context_size() const { return h2.dim(0); }
    std::size_t group_width() const { return query_channels() / corr_groups; }

    void validate() const {
        const std::size_t c = channels(), cq = query_channels(), d = latent(),
                          m = context_size();
        if (queries == 0 || c % queries != 0)
            throw std::invalid_argument("rsa: query count must divide the channel count");
        if (c / queries != cq)
            throw std::invalid_argument("rsa: key/value embeddings must map to C/L channels");
        if (e_q.rank() != 2 || e_q.dim(1) != c || e_k.dim(0) != c || e_v.dim(0) != c ||
            e_v.dim(1) != cq)
            throw std::invalid_argument("rsa: embedding shape mismatch");
        if (corr_groups == 0 || cq % corr_groups != 0)
            throw std::invalid_argument("rsa: correlation groups must divide C_Q");
        if (h1.rank() != 2 || h1.dim(0) != m * corr_groups || h1.dim(1) != d)
            throw std::invalid_argument("rsa: H1 must be [M*G, D]");
        if (p1.rank() != 2 || p1.dim(0) != d || p1.dim(1) != cq)
            throw std::invalid_argument("rsa: P1 must be [D, Cq]");
        if (g_ctx.rank() != 2 || g_ctx.dim(0) != m || g_ctx.dim(1) != cq)
            throw std::invalid_argument("rsa: G must be [M, Cq]");
    }
};

/// Fan-in-scaled init: normal for the embeddings, uniform(+-1/sqrt(fan_in))
/// for the factor matrices. Deterministic under the supplied generator.
template <typename T>
RsaParams<T> rsa_init(std::size_t channels, std::size_t queries, std::size_t latent,
                      std::size_t corr_groups, const NeighborhoodSpec& spec, bool normalize,
                      Rng& rng) {
    if (queries == 0 || channels % queries != 0)
        throw std::invalid_argument("rsa_init: query count must divide the channel count");
    const std::size_t cq = channels / queries;
    if (corr_groups == 0 || cq % corr_groups != 0)
        throw std::invalid_argument("rsa_init: correlation groups must divide C_Q");
    spec.validate();
    const std::size_t m = spec.context_size();

    RsaParams<T> p;
    p.queries = queries;
    p.corr_groups = corr_groups;
    p.normalize = normalize;
    p.e_q = Tensor<T>({channels, channels});
    p.e_k = Tensor<T>({channels, cq});
    p.e_v = Tensor<T>({channels, cq});
    const double msra = std::sqrt(2.0 / static_cast<double>(channels));
    fill_normal(p.e_q, rng, msra);
    fill_normal(p.e_k, rng, msra);
    fill_normal(p.e_v, rng, msra);
    p.p1 = Tensor<T>({latent, cq});
    fill_uniform(p.p1, rng, -1.0 / std::sqrt(double(cq)), 1.0 / std::sqrt(double(cq)));
    p.h1 = Tensor<T>({m * corr_groups, latent});
    fill_uniform(p.h1, rng, -1.0 / std::sqrt(double(m * corr_groups)),
                 1.0 / std::sqrt(double(m * corr_groups)));
    p.h2 = Tensor<T>({m, latent});
    fill_uniform(p.h2, rng, -1.0 / std::sqrt(double(latent)), 1.0 / std::sqrt(double(latent)));
    p.g_ctx = Tensor<T>({m, cq});
    fill_uniform(p.g_ctx, rng, -1.0 / std::sqrt(double(m)), 1.0 / std::sqrt(double(m)));
    p.validate();
    return p;
}

/// P = H2 P1, shape [M, Cq].
template <typename T>
Tensor<T> materialize_p(const RsaParams<T>& p) {
    const std::size_t m = p.context_size(), d = p.latent(), cq = p.query_channels();
    Tensor<T> out({m, cq});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            const T h = p.h2(i, k);
            for (std::size_t j = 0; j < cq; ++j) out(i, j) += h * p.p1(k, j);
        }
    return out;
}

/// H = H1 H2^T, shape [M*G, M].
template <typename T>
Tensor<T> materialize_h(const RsaParams<T>& p) {
    const std::size_t mg = p.h1.dim(0), m = p.context_size(), d = p.latent();
    Tensor<T> out({mg, m});
    for (std::size_t i = 0; i < mg; ++i) {
        const T* h1row = p.h1.data() + i * d;
        T* orow = out.data() + i * m;
        for (std::size_t k = 0; k < d; ++k) {
            const T v = h1row[k];
            for (std::size_t j = 0; j < m; ++j) orow[j] += v * p.h2(j, k);
        }
    }
    return out;
}

template <typename T>
struct Embedded {
    Tensor<T> queries;  // [B, N, L, Cq]
    Tensor<T> keys;     // [B, N, M, Cq]
    Tensor<T> values;   // [B, N, M, Cq]
};

/// Project the map into queries/keys/values and unfold the shared context.
/// With normalization on, every sub-query row and every key/value row is
/// L2-normalized after embedding.
template <typename T>
Embedded<T> embed(const Tensor<T>& x, const NeighborhoodSpec& spec, const RsaParams<T>& p) {
    p.validate();
    const GridDims g = grid_of(x);
    if (g.channels != p.channels())
        throw std::invalid_argument("embed: channel count mismatch");
    if (spec.context_size() != p.context_size())
        throw std::invalid_argument("embed: context size mismatch");

    Tensor<T> qmap = project_rows(x, p.e_q);  // [B,T,H,W,C]
    Tensor<T> kmap = project_rows(x, p.e_k);
    Tensor<T> vmap = project_rows(x, p.e_v);

    const std::size_t n = g.positions(), cq = p.query_channels();
    Embedded<T> e;
    e.queries = Tensor<T>({g.batch, n, p.queries, cq},
                          std::vector<T>(qmap.data(), qmap.data() + qmap.size()));
    if (p.normalize) {
        l2_normalize_rows(e.queries, T(kL2Eps));  // per sub-query row
        l2_normalize_rows(kmap, T(kL2Eps));
        l2_normalize_rows(vmap, T(kL2Eps));
    }
    e.keys = unfold(kmap, spec);
    e.values = unfold(vmap, spec);
    return e;
}

/// kappa^V = q (H2 P1)^T evaluated through the factors.
template <typename T>
std::vector<T> basic_kernel(std::span<const T> q, const RsaParams<T>& p) {
    const std::size_t m = p.context_size(), d = p.latent(), cq = p.query_channels();
    if (q.size() != cq) throw std::invalid_argument("basic_kernel: query length mismatch");
    std::vector<T> t(d, T(0));
    for (std::size_t k = 0; k < d; ++k)
        for (std::size_t j = 0; j < cq; ++j) t[k] += q[j] * p.p1(k, j);
    std::vector<T> kappa(m, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < d; ++k) kappa[i] += t[k] * p.h2(i, k);
    return kappa;
}

namespace detail {

/// Group-wise query-key correlation, vec()'d m-major then group-minor.
template <typename T>
void correlation_vec(std::span<const T> q, const MatView<T>& keys, std::size_t groups,
                     T* out /* [M*G] */) {
    const std::size_t cq = q.size(), width = cq / groups;
    for (std::size_t m = 0; m < keys.rows; ++m) {
        const T* krow = keys.row(m);
        for (std::size_t g = 0; g < groups; ++g) {
            T acc = T(0);
            for (std::size_t c = g * width; c < (g + 1) * width; ++c) acc += q[c] * krow[c];
            out[m * groups + g] = acc;
        }
    }
}

/// kappa^R = vec(corr) H against a materialized H of shape [M*G, M].
template <typename T>
void relational_kernel_with_h(std::span<const T> q, const MatView<T>& keys,
                              const RsaParams<T>& p, const MatView<T>& h, std::vector<T>& vec,
                              std::vector<T>& kappa) {
    const std::size_t m = p.context_size(), g = p.corr_groups;
    vec.assign(m * g, T(0));
    correlation_vec(q, keys, g, vec.data());
    kappa.assign(m, T(0));
    for (std::size_t i = 0; i < m * g; ++i) {
        const T v = vec[i];
        const T* hrow = h.row(i);
        for (std::size_t j = 0; j < m; ++j) kappa[j] += v * hrow[j];
    }
}

/// X^R = (V V^T) G, written into `out` ([M, Cq], zeroed by the caller).
template <typename T>
void relational_context_into(const MatView<T>& values, const RsaParams<T>& p, Tensor<T>& gram,
                             T* out) {
    const std::size_t m = p.context_size(), cq = p.query_channels();
    gram.fill(T(0));
    for (std::size_t i = 0; i < m; ++i) {
        const T* vi = values.row(i);
        T* grow = gram.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const T* vj = values.row(j);
            T acc = T(0);
            for (std::size_t c = 0; c < cq; ++c) acc += vi[c] * vj[c];
            grow[j] = acc;
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        const T* grow = gram.data() + i * m;
        T* orow = out + i * cq;
        for (std::size_t j = 0; j < m; ++j) {
            const T gij = grow[j];
            const T* prow = p.g_ctx.data() + j * cq;
            for (std::size_t c = 0; c < cq; ++c) orow[c] += gij * prow[c];
        }
    }
}

}  // namespace detail

/// Literal relational kernel for one query/context pair. Materializes H;
/// meant for single evaluations and oracle checks, not for hot loops.
template <typename T>
std::vector<T> relational_kernel(std::span<const T> q, const MatView<T>& keys,
                                 const RsaParams<T>& p) {
    if (q.size() != p.query_channels() || keys.rows != p.context_size() ||
        keys.cols != p.query_channels())
        throw std::invalid_argument("relational_kernel: shape mismatch");
    if (q.size() % p.corr_groups != 0)
        throw std::invalid_argument("relational_kernel: groups must divide C_Q");
    const Tensor<T> h = materialize_h(p);
    std::vector<T> vec, kappa;
    detail::relational_kernel_with_h(q, keys, p, MatView<T>{h.data(), h.dim(0), h.dim(1)}, vec,
                                     kappa);
    return kappa;
}

/// X^R = (V V^T) G for one context.
template <typename T>
Tensor<T> relational_context(const MatView<T>& values, const RsaParams<T>& p) {
    if (values.rows != p.context_size() || values.cols != p.query_channels())
        throw std::invalid_argument("relational_context: shape mismatch");
    const std::size_t m = p.context_size(), cq = p.query_channels();
    Tensor<T> out({m, cq});
    Tensor<T> gram({m, m});
    detail::relational_context_into(values, p, gram, out.data());
    return out;
}

namespace detail {

/// Shared driver for the literal path. `emit` receives, per (b, n, l), the
/// two kernels and the two contexts and writes the C_Q output slice.
template <typename T, typename Emit>
void reference_sweep(const Tensor<T>& x, const NeighborhoodSpec& spec, const RsaParams<T>& p,
                     unsigned threads, Emit&& emit) {
    const GridDims g = grid_of(x);
    const Embedded<T> e = embed(x, spec, p);
    const Tensor<T> h = materialize_h(p);
    const Tensor<T> pos = materialize_p(p);
    const MatView<T> hview{h.data(), h.dim(0), h.dim(1)};

    const std::size_t n = g.positions(), m = p.context_size(), cq = p.query_channels();
    parallel_chunks(g.batch * n, threads, [&](std::size_t lo, std::size_t hi) {
        Tensor<T> gram({m, m});
        std::vector<T> xr(m * cq), vec, kappa_r, kappa_v(m);
        for (std::size_t i = lo; i < hi; ++i) {
            const MatView<T> keys{e.keys.data() + i * m * cq, m, cq};
            const MatView<T> values{e.values.data() + i * m * cq, m, cq};
            std::fill(xr.begin(), xr.end(), T(0));
            relational_context_into(values, p, gram, xr.data());
            for (std::size_t l = 0; l < p.queries; ++l) {
                std::span<const T> q(e.queries.data() + (i * p.queries + l) * cq, cq);
                // kappa^V = q P^T with P multiplied out
                for (std::size_t mm = 0; mm < m; ++mm) {
                    const T* prow = pos.data() + mm * cq;
                    T acc = T(0);
                    for (std::size_t c = 0; c < cq; ++c) acc += q[c] * prow[c];
                    kappa_v[mm] = acc;
                }
                relational_kernel_with_h(q, keys, p, hview, vec, kappa_r);
                emit(i, l, kappa_v, kappa_r, values, xr);
            }
        }
    });
}

}  // namespace detail

/// The literal transform: y = (kappa^V + kappa^R)(X^V + X^R) per position and
/// sub-query, sub-query outputs concatenated channel-wise.
template <typename T>
Tensor<T> rsa_forward_reference(const Tensor<T>& x, const NeighborhoodSpec& spec,
                                const RsaParams<T>& p, unsigned threads = 1) {
    const GridDims g = grid_of(x);
    Tensor<T> y({g.batch, g.time, g.height, g.width, g.channels});
    const std::size_t m = p.context_size(), cq = p.query_channels();
    detail::reference_sweep(x, spec, p, threads,
                            [&](std::size_t i, std::size_t l, const std::vector<T>& kv,
                                const std::vector<T>& kr, const MatView<T>& values,
                                const std::vector<T>& xr) {
                                T* out = y.data() + i * g.channels + l * cq;
                                for (std::size_t mm = 0; mm < m; ++mm) {
                                    const T k = kv[mm] + kr[mm];
                                    const T* vrow = values.row(mm);
                                    const T* xrow = xr.data() + mm * cq;
                                    for (std::size_t c = 0; c < cq; ++c)
                                        out[c] += k * (vrow[c] + xrow[c]);
                                }
                            });
    return y;
}

/// The four summands of the combined transform, in the order
/// kV*XV, kR*XV, kV*XR, kR*XR; their sum equals rsa_forward_reference.
template <typename T>
std::array<Tensor<T>, 4> rsa_subtransforms(const Tensor<T>& x, const NeighborhoodSpec& spec,
                                           const RsaParams<T>& p, unsigned threads = 1) {
    const GridDims g = grid_of(x);
    const std::vector<std::size_t> shape{g.batch, g.time, g.height, g.width, g.channels};
    std::array<Tensor<T>, 4> parts{Tensor<T>(shape), Tensor<T>(shape), Tensor<T>(shape),
                                   Tensor<T>(shape)};
    const std::size_t m = p.context_size(), cq = p.query_channels();
    detail::reference_sweep(
        x, spec, p, threads,
        [&](std::size_t i, std::size_t l, const std::vector<T>& kv, const std::vector<T>& kr,
            const MatView<T>& values, const std::vector<T>& xr) {
            const std::size_t base = i * g.channels + l * cq;
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T* vrow = values.row(mm);
                const T* xrow = xr.data() + mm * cq;
                for (std::size_t c = 0; c < cq; ++c) {
                    parts[0][base + c] += kv[mm] * vrow[c];
                    parts[1][base + c] += kr[mm] * vrow[c];
                    parts[2][base + c] += kv[mm] * xrow[c];
                    parts[3][base + c] += kr[mm] * xrow[c];
                }
            }
        });
    return parts;
}

}  // namespace rsalab
