#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rsalab/baselines.hpp"
#include "rsalab/rsa.hpp"

namespace rsalab {

// Reverse-mode gradients, derived on the literal computation graph. Linear
// algebra is re-associated through the factors (never materializing H or the
// M x M self-correlation), which changes rounding but not values.

template <typename T>
struct RsaGradients {
    Tensor<T> e_q, e_k, e_v, p1, h1, h2, g_ctx;
    Tensor<T> input;
};

template <typename T>
struct SaGradients {
    Tensor<T> e_q, e_k, e_v, p;
    Tensor<T> input;
};

template <typename T>
struct InvolutionGradients {
    Tensor<T> p;
    Tensor<T> input;
};

namespace detail {

template <typename T>
void normalize_rows_backward(const Tensor<T>& pre, const Tensor<T>& d_hat, Tensor<T>& d_pre,
                             std::size_t row_len, bool normalize) {
    if (!normalize) {
        for (std::size_t i = 0; i < pre.size(); ++i) d_pre[i] += d_hat[i];
        return;
    }
    const std::size_t rows = pre.size() / row_len;
    for (std::size_t r = 0; r < rows; ++r)
        l2_normalize_backward(std::span<const T>(pre.data() + r * row_len, row_len),
                              std::span<const T>(d_hat.data() + r * row_len, row_len),
                              std::span<T>(d_pre.data() + r * row_len, row_len), T(kL2Eps));
}

/// dW += x^T dY and dX += dY W^T for a row-wise projection Y = X W.
template <typename T>
void projection_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& d_out,
                         Tensor<T>& d_w, Tensor<T>& d_x) {
    const std::size_t c = w.dim(0), k = w.dim(1), rows = x.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * c;
        const T* dr = d_out.data() + r * k;
        T* dxr = d_x.data() + r * c;
        for (std::size_t i = 0; i < c; ++i) {
            const T xi = xr[i];
            const T* wrow = w.data() + i * k;
            T* dwrow = d_w.data() + i * k;
            T acc = T(0);
            for (std::size_t j = 0; j < k; ++j) {
                dwrow[j] += xi * dr[j];
                acc += dr[j] * wrow[j];
            }
            dxr[i] += acc;
        }
    }
}

template <typename T>
struct NeighborWalk {
    const GridDims* g;
    const NeighborhoodSpec* spec;

    /// Visit the in-grid neighbors of flat position `pos`, passing (m, j)
    /// where j is the flat index of the neighbor.
    template <typename F>
    void operator()(std::size_t pos, F&& visit) const {
        const std::size_t hw = g->height * g->width;
        const std::size_t pt = pos / hw, ph = (pos / g->width) % g->height, pw = pos % g->width;
        const int rt = spec->m_t / 2, rh = spec->m_h / 2, rw = spec->m_w / 2;
        std::size_t m = 0;
        for (int dt = -rt; dt <= rt; ++dt)
            for (int dh = -rh; dh <= rh; ++dh)
                for (int dw = -rw; dw <= rw; ++dw, ++m) {
                    const long tt = static_cast<long>(pt) + dt;
                    const long hh = static_cast<long>(ph) + dh;
                    const long ww = static_cast<long>(pw) + dw;
                    if (tt < 0 || tt >= static_cast<long>(g->time) || hh < 0 ||
                        hh >= static_cast<long>(g->height) || ww < 0 ||
                        ww >= static_cast<long>(g->width))
                        continue;
                    visit(m, (static_cast<std::size_t>(tt) * g->height + hh) * g->width + ww);
                }
    }
};

}  // namespace detail

/// Gradient of <upstream, forward(x)> with respect to every parameter and
/// the input, on the literal forward.
template <typename T>
RsaGradients<T> rsa_backward(const Tensor<T>& x, const NeighborhoodSpec& spec,
                             const RsaParams<T>& p, const Tensor<T>& upstream) {
    p.validate();
    const GridDims g = grid_of(x);
    if (!upstream.same_shape(x))
        throw std::invalid_argument("rsa_backward: upstream must match the input shape");
    if (g.channels != p.channels() || spec.context_size() != p.context_size())
        throw std::invalid_argument("rsa_backward: parameter/input mismatch");
    spec.validate_for_grid(g.time, g.height, g.width);

    const std::size_t n = g.positions(), c = g.channels, cq = p.query_channels(),
                      d = p.latent(), m = p.context_size(), gr = p.corr_groups,
                      width = p.group_width(), bn = g.batch * n;

    // Recompute the embedded maps (pre- and post-normalization).
    Tensor<T> qmap_pre = project_rows(x, p.e_q);
    Tensor<T> kmap_pre = project_rows(x, p.e_k);
    Tensor<T> vmap_pre = project_rows(x, p.e_v);
    Tensor<T> qmap = qmap_pre, kmap = kmap_pre, vmap = vmap_pre;
    if (p.normalize) {
        T* ptr = qmap.data();
        for (std::size_t r = 0; r < bn * p.queries; ++r)
            l2_normalize_row(std::span<T>(ptr + r * cq, cq), T(kL2Eps));
        l2_normalize_rows(kmap, T(kL2Eps));
        l2_normalize_rows(vmap, T(kL2Eps));
    }

    RsaGradients<T> out{Tensor<T>(p.e_q.shape()),   Tensor<T>(p.e_k.shape()),
                        Tensor<T>(p.e_v.shape()),   Tensor<T>(p.p1.shape()),
                        Tensor<T>(p.h1.shape()),    Tensor<T>(p.h2.shape()),
                        Tensor<T>(p.g_ctx.shape()), Tensor<T>(x.shape())};
    Tensor<T> d_qmap({bn, c}), d_kmap({bn, cq}), d_vmap({bn, cq});

    detail::NeighborWalk<T> walk{&g, &spec};
    std::vector<T> keys(m * cq), values(m * cq), xr(m * cq), s(m * cq);
    std::vector<T> vg(cq * cq), gv(cq * cq), xv(cq * cq), vx(cq * cq);
    std::vector<T> vec(m * gr), t0(d), t1(d), kappa(m), dkappa(m), s1(d), dvec(m * gr);
    std::vector<T> ds(m * cq), dk_ctx(m * cq), dv_ctx(m * cq), dxr(m * cq);

    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t pos = 0; pos < n; ++pos) {
            const std::size_t i = b * n + pos;
            // Gather contexts.
            std::fill(keys.begin(), keys.end(), T(0));
            std::fill(values.begin(), values.end(), T(0));
            walk(pos, [&](std::size_t mm, std::size_t j) {
                const T* kr = kmap.data() + (b * n + j) * cq;
                const T* vr = vmap.data() + (b * n + j) * cq;
                std::copy(kr, kr + cq, keys.begin() + mm * cq);
                std::copy(vr, vr + cq, values.begin() + mm * cq);
            });

            // X^R = V (V^T G), S = V + X^R.
            std::fill(vg.begin(), vg.end(), T(0));
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T* vr = values.data() + mm * cq;
                const T* gr_row = p.g_ctx.data() + mm * cq;
                for (std::size_t a = 0; a < cq; ++a) {
                    const T va = vr[a];
                    T* row = vg.data() + a * cq;
                    for (std::size_t bb = 0; bb < cq; ++bb) row[bb] += va * gr_row[bb];
                }
            }
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T* vr = values.data() + mm * cq;
                T* xrow = xr.data() + mm * cq;
                T* srow = s.data() + mm * cq;
                for (std::size_t bb = 0; bb < cq; ++bb) {
                    T acc = T(0);
                    for (std::size_t a = 0; a < cq; ++a) acc += vr[a] * vg[a * cq + bb];
                    xrow[bb] = acc;
                    srow[bb] = vr[bb] + acc;
                }
            }

            std::fill(ds.begin(), ds.end(), T(0));
            std::fill(dk_ctx.begin(), dk_ctx.end(), T(0));
            std::fill(dv_ctx.begin(), dv_ctx.end(), T(0));

            for (std::size_t l = 0; l < p.queries; ++l) {
                const T* q = qmap.data() + i * c + l * cq;
                const T* u = upstream.data() + i * c + l * cq;

                // Forward pieces for this sub-query.
                std::fill(vec.begin(), vec.end(), T(0));
                for (std::size_t mm = 0; mm < m; ++mm) {
                    const T* kr = keys.data() + mm * cq;
                    for (std::size_t gg = 0; gg < gr; ++gg) {
                        T acc = T(0);
                        for (std::size_t cc = gg * width; cc < (gg + 1) * width; ++cc)
                            acc += q[cc] * kr[cc];
                        vec[mm * gr + gg] = acc;
                    }
                }
                std::fill(t0.begin(), t0.end(), T(0));
                for (std::size_t k = 0; k < d; ++k)
                    for (std::size_t cc = 0; cc < cq; ++cc) t0[k] += q[cc] * p.p1(k, cc);
                std::fill(t1.begin(), t1.end(), T(0));
                for (std::size_t ii = 0; ii < m * gr; ++ii) {
                    const T v = vec[ii];
                    const T* h1row = p.h1.data() + ii * d;
                    for (std::size_t k = 0; k < d; ++k) t1[k] += v * h1row[k];
                }
                for (std::size_t mm = 0; mm < m; ++mm) {
                    const T* h2row = p.h2.data() + mm * d;
                    T acc = T(0);
                    for (std::size_t k = 0; k < d; ++k) acc += (t0[k] + t1[k]) * h2row[k];
                    kappa[mm] = acc;
                }

                // d kappa and dS.
                for (std::size_t mm = 0; mm < m; ++mm) {
                    const T* srow = s.data() + mm * cq;
                    T acc = T(0);
                    for (std::size_t cc = 0; cc < cq; ++cc) acc += srow[cc] * u[cc];
                    dkappa[mm] = acc;
                    const T km = kappa[mm];
                    T* dsrow = ds.data() + mm * cq;
                    for (std::size_t cc = 0; cc < cq; ++cc) dsrow[cc] += km * u[cc];
                }

                // Through H2: both kernel summands share s1 = dkappa H2.
                std::fill(s1.begin(), s1.end(), T(0));
                for (std::size_t mm = 0; mm < m; ++mm) {
                    const T dk = dkappa[mm];
                    const T* h2row = p.h2.data() + mm * d;
                    T* dh2row = out.h2.data() + mm * d;
                    for (std::size_t k = 0; k < d; ++k) {
                        s1[k] += dk * h2row[k];
                        dh2row[k] += dk * (t0[k] + t1[k]);
                    }
                }
                T* dq = d_qmap.data() + i * c + l * cq;
                for (std::size_t k = 0; k < d; ++k) {
                    const T sk = s1[k];
                    const T* p1row = p.p1.data() + k * cq;
                    T* dp1row = out.p1.data() + k * cq;
                    for (std::size_t cc = 0; cc < cq; ++cc) {
                        dq[cc] += sk * p1row[cc];
                        dp1row[cc] += sk * q[cc];
                    }
                }
                // Through H1 and the correlation.
                for (std::size_t ii = 0; ii < m * gr; ++ii) {
                    const T* h1row = p.h1.data() + ii * d;
                    T* dh1row = out.h1.data() + ii * d;
                    T acc = T(0);
                    for (std::size_t k = 0; k < d; ++k) {
                        acc += s1[k] * h1row[k];
                        dh1row[k] += vec[ii] * s1[k];
                    }
                    dvec[ii] = acc;
                }
                for (std::size_t mm = 0; mm < m; ++mm) {
                    const T* kr = keys.data() + mm * cq;
                    T* dkr = dk_ctx.data() + mm * cq;
                    for (std::size_t gg = 0; gg < gr; ++gg) {
                        const T dv = dvec[mm * gr + gg];
                        for (std::size_t cc = gg * width; cc < (gg + 1) * width; ++cc) {
                            dq[cc] += dv * kr[cc];
                            dkr[cc] += dv * q[cc];
                        }
                    }
                }
            }

            // Context backward: dV += dS; dXR = dS.
            for (std::size_t ii = 0; ii < m * cq; ++ii) {
                dv_ctx[ii] += ds[ii];
                dxr[ii] = ds[ii];
            }
            // dV += dXR (G^T V) + G (dXR^T V); dG += V (V^T dXR).
            std::fill(gv.begin(), gv.end(), T(0));
            std::fill(xv.begin(), xv.end(), T(0));
            std::fill(vx.begin(), vx.end(), T(0));
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T* grow = p.g_ctx.data() + mm * cq;
                const T* vrow = values.data() + mm * cq;
                const T* xrow = dxr.data() + mm * cq;
                for (std::size_t a = 0; a < cq; ++a) {
                    T* gva = gv.data() + a * cq;
                    T* xva = xv.data() + a * cq;
                    T* vxa = vx.data() + a * cq;
                    const T ga = grow[a], xa = xrow[a], va = vrow[a];
                    for (std::size_t bb = 0; bb < cq; ++bb) {
                        gva[bb] += ga * vrow[bb];
                        xva[bb] += xa * vrow[bb];
                        vxa[bb] += va * xrow[bb];
                    }
                }
            }
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T* xrow = dxr.data() + mm * cq;
                const T* grow = p.g_ctx.data() + mm * cq;
                const T* vrow = values.data() + mm * cq;
                T* dvrow = dv_ctx.data() + mm * cq;
                T* dgrow = out.g_ctx.data() + mm * cq;
                for (std::size_t bb = 0; bb < cq; ++bb) {
                    T acc_v = T(0), acc_g = T(0);
                    for (std::size_t a = 0; a < cq; ++a) {
                        acc_v += xrow[a] * gv[a * cq + bb] + grow[a] * xv[a * cq + bb];
                        acc_g += vrow[a] * vx[a * cq + bb];
                    }
                    dvrow[bb] += acc_v;
                    dgrow[bb] += acc_g;
                }
            }

            // Scatter context gradients back to the maps.
            walk(pos, [&](std::size_t mm, std::size_t j) {
                T* dk = d_kmap.data() + (b * n + j) * cq;
                T* dv = d_vmap.data() + (b * n + j) * cq;
                const T* ks = dk_ctx.data() + mm * cq;
                const T* vs = dv_ctx.data() + mm * cq;
                for (std::size_t cc = 0; cc < cq; ++cc) {
                    dk[cc] += ks[cc];
                    dv[cc] += vs[cc];
                }
            });
        }
    }

    // Normalization, then the embeddings.
    Tensor<T> d_qpre({bn, c}), d_kpre({bn, cq}), d_vpre({bn, cq});
    detail::normalize_rows_backward(qmap_pre, d_qmap, d_qpre, cq, p.normalize);
    detail::normalize_rows_backward(kmap_pre, d_kmap, d_kpre, cq, p.normalize);
    detail::normalize_rows_backward(vmap_pre, d_vmap, d_vpre, cq, p.normalize);
    detail::projection_backward(x, p.e_q, d_qpre, out.e_q, out.input);
    detail::projection_backward(x, p.e_k, d_kpre, out.e_k, out.input);
    detail::projection_backward(x, p.e_v, d_vpre, out.e_v, out.input);
    return out;
}

/// Gradients for the self-attention baseline, honoring its ablation flags.
template <typename T>
SaGradients<T> sa_backward(const Tensor<T>& x, const NeighborhoodSpec& spec, const SaParams<T>& p,
                           const Tensor<T>& upstream) {
    const GridDims g = grid_of(x);
    const std::size_t m = spec.context_size(), c = g.channels, n = g.positions(),
                      bn = g.batch * n;
    detail::check_sa_shapes(p, g, m);
    if (!upstream.same_shape(x))
        throw std::invalid_argument("sa_backward: upstream must match the input shape");
    spec.validate_for_grid(g.time, g.height, g.width);

    Tensor<T> qmap_pre = project_rows(x, p.e_q);
    Tensor<T> kmap_pre = project_rows(x, p.e_k);
    Tensor<T> vmap_pre = project_rows(x, p.e_v);
    Tensor<T> qmap = qmap_pre, kmap = kmap_pre, vmap = vmap_pre;
    if (p.normalize) {
        l2_normalize_rows(qmap, T(kL2Eps));
        l2_normalize_rows(kmap, T(kL2Eps));
        l2_normalize_rows(vmap, T(kL2Eps));
    }

    SaGradients<T> out{Tensor<T>(p.e_q.shape()), Tensor<T>(p.e_k.shape()),
                       Tensor<T>(p.e_v.shape()), Tensor<T>(p.p.shape()), Tensor<T>(x.shape())};
    Tensor<T> d_qmap({bn, c}), d_kmap({bn, c}), d_vmap({bn, c});

    detail::NeighborWalk<T> walk{&g, &spec};
    std::vector<T> keys(m * c), values(m * c), z(m), a(m), da(m), dz(m);

    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t pos = 0; pos < n; ++pos) {
            const std::size_t i = b * n + pos;
            std::fill(keys.begin(), keys.end(), T(0));
            std::fill(values.begin(), values.end(), T(0));
            walk(pos, [&](std::size_t mm, std::size_t j) {
                const T* kr = kmap.data() + (b * n + j) * c;
                const T* vr = vmap.data() + (b * n + j) * c;
                std::copy(kr, kr + c, keys.begin() + mm * c);
                std::copy(vr, vr + c, values.begin() + mm * c);
            });

            const T* q = qmap.data() + i * c;
            detail::sa_kernel_row(p, q, keys.data(), m, c, z.data());
            std::copy(z.begin(), z.end(), a.begin());  // already softmaxed if enabled

            const T* u = upstream.data() + i * c;
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T* vr = values.data() + mm * c;
                T acc = T(0);
                for (std::size_t cc = 0; cc < c; ++cc) acc += vr[cc] * u[cc];
                da[mm] = acc;
            }
            if (p.use_softmax) {
                T dot = T(0);
                for (std::size_t mm = 0; mm < m; ++mm) dot += a[mm] * da[mm];
                for (std::size_t mm = 0; mm < m; ++mm) dz[mm] = a[mm] * (da[mm] - dot);
            } else {
                std::copy(da.begin(), da.end(), dz.begin());
            }

            T* dq = d_qmap.data() + i * c;
            std::vector<T> dv_ctx(m * c), dk_ctx(m * c);
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T am = a[mm], dzm = dz[mm];
                T* dvr = dv_ctx.data() + mm * c;
                for (std::size_t cc = 0; cc < c; ++cc) dvr[cc] += am * u[cc];
                if (p.use_content) {
                    const T* kr = keys.data() + mm * c;
                    T* dkr = dk_ctx.data() + mm * c;
                    for (std::size_t cc = 0; cc < c; ++cc) {
                        dq[cc] += dzm * kr[cc];
                        dkr[cc] += dzm * q[cc];
                    }
                }
                if (p.use_position) {
                    const T* prow = p.p.data() + mm * c;
                    T* dprow = out.p.data() + mm * c;
                    for (std::size_t cc = 0; cc < c; ++cc) {
                        dq[cc] += dzm * prow[cc];
                        dprow[cc] += dzm * q[cc];
                    }
                }
            }
            walk(pos, [&](std::size_t mm, std::size_t j) {
                T* dk = d_kmap.data() + (b * n + j) * c;
                T* dv = d_vmap.data() + (b * n + j) * c;
                for (std::size_t cc = 0; cc < c; ++cc) {
                    dk[cc] += dk_ctx[mm * c + cc];
                    dv[cc] += dv_ctx[mm * c + cc];
                }
            });
        }

    Tensor<T> d_qpre({bn, c}), d_kpre({bn, c}), d_vpre({bn, c});
    detail::normalize_rows_backward(qmap_pre, d_qmap, d_qpre, c, p.normalize);
    detail::normalize_rows_backward(kmap_pre, d_kmap, d_kpre, c, p.normalize);
    detail::normalize_rows_backward(vmap_pre, d_vmap, d_vpre, c, p.normalize);
    detail::projection_backward(x, p.e_q, d_qpre, out.e_q, out.input);
    detail::projection_backward(x, p.e_k, d_kpre, out.e_k, out.input);
    detail::projection_backward(x, p.e_v, d_vpre, out.e_v, out.input);
    return out;
}

template <typename T>
InvolutionGradients<T> involution_backward(const Tensor<T>& x, const NeighborhoodSpec& spec,
                                           const InvolutionParams<T>& p,
                                           const Tensor<T>& upstream) {
    const GridDims g = grid_of(x);
    const std::size_t m = spec.context_size(), c = g.channels, n = g.positions();
    if (p.p.rank() != 2 || p.p.dim(0) != m || p.p.dim(1) != c)
        throw std::invalid_argument("involution_backward: kernel table must be [M, C]");
    if (!upstream.same_shape(x))
        throw std::invalid_argument("involution_backward: upstream must match the input shape");
    spec.validate_for_grid(g.time, g.height, g.width);

    InvolutionGradients<T> out{Tensor<T>(p.p.shape()), Tensor<T>(x.shape())};
    detail::NeighborWalk<T> walk{&g, &spec};
    std::vector<T> ctx(m * c), kappa(m), dkappa(m);

    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t pos = 0; pos < n; ++pos) {
            const std::size_t i = b * n + pos;
            std::fill(ctx.begin(), ctx.end(), T(0));
            walk(pos, [&](std::size_t mm, std::size_t j) {
                const T* xr = x.data() + (b * n + j) * c;
                std::copy(xr, xr + c, ctx.begin() + mm * c);
            });
            const T* xn = x.data() + i * c;
            const T* u = upstream.data() + i * c;
            T* dxn = out.input.data() + i * c;
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T* prow = p.p.data() + mm * c;
                const T* cr = ctx.data() + mm * c;
                T k = T(0), dk = T(0);
                for (std::size_t cc = 0; cc < c; ++cc) {
                    k += xn[cc] * prow[cc];
                    dk += cr[cc] * u[cc];
                }
                kappa[mm] = k;
                dkappa[mm] = dk;
            }
            for (std::size_t mm = 0; mm < m; ++mm) {
                const T dk = dkappa[mm];
                const T* prow = p.p.data() + mm * c;
                T* dprow = out.p.data() + mm * c;
                for (std::size_t cc = 0; cc < c; ++cc) {
                    dprow[cc] += dk * xn[cc];
                    dxn[cc] += dk * prow[cc];
                }
            }
            walk(pos, [&](std::size_t mm, std::size_t j) {
                T* dx = out.input.data() + (b * n + j) * c;
                const T km = kappa[mm];
                for (std::size_t cc = 0; cc < c; ++cc) dx[cc] += km * u[cc];
            });
        }
    return out;
}

// ---------------------------------------------------------------------------
// Central-difference verification.

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t coords = 0;
};

struct GradReport {
    double eps = 0.0;
    std::vector<GradCheckEntry> entries;
    double worst_rel_err() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }
};

template <typename T>
struct GradCheckItem {
    std::string name;
    Tensor<T>* value;
    const Tensor<T>* analytic;
};

/// Compare analytic gradients against (f(x+eps e) - f(x-eps e)) / 2 eps on a
/// seeded coordinate subsample (all coordinates when a parameter is small).
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
template <typename T, typename Fn>
GradReport finite_diff_check(Fn&& f, std::vector<GradCheckItem<T>>& items, double eps,
                             std::uint64_t seed, std::size_t min_coords = 64) {
    if (eps < 1e-7 || eps > 1e-3)
        throw std::invalid_argument("finite_diff_check: eps must lie in [1e-7, 1e-3]");
    Rng rng(seed);
    GradReport report;
    report.eps = eps;
    for (auto& item : items) {
        GradCheckEntry entry;
        entry.name = item.name;
        Tensor<T>& theta = *item.value;
        const std::size_t total = theta.size();
        std::vector<std::size_t> coords(total);
        for (std::size_t i = 0; i < total; ++i) coords[i] = i;
        if (total > min_coords) {
            for (std::size_t i = 0; i < min_coords; ++i) {
                const std::size_t j = i + rng.next_u64() % (total - i);
                std::swap(coords[i], coords[j]);
            }
            coords.resize(min_coords);
        }
        for (std::size_t idx : coords) {
            const T saved = theta[idx];
            theta[idx] = saved + static_cast<T>(eps);
            const double fp = f();
            theta[idx] = saved - static_cast<T>(eps);
            const double fm = f();
            theta[idx] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("finite_diff_check: non-finite forward value");
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = static_cast<double>((*item.analytic)[idx]);
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double abs_err = std::abs(analytic - numeric);
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            entry.max_rel_err = std::max(entry.max_rel_err, abs_err / denom);
        }
        entry.coords = coords.size();
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace rsalab
