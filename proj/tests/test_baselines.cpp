#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <vector>

#include "rsalab/baselines.hpp"
#include "rsalab/einsum.hpp"
#include "rsalab/rng.hpp"

using namespace rsalab;

namespace {

Tensor<double> random_map(GridDims g, Rng& rng) {
    Tensor<double> x({g.batch, g.time, g.height, g.width, g.channels});
    fill_normal(x, rng);
    return x;
}

// Transform math on explicit (target, context) pairs, independent of the
// grid machinery. These serve as oracles for the grid-level operators.
std::vector<double> involution_oracle(const std::vector<double>& xn,
                                      const Tensor<double>& p,
                                      const Tensor<double>& ctx) {
    const std::size_t m = ctx.dim(0), c = ctx.dim(1);
    std::vector<double> kappa(m, 0.0), y(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) kappa[i] += xn[j] * p(i, j);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) y[j] += kappa[i] * ctx(i, j);
    return y;
}

std::vector<double> sa_oracle(const std::vector<double>& q, const Tensor<double>& k,
                              const Tensor<double>& v, bool softmaxed) {
    const std::size_t m = k.dim(0), c = k.dim(1);
    std::vector<double> logits(m, 0.0), y(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) logits[i] += q[j] * k(i, j);
    if (softmaxed) softmax_inplace(std::span<double>(logits));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) y[j] += logits[i] * v(i, j);
    return y;
}

}  // namespace

TEST_CASE("convolution") {
    Rng rng(101);
    SECTION("delta kernel reproduces the input") {
        auto x = random_map({1, 3, 4, 4, 3}, rng);
        NeighborhoodSpec spec{3, 3, 3};
        const std::size_t m = spec.context_size(), c = 3, center = (m - 1) / 2;
        ConvParams<double> p{Tensor<double>({m * c, c})};
        for (std::size_t j = 0; j < c; ++j) p.weight(center * c + j, j) = 1.0;
        auto y = convolution(x, spec, p);
        REQUIRE(max_abs_diff(y, x) == 0.0);
    }
    SECTION("difference kernel on a 1d window") {
        // W picks (left neighbor - center); hand contraction oracle.
        Tensor<double> x({1, 1, 1, 4, 1}, {1.0, 5.0, 2.0, 8.0});
        NeighborhoodSpec spec{1, 1, 3};
        ConvParams<double> p{Tensor<double>({3, 1}, {1.0, -1.0, 0.0})};
        auto y = convolution(x, spec, p);
        REQUIRE(y[0] == 0.0 - 1.0);
        REQUIRE(y[1] == 1.0 - 5.0);
        REQUIRE(y[2] == 5.0 - 2.0);
        REQUIRE(y[3] == 2.0 - 8.0);
    }
    SECTION("matches the vec() contraction oracle") {
        auto x = random_map({2, 2, 3, 3, 2}, rng);
        NeighborhoodSpec spec{3, 1, 3};
        const std::size_t m = spec.context_size();
        ConvParams<double> p{Tensor<double>({m * 2, 4})};
        fill_normal(p.weight, rng);
        auto y = convolution(x, spec, p);
        auto ctx = unfold(x, spec);  // [B,N,M,C]
        Tensor<double> flat({2, 18, m * 2}, std::vector<double>(ctx.data(), ctx.data() + ctx.size()));
        auto oracle = contract(flat, p.weight, "bnr,rk->bnk");
        for (std::size_t i = 0; i < y.size(); ++i)
            REQUIRE(y[i] == Catch::Approx(oracle[i]).margin(1e-12));
    }
    SECTION("zero weights, zero output") {
        auto x = random_map({1, 2, 2, 2, 2}, rng);
        ConvParams<double> p{Tensor<double>({27 * 2, 2})};
        auto y = convolution(x, {3, 3, 3}, p);
        for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == 0.0);
    }
    SECTION("superposition: the whole transform is linear") {
        auto x = random_map({1, 2, 3, 3, 2}, rng);
        auto z = random_map({1, 2, 3, 3, 2}, rng);
        NeighborhoodSpec spec{3, 3, 1};
        ConvParams<double> p{Tensor<double>({spec.context_size() * 2, 3})};
        fill_normal(p.weight, rng);
        Tensor<double> mix(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) mix[i] = 2.0 * x[i] - 0.5 * z[i];
        auto ym = convolution(mix, spec, p);
        auto yx = convolution(x, spec, p);
        auto yz = convolution(z, spec, p);
        for (std::size_t i = 0; i < ym.size(); ++i)
            REQUIRE(ym[i] == Catch::Approx(2.0 * yx[i] - 0.5 * yz[i]).margin(1e-12));
    }
    SECTION("shape mismatch rejected") {
        auto x = random_map({1, 2, 2, 2, 2}, rng);
        ConvParams<double> p{Tensor<double>({5, 2})};
        REQUIRE_THROWS_AS(convolution(x, {3, 3, 3}, p), std::invalid_argument);
    }
}

TEST_CASE("self-attention") {
    Rng rng(202);
    SECTION("closed-form softmax aggregation") {
        // q=[1,0], K=I, V=2I: weights softmax([1,0]), y = [2w0, 2w1].
        std::vector<double> q{1.0, 0.0};
        Tensor<double> k({2, 2}, {1.0, 0.0, 0.0, 1.0});
        Tensor<double> v({2, 2}, {2.0, 0.0, 0.0, 2.0});
        auto y = sa_oracle(q, k, v, true);
        REQUIRE(y[0] == Catch::Approx(1.462117).margin(5e-7));
        REQUIRE(y[1] == Catch::Approx(0.537883).margin(5e-7));
        // Swapping the two context rows of K and V leaves y unchanged.
        Tensor<double> k2({2, 2}, {0.0, 1.0, 1.0, 0.0});
        Tensor<double> v2({2, 2}, {0.0, 2.0, 2.0, 0.0});
        auto y2 = sa_oracle(q, k2, v2, true);
        REQUIRE(y2[0] == Catch::Approx(y[0]).margin(1e-15));
        REQUIRE(y2[1] == Catch::Approx(y[1]).margin(1e-15));
    }
    SECTION("content-only kernel is invariant to any context permutation") {
        for (int trial = 0; trial < 25; ++trial) {
            const std::size_t m = 2 + rng.next_u64() % 6, c = 1 + rng.next_u64() % 5;
            std::vector<double> q(c);
            for (auto& x : q) x = rng.normal();
            Tensor<double> k({m, c}), v({m, c});
            fill_normal(k, rng);
            fill_normal(v, rng);
            auto y = sa_oracle(q, k, v, true);

            std::vector<std::size_t> perm(m);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            for (std::size_t i = m; i > 1; --i)
                std::swap(perm[i - 1], perm[rng.next_u64() % i]);
            Tensor<double> kp({m, c}), vp({m, c});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    kp(i, j) = k(perm[i], j);
                    vp(i, j) = v(perm[i], j);
                }
            auto yp = sa_oracle(q, kp, vp, true);
            for (std::size_t j = 0; j < c; ++j)
                REQUIRE(yp[j] == Catch::Approx(y[j]).margin(1e-12));
        }
    }
    SECTION("grid transform matches the per-position oracle, content-only") {
        auto x = random_map({1, 2, 3, 3, 3}, rng);
        NeighborhoodSpec spec{3, 3, 1};
        SaParams<double> p{Tensor<double>({3, 3}), Tensor<double>({3, 3}), Tensor<double>({3, 3}),
                           Tensor<double>({spec.context_size(), 3})};
        fill_normal(p.e_q, rng);
        fill_normal(p.e_k, rng);
        fill_normal(p.e_v, rng);
        p.use_position = false;
        p.normalize = false;
        auto y = self_attention(x, spec, p);

        auto qmap = project_rows(x, p.e_q);
        auto kctx = unfold(project_rows(x, p.e_k), spec);
        auto vctx = unfold(project_rows(x, p.e_v), spec);
        const std::size_t m = spec.context_size();
        for (std::size_t n = 0; n < 18; ++n) {
            std::vector<double> q(qmap.data() + n * 3, qmap.data() + n * 3 + 3);
            Tensor<double> k({m, 3}, std::vector<double>(kctx.data() + n * m * 3,
                                                         kctx.data() + (n + 1) * m * 3));
            Tensor<double> v({m, 3}, std::vector<double>(vctx.data() + n * m * 3,
                                                         vctx.data() + (n + 1) * m * 3));
            auto want = sa_oracle(q, k, v, true);
            for (std::size_t j = 0; j < 3; ++j)
                REQUIRE(y[n * 3 + j] == Catch::Approx(want[j]).margin(1e-12));
        }
    }
    SECTION("position-only without softmax equals involution under identity embeddings") {
        auto x = random_map({1, 2, 4, 4, 3}, rng);
        NeighborhoodSpec spec{1, 3, 3};
        const std::size_t m = spec.context_size();
        Tensor<double> pos({m, 3});
        fill_normal(pos, rng);
        SaParams<double> p{Tensor<double>::eye(3), Tensor<double>::eye(3), Tensor<double>::eye(3),
                           pos};
        p.use_content = false;
        p.use_softmax = false;
        p.normalize = false;
        auto y_sa = self_attention(x, spec, p);
        auto y_inv = involution(x, spec, InvolutionParams<double>{pos});
        REQUIRE(max_abs_diff(y_sa, y_inv) <= 1e-12);
    }
    SECTION("softmax kernels are positive and sum to one; raw kernels can go negative") {
        auto x = random_map({1, 2, 3, 3, 4}, rng);
        NeighborhoodSpec spec{3, 3, 3};
        const std::size_t m = spec.context_size();
        SaParams<double> p{Tensor<double>({4, 4}), Tensor<double>({4, 4}), Tensor<double>({4, 4}),
                           Tensor<double>({m, 4})};
        fill_normal(p.e_q, rng);
        fill_normal(p.e_k, rng);
        fill_normal(p.e_v, rng);
        fill_normal(p.p, rng);
        auto kern = sa_kernels(x, spec, p);
        for (std::size_t n = 0; n < 18; ++n) {
            double sum = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                REQUIRE(kern(std::size_t{0}, n, i) > 0.0);
                sum += kern(std::size_t{0}, n, i);
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        }
        p.use_softmax = false;
        auto raw = sa_kernels(x, spec, p);
        bool negative = false;
        for (std::size_t i = 0; i < raw.size(); ++i) negative |= raw[i] < 0.0;
        REQUIRE(negative);
    }
    SECTION("position term breaks permutation symmetry") {
        // Flipping the grid permutes each context; with the position term on,
        // outputs at mirrored positions differ for generic inputs.
        auto x = random_map({1, 1, 1, 6, 3}, rng);
        NeighborhoodSpec spec{1, 1, 3};
        SaParams<double> p{Tensor<double>::eye(3), Tensor<double>::eye(3), Tensor<double>::eye(3),
                           Tensor<double>({3, 3})};
        fill_normal(p.p, rng);
        p.normalize = false;
        auto y = self_attention(x, spec, p);

        Tensor<double> flipped(x.shape());
        for (std::size_t w = 0; w < 6; ++w)
            for (std::size_t c = 0; c < 3; ++c) flipped(0, 0, 0, 5 - w, c) = x(0, 0, 0, w, c);
        auto yf = self_attention(flipped, spec, p);
        double gap = 0.0;
        for (std::size_t w = 0; w < 6; ++w)
            for (std::size_t c = 0; c < 3; ++c)
                gap = std::max(gap, std::abs(y(0, 0, 0, w, c) - yf(0, 0, 0, 5 - w, c)));
        REQUIRE(gap > 1e-6);
    }
    SECTION("value path is linear when softmax is off") {
        auto x = random_map({1, 2, 3, 3, 3}, rng);
        NeighborhoodSpec spec{3, 1, 3};
        SaParams<double> base{Tensor<double>({3, 3}), Tensor<double>({3, 3}),
                              Tensor<double>({3, 3}), Tensor<double>({spec.context_size(), 3})};
        fill_normal(base.e_q, rng);
        fill_normal(base.e_k, rng);
        fill_normal(base.p, rng);
        base.use_softmax = false;
        base.normalize = false;
        SaParams<double> pa = base, pb = base, pab = base;
        fill_normal(pa.e_v, rng);
        fill_normal(pb.e_v, rng);
        for (std::size_t i = 0; i < pab.e_v.size(); ++i) pab.e_v[i] = pa.e_v[i] + pb.e_v[i];
        auto ya = self_attention(x, spec, pa);
        auto yb = self_attention(x, spec, pb);
        auto yab = self_attention(x, spec, pab);
        for (std::size_t i = 0; i < yab.size(); ++i)
            REQUIRE(yab[i] == Catch::Approx(ya[i] + yb[i]).margin(1e-12));
    }
    SECTION("rejects both interaction flags off") {
        auto x = random_map({1, 1, 2, 2, 2}, rng);
        SaParams<double> p{Tensor<double>::eye(2), Tensor<double>::eye(2), Tensor<double>::eye(2),
                           Tensor<double>({1, 2})};
        p.use_content = false;
        p.use_position = false;
        REQUIRE_THROWS_AS(self_attention(x, {1, 1, 1}, p), std::invalid_argument);
    }
}

TEST_CASE("involution") {
    Rng rng(303);
    SECTION("hand matrix product") {
        std::vector<double> xn{1.0, 0.0};
        Tensor<double> p({2, 2}, {1.0, 2.0, 3.0, 4.0});
        Tensor<double> ctx({2, 2}, {1.0, 1.0, 2.0, 2.0});
        auto y = involution_oracle(xn, p, ctx);
        REQUIRE(y[0] == 7.0);
        REQUIRE(y[1] == 7.0);
    }
    SECTION("grid transform matches the oracle") {
        auto x = random_map({1, 3, 3, 3, 2}, rng);
        NeighborhoodSpec spec{3, 1, 3};
        const std::size_t m = spec.context_size();
        InvolutionParams<double> p{Tensor<double>({m, 2})};
        fill_normal(p.p, rng);
        auto y = involution(x, spec, p);
        auto ctx = unfold(x, spec);
        for (std::size_t n = 0; n < 27; ++n) {
            std::vector<double> xn(x.data() + n * 2, x.data() + n * 2 + 2);
            Tensor<double> c({m, 2}, std::vector<double>(ctx.data() + n * m * 2,
                                                         ctx.data() + (n + 1) * m * 2));
            auto want = involution_oracle(xn, p.p, c);
            for (std::size_t j = 0; j < 2; ++j)
                REQUIRE(y[n * 2 + j] == Catch::Approx(want[j]).margin(1e-12));
        }
    }
    SECTION("zero kernel table and zero target") {
        auto x = random_map({1, 1, 3, 3, 2}, rng);
        NeighborhoodSpec spec{1, 3, 3};
        InvolutionParams<double> zero{Tensor<double>({9, 2})};
        auto y = involution(x, spec, zero);
        for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == 0.0);

        Tensor<double> xz({1, 1, 3, 3, 2});  // all-zero map: kernel is target-driven
        InvolutionParams<double> p{Tensor<double>({9, 2})};
        fill_normal(p.p, rng);
        auto yz = involution(xz, spec, p);
        for (std::size_t i = 0; i < yz.size(); ++i) REQUIRE(yz[i] == 0.0);
    }
}

TEST_CASE("lambda convolution") {
    Rng rng(404);
    SECTION("identity embeddings reduce to involution") {
        auto x = random_map({1, 2, 3, 3, 3}, rng);
        NeighborhoodSpec spec{1, 3, 3};
        Tensor<double> pos({spec.context_size(), 3});
        fill_normal(pos, rng);
        LambdaParams<double> lp{Tensor<double>::eye(3), Tensor<double>::eye(3), pos};
        auto yl = lambda_conv(x, spec, lp);
        auto yi = involution(x, spec, InvolutionParams<double>{pos});
        REQUIRE(max_abs_diff(yl, yi) <= 1e-12);
    }
    SECTION("zero position table") {
        auto x = random_map({1, 1, 3, 3, 2}, rng);
        LambdaParams<double> lp{Tensor<double>::eye(2), Tensor<double>::eye(2),
                                Tensor<double>({9, 2})};
        auto y = lambda_conv(x, {1, 3, 3}, lp);
        for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == 0.0);
    }
    SECTION("both association orders agree") {
        auto x = random_map({1, 2, 3, 3, 3}, rng);
        NeighborhoodSpec spec{3, 3, 1};
        const std::size_t m = spec.context_size();
        LambdaParams<double> lp{Tensor<double>({3, 3}), Tensor<double>({3, 3}),
                                Tensor<double>({m, 3})};
        fill_normal(lp.e_q, rng);
        fill_normal(lp.e_v, rng);
        fill_normal(lp.p, rng);
        auto y = lambda_conv(x, spec, lp);

        // Other order: lambda_n = P^T X_n^V first, then q lambda_n.
        auto qmap = project_rows(x, lp.e_q);
        auto vctx = unfold(project_rows(x, lp.e_v), spec);
        for (std::size_t n = 0; n < 18; ++n) {
            Tensor<double> lam({3, 3});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t a = 0; a < 3; ++a)
                    for (std::size_t b = 0; b < 3; ++b)
                        lam(a, b) += lp.p(i, a) * vctx(std::size_t{0}, n, i, b);
            for (std::size_t b = 0; b < 3; ++b) {
                double acc = 0.0;
                for (std::size_t a = 0; a < 3; ++a) acc += qmap[n * 3 + a] * lam(a, b);
                REQUIRE(y[n * 3 + b] == Catch::Approx(acc).margin(1e-12));
            }
        }
    }
}
