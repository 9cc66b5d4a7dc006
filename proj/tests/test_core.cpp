#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rsalab/einsum.hpp"
#include "rsalab/ops.hpp"
#include "rsalab/rng.hpp"
#include "rsalab/tensor.hpp"
#include "rsalab/unfold.hpp"

using namespace rsalab;

namespace {

Tensor<double> random_map(GridDims g, Rng& rng) {
    Tensor<double> x({g.batch, g.time, g.height, g.width, g.channels});
    fill_normal(x, rng);
    return x;
}

// Independent oracle: context row m of position (t,h,w) by direct index
// arithmetic, nothing shared with unfold's loop structure.
std::vector<double> context_row_oracle(const Tensor<double>& x, const NeighborhoodSpec& spec,
                                       std::size_t b, std::size_t t, std::size_t h, std::size_t w,
                                       std::size_t m) {
    const GridDims g = grid_of(x);
    const std::size_t mh_mw = static_cast<std::size_t>(spec.m_h) * spec.m_w;
    const int dt = static_cast<int>(m / mh_mw) - spec.m_t / 2;
    const int dh = static_cast<int>((m % mh_mw) / spec.m_w) - spec.m_h / 2;
    const int dw = static_cast<int>(m % spec.m_w) - spec.m_w / 2;
    std::vector<double> row(g.channels, 0.0);
    const long tt = static_cast<long>(t) + dt, hh = static_cast<long>(h) + dh,
               ww = static_cast<long>(w) + dw;
    if (tt >= 0 && tt < static_cast<long>(g.time) && hh >= 0 && hh < static_cast<long>(g.height) &&
        ww >= 0 && ww < static_cast<long>(g.width))
        for (std::size_t c = 0; c < g.channels; ++c)
            row[c] = x(b, static_cast<std::size_t>(tt), static_cast<std::size_t>(hh),
                       static_cast<std::size_t>(ww), c);
    return row;
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor<double> t({2, 3});
    REQUIRE(t.size() == 6);
    t(1, 2) = 5.0;
    REQUIRE(t[5] == 5.0);
    REQUIRE(Tensor<double>::eye(3)(1, 1) == 1.0);
    REQUIRE(Tensor<double>::eye(3)(0, 1) == 0.0);
    REQUIRE_THROWS_AS(Tensor<double>({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("rng is reproducible and platform independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    // First outputs of splitmix64 for seed 0 are fixed by the algorithm.
    Rng zero(0);
    REQUIRE(zero.next_u64() == 0xe220a8397b1dcdafull);
    REQUIRE(zero.next_u64() == 0x6e789e6aa1b965f4ull);

    Rng c(7), d(7);
    for (int i = 0; i < 10; ++i) REQUIRE(c.normal() == d.normal());

    Rng e(1);
    Rng f1 = e.fork(0), f2 = e.fork(1);
    REQUIRE(f1.next_u64() != f2.next_u64());
}

TEST_CASE("softmax") {
    SECTION("symmetry") {
        Tensor<double> v({2}, {0.0, 0.0});
        auto s = softmax(v);
        REQUIRE(s[0] == Catch::Approx(0.5).margin(1e-15));
        REQUIRE(s[1] == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("closed form e/(1+e)") {
        Tensor<double> v({2}, {1.0, 0.0});
        auto s = softmax(v);
        const double e = std::exp(1.0);
        REQUIRE(s[0] == Catch::Approx(e / (1.0 + e)).margin(1e-12));
        REQUIRE(s[1] == Catch::Approx(1.0 / (1.0 + e)).margin(1e-12));
        REQUIRE(s[0] == Catch::Approx(0.731059).margin(5e-7));
    }
    SECTION("large logits do not overflow") {
        Tensor<double> v({2}, {1000.0, 0.0});
        auto s = softmax(v);
        REQUIRE(std::isfinite(s[0]));
        REQUIRE(s[0] == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(s[1] == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("positive, sums to one, shift invariant") {
        Rng rng(11);
        for (int it = 0; it < 50; ++it) {
            const std::size_t m = 1 + rng.next_u64() % 12;
            Tensor<double> v({m});
            fill_normal(v, rng, 3.0);
            auto s = softmax(v);
            double sum = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                REQUIRE(s[i] > 0.0);
                sum += s[i];
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));

            Tensor<double> shifted = v;
            const double k = rng.uniform(-50.0, 50.0);
            for (auto& x : shifted.span()) x += k;
            REQUIRE(max_abs_diff(softmax(shifted), s) <= 1e-12);
        }
    }
}

TEST_CASE("l2 row normalization") {
    SECTION("3-4-5 triangle") {
        Tensor<double> v({1, 2}, {3.0, 4.0});
        l2_normalize_rows(v);
        REQUIRE(v[0] == Catch::Approx(0.6).margin(1e-15));
        REQUIRE(v[1] == Catch::Approx(0.8).margin(1e-15));
    }
    SECTION("zero rows stay zero") {
        Tensor<double> v({1, 2}, {0.0, 0.0});
        l2_normalize_rows(v);
        REQUIRE(v[0] == 0.0);
        REQUIRE(v[1] == 0.0);
    }
    SECTION("eps must be positive") {
        Tensor<double> v({1, 2}, {1.0, 2.0});
        REQUIRE_THROWS_AS(l2_normalize_rows(v, 0.0), std::invalid_argument);
    }
    SECTION("unit norm and idempotence on random rows") {
        Rng rng(5);
        for (int it = 0; it < 100; ++it) {
            const std::size_t c = 1 + rng.next_u64() % 8;
            Tensor<double> v({4, c});
            fill_normal(v, rng);
            l2_normalize_rows(v);
            for (std::size_t r = 0; r < 4; ++r) {
                std::span<const double> row(v.data() + r * c, c);
                const double n = row_l2_norm(row);
                if (n > 0.0) REQUIRE(n == Catch::Approx(1.0).margin(1e-12));
            }
            Tensor<double> twice = v;
            l2_normalize_rows(twice);
            REQUIRE(max_abs_diff(twice, v) <= 1e-12);
        }
    }
}

TEST_CASE("contract") {
    SECTION("matrix times identity") {
        Tensor<double> a({2, 2}, {1.0, 2.0, 3.0, 4.0});
        auto r = contract(a, Tensor<double>::eye(2), "ij,jk->ik");
        REQUIRE(max_abs_diff(r, a) == 0.0);
    }
    SECTION("hand matrix product") {
        Tensor<double> v({2}, {1.0, 0.0});
        Tensor<double> m({2, 2}, {1.0, 2.0, 3.0, 4.0});
        auto r = contract(v, m, "i,ji->j");  // v . m^T
        REQUIRE(r[0] == 1.0);
        REQUIRE(r[1] == 3.0);
    }
    SECTION("zeros annihilate") {
        Tensor<double> a({3, 4});
        Tensor<double> b({4, 2});
        Rng rng(3);
        fill_normal(b, rng);
        auto r = contract(a, b, "ij,jk->ik");
        for (std::size_t i = 0; i < r.size(); ++i) REQUIRE(r[i] == 0.0);
    }
    SECTION("full reduction to scalar") {
        Tensor<double> a({2}, {1.0, 2.0});
        Tensor<double> b({2}, {3.0, 4.0});
        auto r = contract(a, b, "i,i->");
        REQUIRE(r.size() == 1);
        REQUIRE(r[0] == 11.0);
    }
    SECTION("dim mismatch rejected") {
        Tensor<double> a({2, 3});
        Tensor<double> b({4, 2});
        REQUIRE_THROWS_AS(contract(a, b, "ij,jk->ik"), std::invalid_argument);
    }
    SECTION("deterministic across repeated runs") {
        Rng rng(17);
        Tensor<double> a({5, 7}), b({7, 3});
        fill_normal(a, rng);
        fill_normal(b, rng);
        auto r1 = contract(a, b, "ij,jk->ik");
        auto r2 = contract(a, b, "ij,jk->ik");
        REQUIRE(max_abs_diff(r1, r2) == 0.0);
    }
}

TEST_CASE("unfold geometry") {
    SECTION("identity window") {
        Rng rng(1);
        auto x = random_map({2, 2, 3, 3, 4}, rng);
        auto ctx = unfold(x, {1, 1, 1});
        REQUIRE(ctx.shape() == std::vector<std::size_t>{2, 18, 1, 4});
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t n = 0; n < 18; ++n)
                for (std::size_t c = 0; c < 4; ++c)
                    REQUIRE(ctx(b, n, 0, c) == x[(b * 18 + n) * 4 + c]);
    }
    SECTION("constant map, interior and corner counts") {
        const double k = 2.5;
        auto x = Tensor<double>::full({1, 4, 5, 5, 1}, k);
        NeighborhoodSpec spec{3, 3, 3};
        auto ctx = unfold(x, spec);
        // interior position (t=1,h=2,w=2): all 27 rows equal k
        const std::size_t n_int = (1 * 5 + 2) * 5 + 2;
        for (std::size_t m = 0; m < 27; ++m) REQUIRE(ctx(0, n_int, m, 0) == k);
        // corner (0,0,0): 8 in-grid rows, 19 zero rows
        std::size_t nonzero = 0;
        for (std::size_t m = 0; m < 27; ++m)
            if (ctx(0, 0, m, 0) != 0.0) {
                REQUIRE(ctx(0, 0, m, 0) == k);
                ++nonzero;
            }
        REQUIRE(nonzero == 8);
    }
    SECTION("single voxel reaches exactly its window of positions") {
        Tensor<double> x({1, 5, 6, 6, 1});
        x(0, 2, 3, 3, 0) = 1.0;  // interior, window fully inside
        NeighborhoodSpec spec{3, 3, 3};
        auto ctx = unfold(x, spec);
        // Brute-force scan of all (n, m) pairs.
        std::size_t hits = 0;
        for (std::size_t n = 0; n < 5 * 6 * 6; ++n)
            for (std::size_t m = 0; m < 27; ++m)
                if (ctx(0, n, m, 0) != 0.0) ++hits;
        REQUIRE(hits == 27);
    }
    SECTION("rows match the index-enumeration oracle") {
        Rng rng(9);
        auto x = random_map({1, 3, 4, 5, 2}, rng);
        NeighborhoodSpec spec{3, 3, 5};
        auto ctx = unfold(x, spec);
        const std::size_t M = spec.context_size();
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t h = 0; h < 4; ++h)
                for (std::size_t w = 0; w < 5; ++w) {
                    const std::size_t n = (t * 4 + h) * 5 + w;
                    for (std::size_t m = 0; m < M; ++m) {
                        auto row = context_row_oracle(x, spec, 0, t, h, w, m);
                        for (std::size_t c = 0; c < 2; ++c) REQUIRE(ctx(0, n, m, c) == row[c]);
                    }
                }
    }
    SECTION("center row equals the target, exhaustively on small grids") {
        Rng rng(13);
        for (auto [t, h, w] : {std::array<std::size_t, 3>{4, 6, 6}, {1, 1, 1}, {2, 3, 1}}) {
            auto x = random_map({1, t, h, w, 3}, rng);
            for (int mt : {1, 3})
                for (int mh : {1, 3})
                    for (int mw : {1, 3}) {
                        NeighborhoodSpec spec{mt, mh, mw};
                        if (static_cast<std::size_t>(mt) > 2 * t + 1) continue;
                        auto ctx = unfold(x, spec);
                        const std::size_t M = spec.context_size();
                        for (std::size_t n = 0; n < t * h * w; ++n)
                            for (std::size_t c = 0; c < 3; ++c)
                                REQUIRE(ctx(0, n, (M - 1) / 2, c) == x[(n)*3 + c]);
                    }
        }
    }
    SECTION("linearity") {
        Rng rng(21);
        auto x = random_map({1, 2, 3, 3, 2}, rng);
        auto y = random_map({1, 2, 3, 3, 2}, rng);
        const double alpha = 1.5, beta = -0.25;
        Tensor<double> mix({1, 2, 3, 3, 2});
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * x[i] + beta * y[i];
        NeighborhoodSpec spec{3, 3, 3};
        auto cx = unfold(x, spec), cy = unfold(y, spec), cm = unfold(mix, spec);
        for (std::size_t i = 0; i < cm.size(); ++i)
            REQUIRE(cm[i] == alpha * cx[i] + beta * cy[i]);
    }
    SECTION("rejects bad windows") {
        Rng rng(2);
        auto x = random_map({1, 2, 3, 3, 1}, rng);
        REQUIRE_THROWS_AS(unfold(x, {2, 1, 1}), std::invalid_argument);
        REQUIRE_THROWS_AS(unfold(x, {1, 0, 1}), std::invalid_argument);
        REQUIRE_THROWS_AS(unfold(x, {7, 1, 1}), std::invalid_argument);  // 7 > 2*2+1
    }
    SECTION("scatter-add is the adjoint of unfold") {
        // <unfold(x), g> == <x, scatter(g)> for random x, g.
        Rng rng(33);
        auto x = random_map({1, 3, 4, 4, 2}, rng);
        NeighborhoodSpec spec{3, 3, 3};
        auto ctx = unfold(x, spec);
        Tensor<double> gctx(ctx.shape());
        fill_normal(gctx, rng);
        Tensor<double> gx({1, 3, 4, 4, 2});
        unfold_scatter_add(gctx, spec, gx);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < ctx.size(); ++i) lhs += ctx[i] * gctx[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gx[i];
        REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
    }
}
