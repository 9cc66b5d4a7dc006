#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "rsalab/bench.hpp"
#include "rsalab/cost.hpp"

using namespace rsalab;

namespace {

Dims counter_dims(std::size_t m, std::size_t c, std::size_t l, std::size_t d, std::size_t g) {
    Dims dims;
    dims.batch = 1;
    dims.time = 2;
    dims.height = 4;
    dims.width = 4;
    dims.channels = c;
    dims.queries = l;
    dims.latent = d;
    dims.groups = g;
    dims.context_override = m;
    return dims;
}

}  // namespace

TEST_CASE("counter asymptotics") {
    SECTION("reference work is quadratic in the context size") {
        for (std::size_t m : {std::size_t{128}, std::size_t{256}, std::size_t{512}}) {
            const auto lo = cost_report(counter_dims(m, 64, 8, 8, 8), Impl::Reference);
            const auto hi = cost_report(counter_dims(2 * m, 64, 8, 8, 8), Impl::Reference);
            const double ratio = double(hi.flops) / double(lo.flops);
            REQUIRE(ratio == Catch::Approx(4.0).epsilon(0.10));
        }
    }
    SECTION("factorized work is linear in the context size") {
        for (std::size_t m : {std::size_t{128}, std::size_t{256}, std::size_t{512}}) {
            const auto lo = cost_report(counter_dims(m, 64, 1, 64, 1), Impl::Efficient);
            const auto hi = cost_report(counter_dims(2 * m, 64, 1, 64, 1), Impl::Efficient);
            const double ratio = double(hi.flops) / double(lo.flops);
            REQUIRE(ratio == Catch::Approx(2.0).epsilon(0.10));
        }
    }
    SECTION("multi-query reduces the leading term by L^2") {
        const auto one = cost_report(counter_dims(1024, 64, 1, 64, 1), Impl::EfficientMultiQuery);
        const auto eight = cost_report(counter_dims(1024, 64, 8, 8, 8), Impl::EfficientMultiQuery);
        const double ratio = double(eight.flops) / double(one.flops);
        REQUIRE(ratio == Catch::Approx(1.0 / 64.0).epsilon(0.15));
    }
    SECTION("group count does not change factorized FLOPs") {
        const auto g1 = cost_report(counter_dims(245, 64, 8, 8, 1), Impl::EfficientMultiQuery);
        const auto g8 = cost_report(counter_dims(245, 64, 8, 8, 8), Impl::EfficientMultiQuery);
        REQUIRE(g1.flops == g8.flops);
    }
}

TEST_CASE("counter monotonicity") {
    Rng rng(5150);
    for (Impl impl : {Impl::Reference, Impl::Efficient, Impl::EfficientMultiQuery, Impl::Conv,
                      Impl::SelfAttention, Impl::Involution, Impl::Lambda}) {
        for (int trial = 0; trial < 20; ++trial) {
            Dims d = counter_dims(3 + rng.next_u64() % 60, 8 * (1 + rng.next_u64() % 4), 2, 4, 2);
            d.batch = 1 + rng.next_u64() % 3;
            d.time = 1 + rng.next_u64() % 4;
            const auto base = cost_report(d, impl);
            auto bump = [&](auto setter) {
                Dims e = d;
                setter(e);
                const auto up = cost_report(e, impl);
                REQUIRE(up.flops >= base.flops);
                REQUIRE(up.params >= base.params);
                REQUIRE(up.workset >= base.workset);
            };
            bump([](Dims& e) { e.batch += 1; });
            bump([](Dims& e) { e.time += 1; });
            bump([](Dims& e) { e.context_override += 1; });
            bump([](Dims& e) { e.channels *= 2; });
        }
    }
}

TEST_CASE("factorized workset carries no quadratic context term") {
    const auto w1 = cost_report(counter_dims(64, 32, 1, 32, 1), Impl::Efficient).workset;
    const auto w2 = cost_report(counter_dims(128, 32, 1, 32, 1), Impl::Efficient).workset;
    const auto w4 = cost_report(counter_dims(256, 32, 1, 32, 1), Impl::Efficient).workset;
    // Degree fit on (M, 2M, 4M): a quadratic term would make the second
    // difference positive.
    const double second_diff = (double(w4) - double(w2)) - (double(w2) - double(w1));
    REQUIRE(second_diff <= 1e-9);
    // And the stated bound: O(N Cq^2 + M Cq D).
    const Dims d = counter_dims(256, 32, 1, 32, 1);
    const double bound = double(d.positions()) * 32 * 32 + 256.0 * 32 * 32;
    REQUIRE(double(w4) <= 4.0 * bound);

    const auto r1 = cost_report(counter_dims(64, 32, 1, 32, 1), Impl::Reference).workset;
    const auto r2 = cost_report(counter_dims(128, 32, 1, 32, 1), Impl::Reference).workset;
    const auto r4 = cost_report(counter_dims(256, 32, 1, 32, 1), Impl::Reference).workset;
    const double ref_second_diff = (double(r4) - double(r2)) - (double(r2) - double(r1));
    REQUIRE(ref_second_diff > 0.0);  // reference does carry M^2 state
}

TEST_CASE("counter rejects invalid combinations") {
    REQUIRE_THROWS_AS(cost_report(counter_dims(27, 30, 4, 4, 1), Impl::Reference),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(cost_report(counter_dims(27, 32, 4, 4, 3), Impl::Reference),
                      std::invalid_argument);
    Dims zero = counter_dims(27, 16, 2, 4, 2);
    zero.channels = 0;
    REQUIRE_THROWS_AS(cost_report(zero, Impl::Conv), std::invalid_argument);
}

TEST_CASE("spearman") {
    REQUIRE(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == Catch::Approx(1.0));
    REQUIRE(spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == Catch::Approx(-1.0));
    REQUIRE(spearman({1, 2, 3, 4, 5}, {1, 1, 3, 4, 5}) > 0.9);  // ties
    REQUIRE_THROWS_AS(spearman({1.0}, {2.0}), std::invalid_argument);
}

TEST_CASE("kernel size grids parse") {
    auto specs = parse_kernel_sizes("3x3x3,3x5x5,3x7x7,3x9x9,5x7x7,5x9x9");
    REQUIRE(specs.size() == 6);
    REQUIRE(specs[4].m_t == 5);
    REQUIRE(specs[4].m_h == 7);
    REQUIRE(specs[4].m_w == 7);
    REQUIRE_THROWS_AS(parse_kernel_sizes("3x3"), std::invalid_argument);
    REQUIRE_THROWS_AS(parse_kernel_sizes("4x3x3"), std::invalid_argument);
    REQUIRE_THROWS_AS(parse_kernel_sizes("3y3y3"), std::invalid_argument);
}

TEST_CASE("bench harness") {
    Dims d;
    d.batch = 1;
    d.time = 2;
    d.height = 6;
    d.width = 6;
    d.channels = 8;
    d.queries = 2;
    d.latent = 4;
    d.groups = 4;
    d.window = {3, 3, 3};

    SECTION("inputs are a deterministic function of seed and dims") {
        const auto a = make_bench_input<float>(7, d);
        const auto b = make_bench_input<float>(7, d);
        REQUIRE(max_abs_diff(a, b) == 0.0);
        const auto c = make_bench_input<float>(8, d);
        REQUIRE(max_abs_diff(a, c) > 0.0);
    }
    SECTION("runs a small grid and emits the pinned CSV schema") {
        std::vector<BenchConfig> grid{{"a", d, Impl::EfficientMultiQuery},
                                      {"b", d, Impl::Involution}};
        auto results = bench_run<float>(grid, 5, 1, 3);
        REQUIRE(results.size() == 2);
        for (const auto& r : results) {
            REQUIRE_FALSE(r.skipped);
            REQUIRE(r.median_ns > 0.0);
            REQUIRE(r.repeats == 5);
            REQUIRE(r.dtype == "f32");
            REQUIRE(r.flops > 0);
        }
        std::ostringstream os;
        write_bench_csv(os, results);
        const std::string text = os.str();
        REQUIRE(text.substr(0, text.find('\n')) ==
                "config_id,impl,median_ns,mad_ns,repeats,dtype,flops,params,workset");
        REQUIRE(text.find("\nb,involution,") != std::string::npos);
    }
    SECTION("oversized configs are skipped with a reason") {
        std::vector<BenchConfig> grid{{"big", d, Impl::Reference}};
        auto results = bench_run<float>(grid, 5, 0, 3, 1, /*max_bytes=*/64);
        REQUIRE(results.size() == 1);
        REQUIRE(results[0].skipped);
        REQUIRE_FALSE(results[0].skip_reason.empty());
    }
    SECTION("repeats below the floor are rejected") {
        std::vector<BenchConfig> grid{{"a", d, Impl::Involution}};
        REQUIRE_THROWS_AS(bench_run<float>(grid, 4, 0, 3), std::invalid_argument);
    }
    SECTION("factorized path outruns the literal path at a mid-size window") {
        Dims big = d;
        big.time = 2;
        big.height = 7;
        big.width = 7;
        big.channels = 64;
        big.queries = 8;
        big.latent = 8;
        big.groups = 8;
        big.window = {3, 7, 7};
        std::vector<BenchConfig> grid{{"m3x7x7", big, Impl::Reference},
                                      {"m3x7x7", big, Impl::EfficientMultiQuery}};
        auto results = bench_run<float>(grid, 5, 1, 11);
        REQUIRE(results[1].median_ns < results[0].median_ns);
    }
    SECTION("time scales roughly linearly in the batch size") {
        Dims small = d;
        small.batch = 1;
        small.time = 4;
        small.height = 12;
        small.width = 12;
        small.channels = 16;
        small.queries = 1;
        small.latent = 16;
        small.groups = 1;
        small.window = {3, 5, 5};
        Dims doubled = small;
        doubled.batch = 2;
        std::vector<BenchConfig> grid{{"b1", small, Impl::Efficient},
                                      {"b2", doubled, Impl::Efficient}};
        auto results = bench_run<float>(grid, 7, 2, 13);
        const double ratio = results[1].median_ns / results[0].median_ns;
        REQUIRE(ratio > 1.6);
        REQUIRE(ratio < 2.6);
    }
}
