#pragma once

#include "rsalab/cost.hpp"
#include "rsalab/rsa_fast.hpp"

namespace rsalab {

// Dual-path equality suite: the factorized forward must reproduce the
// literal forward on a grid of configurations spanning query counts,
// correlation groups, window sizes, channel widths, and both normalization
// settings.

struct EquivCase {
    std::string id;
    Dims dims;
    std::uint64_t seed = 0;
};

/// Deterministic grid: every value of every axis appears; axes are cycled
/// with different periods so pairings vary. Grid shapes shrink as the window
/// grows to keep the literal path affordable.
inline std::vector<EquivCase> default_equiv_grid(std::size_t cases, std::uint64_t seed) {
    const std::size_t ls[] = {1, 2, 4};
    const NeighborhoodSpec ms[] = {{3, 1, 1}, {3, 3, 3}, {5, 7, 7}};
    const std::size_t cs[] = {8, 16, 64};
    std::vector<EquivCase> grid;
    for (std::size_t i = 0; i < cases; ++i) {
        EquivCase ec;
        ec.seed = seed + i;
        Dims& d = ec.dims;
        d.queries = ls[i % 3];
        d.window = ms[(i / 3) % 3];
        d.channels = cs[(i / 9) % 3];
        const std::size_t cq = d.channels / d.queries;
        const std::size_t gs[] = {1, 2, cq};
        d.groups = gs[(i + 1) % 3];
        while (cq % d.groups != 0) d.groups = d.groups > 1 ? d.groups / 2 : cq;
        const std::size_t dls[] = {1, 2, cq};
        d.latent = dls[(i / 2) % 3];
        d.normalize = i % 2 == 0;
        d.batch = 1 + i % 2;
        if (d.window.m_h >= 7) {
            d.time = 3;
            d.height = d.width = 4;
        } else {
            d.time = 3;
            d.height = d.width = 5;
        }
        ec.id = "case" + std::to_string(i);
        grid.push_back(std::move(ec));
    }
    return grid;
}

struct EquivOutcome {
    double abs_gap = 0.0;
    double rel_gap = 0.0;  // abs gap over max(1, |reference|_inf)
};

template <typename T>
EquivOutcome run_equiv_case(const EquivCase& ec, unsigned threads = 1) {
    const Dims& d = ec.dims;
    d.validate(Impl::Reference);
    Rng rng(ec.seed);
    Tensor<T> x({d.batch, d.time, d.height, d.width, d.channels});
    fill_normal(x, rng);
    auto params = rsa_init<T>(d.channels, d.queries, d.latent, d.groups, d.window, d.normalize,
                              rng);
    const auto ref = rsa_forward_reference(x, d.window, params, threads);
    const auto fast = rsa_forward_fast(x, d.window, params, threads);
    EquivOutcome out;
    out.abs_gap = max_abs_diff(ref, fast);
    double scale = 1.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        scale = std::max(scale, std::abs(static_cast<double>(ref[i])));
    out.rel_gap = out.abs_gap / scale;
    return out;
}

}  // namespace rsalab
