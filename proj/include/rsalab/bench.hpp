#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <new>
#include <ostream>
#include <sstream>
#include <vector>

#include "rsalab/baselines.hpp"
#include "rsalab/cost.hpp"
#include "rsalab/rsa_fast.hpp"

namespace rsalab {

struct BenchConfig {
    std::string id;
    Dims dims;
    Impl impl = Impl::Reference;
};

struct BenchResult {
    std::string config_id;
    Impl impl = Impl::Reference;
    double median_ns = 0.0;
    double mad_ns = 0.0;
    int repeats = 0;
    std::string dtype;
    std::uint64_t flops = 0, params = 0, workset = 0;
    bool skipped = false;
    std::string skip_reason;
};

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size();
    return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

inline double mad_of(const std::vector<double>& v) {
    const double med = median_of(v);
    std::vector<double> dev;
    dev.reserve(v.size());
    for (double x : v) dev.push_back(std::abs(x - med));
    return median_of(dev);
}

/// Rank correlation with average ranks on ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t k = v.size();
        std::vector<std::size_t> order(k);
        for (std::size_t i = 0; i < k; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&v](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(k);
        std::size_t i = 0;
        while (i < k) {
            std::size_t j = i;
            while (j + 1 < k && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0 || vb == 0) return 0.0;
    return cov / std::sqrt(va * vb);
}

/// "3x5x5,5x7x7" -> window specs. Rejects malformed entries.
inline std::vector<NeighborhoodSpec> parse_kernel_sizes(const std::string& text) {
    std::vector<NeighborhoodSpec> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        int mt = 0, mh = 0, mw = 0;
        char x1 = 0, x2 = 0;
        std::stringstream is(item);
        if (!(is >> mt >> x1 >> mh >> x2 >> mw) || x1 != 'x' || x2 != 'x' || !(is >> std::ws).eof())
            throw std::invalid_argument("kernel size must look like 3x5x5: got '" + item + "'");
        NeighborhoodSpec spec{mt, mh, mw};
        spec.validate();
        out.push_back(spec);
    }
    return out;
}

namespace detail {

inline std::uint64_t dims_fingerprint(const Dims& d) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    };
    for (std::uint64_t v : {d.batch, d.time, d.height, d.width, d.channels, d.queries, d.latent,
                            d.groups, static_cast<std::uint64_t>(d.window.m_t),
                            static_cast<std::uint64_t>(d.window.m_h),
                            static_cast<std::uint64_t>(d.window.m_w), d.context_override,
                            static_cast<std::uint64_t>(d.normalize)})
        mix(v);
    return h;
}

template <typename T>
const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace detail

/// Deterministic input for a configuration: a function of the seed and the
/// dimensions only, so every impl sharing a Dims sees identical data.
template <typename T>
Tensor<T> make_bench_input(std::uint64_t seed, const Dims& d) {
    Rng rng(seed ^ detail::dims_fingerprint(d));
    Tensor<T> x({d.batch, d.time, d.height, d.width, d.channels});
    fill_normal(x, rng);
    return x;
}

/// Median-of-repeats wall times for each (dims, impl) pair. Configs whose
/// estimated footprint exceeds `max_bytes` (or whose allocation fails) are
/// reported as skipped, not fatal.
template <typename T>
std::vector<BenchResult> bench_run(const std::vector<BenchConfig>& grid, int repeats, int warmup,
                                   std::uint64_t seed, unsigned threads = 1,
                                   std::uint64_t max_bytes = std::uint64_t{6} << 30) {
    if (repeats < 5) throw std::invalid_argument("bench_run: repeats must be at least 5");
    if (warmup < 0) throw std::invalid_argument("bench_run: warmup must be non-negative");

    std::vector<BenchResult> results;
    for (const auto& cfg : grid) {
        BenchResult res;
        res.config_id = cfg.id;
        res.impl = cfg.impl;
        res.dtype = detail::dtype_name<T>();
        res.repeats = repeats;
        try {
            const CostReport cost = cost_report(cfg.dims, cfg.impl);
            res.flops = cost.flops;
            res.params = cost.params;
            res.workset = cost.workset;
            const std::uint64_t elems = cost.workset + cost.params +
                                        2 * cfg.dims.batch * cfg.dims.positions() *
                                            cfg.dims.channels;
            if (elems * sizeof(T) > max_bytes) {
                res.skipped = true;
                res.skip_reason = "estimated footprint exceeds the memory budget";
                results.push_back(std::move(res));
                continue;
            }

            const Dims& d = cfg.dims;
            const Tensor<T> x = make_bench_input<T>(seed, d);
            Rng prng = Rng(seed).fork(detail::dims_fingerprint(d) ^
                                      static_cast<std::uint64_t>(cfg.impl));
            const std::size_t m = d.context();

            std::function<void()> call;
            RsaParams<T> rsa;
            ConvParams<T> conv;
            SaParams<T> sa;
            InvolutionParams<T> inv;
            LambdaParams<T> lam;
            switch (cfg.impl) {
                case Impl::Reference:
                case Impl::EfficientMultiQuery:
                case Impl::Efficient: {
                    const std::size_t l = cfg.impl == Impl::Efficient ? 1 : d.queries;
                    rsa = rsa_init<T>(d.channels, l, d.latent, d.groups, d.window, d.normalize,
                                      prng);
                    if (cfg.impl == Impl::Reference)
                        call = [&] { rsa_forward_reference(x, d.window, rsa, threads); };
                    else
                        call = [&] { rsa_forward_fast(x, d.window, rsa, threads); };
                    break;
                }
                case Impl::Conv: {
                    conv.weight = Tensor<T>({m * d.channels, d.channels});
                    fill_normal(conv.weight, prng);
                    call = [&] { convolution(x, d.window, conv, threads); };
                    break;
                }
                case Impl::SelfAttention: {
                    sa.e_q = Tensor<T>({d.channels, d.channels});
                    sa.e_k = Tensor<T>({d.channels, d.channels});
                    sa.e_v = Tensor<T>({d.channels, d.channels});
                    sa.p = Tensor<T>({m, d.channels});
                    fill_normal(sa.e_q, prng);
                    fill_normal(sa.e_k, prng);
                    fill_normal(sa.e_v, prng);
                    fill_normal(sa.p, prng);
                    sa.normalize = d.normalize;
                    call = [&] { self_attention(x, d.window, sa, threads); };
                    break;
                }
                case Impl::Involution: {
                    inv.p = Tensor<T>({m, d.channels});
                    fill_normal(inv.p, prng);
                    call = [&] { involution(x, d.window, inv, threads); };
                    break;
                }
                case Impl::Lambda: {
                    lam.e_q = Tensor<T>({d.channels, d.channels});
                    lam.e_v = Tensor<T>({d.channels, d.channels});
                    lam.p = Tensor<T>({m, d.channels});
                    fill_normal(lam.e_q, prng);
                    fill_normal(lam.e_v, prng);
                    fill_normal(lam.p, prng);
                    call = [&] { lambda_conv(x, d.window, lam, threads); };
                    break;
                }
            }

            for (int i = 0; i < warmup; ++i) call();
            std::vector<double> times;
            times.reserve(repeats);
            for (int i = 0; i < repeats; ++i) {
                const auto start = std::chrono::steady_clock::now();
                call();
                const auto stop = std::chrono::steady_clock::now();
                times.push_back(
                    std::chrono::duration<double, std::nano>(stop - start).count());
            }
            res.median_ns = median_of(times);
            res.mad_ns = mad_of(times);
        } catch (const std::bad_alloc&) {
            res.skipped = true;
            res.skip_reason = "allocation failure";
        }
        results.push_back(std::move(res));
    }
    return results;
}

inline constexpr const char* kBenchCsvHeader =
    "config_id,impl,median_ns,mad_ns,repeats,dtype,flops,params,workset";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& results) {
    os << kBenchCsvHeader << "\n";
    for (const auto& r : results) {
        if (r.skipped) continue;
        os << r.config_id << ',' << impl_name(r.impl) << ',' << r.median_ns << ',' << r.mad_ns
           << ',' << r.repeats << ',' << r.dtype << ',' << r.flops << ',' << r.params << ','
           << r.workset << "\n";
    }
}

}  // namespace rsalab
