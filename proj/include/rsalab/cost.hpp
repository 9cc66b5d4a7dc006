#pragma once

#include <cstdint>
#include <string>

#include "rsalab/unfold.hpp"

namespace rsalab {

enum class Impl {
    Reference,
    Efficient,
    EfficientMultiQuery,
    Conv,
    SelfAttention,
    Involution,
    Lambda,
};

inline const char* impl_name(Impl impl) {
    switch (impl) {
        case Impl::Reference: return "reference";
        case Impl::Efficient: return "efficient";
        case Impl::EfficientMultiQuery: return "efficient+multiquery";
        case Impl::Conv: return "conv";
        case Impl::SelfAttention: return "self-attention";
        case Impl::Involution: return "involution";
        case Impl::Lambda: return "lambda";
    }
    return "?";
}

inline bool impl_from_name(const std::string& s, Impl& out) {
    for (Impl impl : {Impl::Reference, Impl::Efficient, Impl::EfficientMultiQuery, Impl::Conv,
                      Impl::SelfAttention, Impl::Involution, Impl::Lambda})
        if (s == impl_name(impl)) {
            out = impl;
            return true;
        }
    return false;
}

/// Problem dimensions for the cost model and the benchmark harness.
/// `context_override` lets counter-only sweeps use a context size that is
/// not a product of odd window extents.
struct Dims {
    std::size_t batch = 1, time = 1, height = 1, width = 1, channels = 1;
    std::size_t queries = 1;  // L
    std::size_t latent = 1;   // D
    std::size_t groups = 1;   // G
    NeighborhoodSpec window{1, 1, 1};
    std::size_t context_override = 0;
    bool normalize = true;

    std::size_t positions() const { return time * height * width; }
    std::size_t context() const {
        return context_override ? context_override : window.context_size();
    }

    void validate(Impl impl) const {
        if (batch == 0 || time == 0 || height == 0 || width == 0 || channels == 0 ||
            queries == 0 || latent == 0 || groups == 0 || context() == 0)
            throw std::invalid_argument("dims: all dimensions must be positive");
        const bool multiquery = impl == Impl::Reference || impl == Impl::EfficientMultiQuery;
        const std::size_t l = multiquery ? queries : 1;
        if (channels % l != 0)
            throw std::invalid_argument("dims: query count must divide channels");
        if ((channels / l) % groups != 0)
            throw std::invalid_argument("dims: correlation groups must divide C_Q");
    }
};

/// Counted work for one forward evaluation. Conventions: one multiply-add
/// counts as 2 FLOPs, a bare add or multiply as 1, exp/div/sqrt as 4 each.
/// Workset is the peak count of live intermediate elements, excluding
/// inputs, outputs, and parameters. Border positions are counted as full
/// windows.
struct CostReport {
    std::uint64_t flops = 0;
    std::uint64_t params = 0;
    std::uint64_t workset = 0;
};

namespace detail {

// 3c + 8 per row: squared norm (2c), sqrt (4), divide (4), scale (c).
inline std::uint64_t norm_flops(std::uint64_t rows, std::uint64_t c) { return rows * (3 * c + 8); }

}  // namespace detail

inline CostReport cost_report(const Dims& dims, Impl impl) {
    dims.validate(impl);
    const std::uint64_t b = dims.batch, n = dims.positions(), m = dims.context(),
                        c = dims.channels, bn = b * n;
    CostReport r;
    switch (impl) {
        case Impl::Reference:
        case Impl::Efficient:
        case Impl::EfficientMultiQuery: {
            const std::uint64_t l =
                (impl == Impl::Efficient) ? 1 : static_cast<std::uint64_t>(dims.queries);
            const std::uint64_t cq = c / l, d = dims.latent, g = dims.groups;
            r.params = c * c + 2 * c * cq + d * cq + m * g * d + m * d + m * cq;

            std::uint64_t f = 2 * bn * c * c + 4 * bn * c * cq;  // embeddings
            if (dims.normalize)
                f += detail::norm_flops(bn * l, cq) + 2 * detail::norm_flops(bn, cq);

            if (impl == Impl::Reference) {
                f += 2 * m * d * cq;      // P = H2 P1
                f += 2 * m * g * m * d;   // H = H1 H2^T
                // per position: gram, X^R, then per sub-query the kernels
                f += bn * (2 * m * m * cq + 2 * m * m * cq);
                f += bn * l * (2 * m * cq          // kappa^V = q P^T
                               + 2 * m * cq        // correlation
                               + 2 * m * m * g     // kappa^R = vec H
                               + m                 // kernel sum
                               + 3 * m * cq);      // (V + X^R) combine + aggregate
                r.workset = bn * c + 2 * bn * m * cq  // query map + unfolded contexts
                            + m * g * m + m * cq      // H and P
                            + m * m + m * cq          // gram and X^R
                            + m * g + 2 * m;          // vec + kernels
            } else {
                f += bn * (4 * m * cq * d    // K (*) r(H1) and H2^T V
                           + 2 * m * cq * cq // V^T G
                           + cq);            // + I
                f += bn * l * (3 * cq * d + 2 * d * cq + 2 * cq * cq);
                r.workset = bn * c + 2 * bn * cq       // embedded maps
                            + 2 * cq * d + cq * cq     // per-position matrices
                            + d + cq;                  // t and u
            }
            r.flops = f;
            break;
        }
        case Impl::Conv: {
            r.flops = bn * 2 * m * c * c;
            r.params = m * c * c;
            r.workset = bn * m * c;
            break;
        }
        case Impl::SelfAttention: {
            // Full variant: content + position + softmax.
            std::uint64_t f = 6 * bn * c * c;
            if (dims.normalize) f += 3 * detail::norm_flops(bn, c);
            f += bn * (2 * m * c + 2 * m * c + 9 * m + 2 * m * c);
            r.flops = f;
            r.params = 3 * c * c + m * c;
            r.workset = 3 * bn * c + 2 * bn * m * c + m;
            break;
        }
        case Impl::Involution: {
            r.flops = bn * 4 * m * c;
            r.params = m * c;
            r.workset = bn * m * c + m;
            break;
        }
        case Impl::Lambda: {
            r.flops = 4 * bn * c * c + bn * 4 * m * c;
            r.params = 2 * c * c + m * c;
            r.workset = 2 * bn * c + bn * m * c + m;
            break;
        }
    }
    return r;
}

}  // namespace rsalab
