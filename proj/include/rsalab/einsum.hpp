#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rsalab/tensor.hpp"

namespace rsalab {

/// Two-operand Einstein summation, e.g. contract(a, b, "mc,cd->md").
/// Output labels must occur in the inputs; labels absent from the output
/// are summed. The loop nest is fixed by label order, so repeated runs
/// produce bitwise identical results.
template <typename T>
Tensor<T> contract(const Tensor<T>& a, const Tensor<T>& b, std::string_view spec) {
    const auto arrow = spec.find("->");
    const auto comma = spec.find(',');
    if (arrow == std::string_view::npos || comma == std::string_view::npos || comma > arrow)
        throw std::invalid_argument("contract: spec must look like \"ab,bc->ac\"");
    const std::string_view la = spec.substr(0, comma);
    const std::string_view lb = spec.substr(comma + 1, arrow - comma - 1);
    const std::string_view lo = spec.substr(arrow + 2);
    if (la.size() != a.rank() || lb.size() != b.rank())
        throw std::invalid_argument("contract: label count does not match tensor rank");

    std::map<char, std::size_t> dims;
    auto bind = [&dims](std::string_view labels, const Tensor<T>& t) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto [it, fresh] = dims.emplace(labels[i], t.dim(i));
            if (!fresh && it->second != t.dim(i))
                throw std::invalid_argument(std::string("contract: dim mismatch on label '") +
                                            labels[i] + "'");
        }
    };
    bind(la, a);
    bind(lb, b);
    for (char label : lo)
        if (!dims.count(label))
            throw std::invalid_argument(std::string("contract: unknown output label '") + label +
                                        "'");

    std::vector<char> sum_labels;
    for (auto& [label, _] : dims)
        if (lo.find(label) == std::string_view::npos) sum_labels.push_back(label);

    std::vector<std::size_t> out_shape;
    for (char label : lo) out_shape.push_back(dims[label]);
    Tensor<T> out(out_shape.empty() ? std::vector<std::size_t>{1} : out_shape);

    // Per-label strides of each operand (repeated labels add up, which
    // makes diagonal specs like "ii,i->i" behave as expected).
    auto strides_for = [](std::string_view labels, const Tensor<T>& t) {
        std::map<char, std::size_t> s;
        std::size_t stride = 1;
        for (std::size_t i = labels.size(); i-- > 0;) {
            s[labels[i]] += stride;
            stride *= t.dim(i);
        }
        return s;
    };
    const auto sa = strides_for(la, a);
    const auto sb = strides_for(lb, b);
    auto stride_in = [](const std::map<char, std::size_t>& s, char label) {
        auto it = s.find(label);
        return it == s.end() ? std::size_t{0} : it->second;
    };

    std::size_t n_sum = 1;
    for (char label : sum_labels) n_sum *= dims[label];

    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t o = 0; o < out.size(); ++o) {
        // Decompose the flat output index into per-label coordinates.
        std::size_t rem = o, base_a = 0, base_b = 0;
        for (std::size_t i = lo.size(); i-- > 0;) {
            const char label = lo[i];
            const std::size_t coord = rem % dims[label];
            rem /= dims[label];
            base_a += coord * stride_in(sa, label);
            base_b += coord * stride_in(sb, label);
        }
        T acc = T(0);
        for (std::size_t s = 0; s < n_sum; ++s) {
            std::size_t r = s, off_a = base_a, off_b = base_b;
            for (std::size_t i = sum_labels.size(); i-- > 0;) {
                const char label = sum_labels[i];
                const std::size_t coord = r % dims[label];
                r /= dims[label];
                off_a += coord * stride_in(sa, label);
                off_b += coord * stride_in(sb, label);
            }
            acc += pa[off_a] * pb[off_b];
        }
        out[o] = acc;
    }
    return out;
}

}  // namespace rsalab
