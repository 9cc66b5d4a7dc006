#pragma once

#include <cstdio>
#include <string>

#include <json.hpp>

namespace rsalab {

namespace detail {

inline void dump_17(const nlohmann::json& j, std::string& out, int depth) {
    const std::string pad(2 * std::size_t(depth), ' ');
    const std::string pad_in(2 * std::size_t(depth + 1), ' ');
    switch (j.type()) {
        case nlohmann::json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += "{\n";
            std::size_t i = 0;
            for (auto it = j.begin(); it != j.end(); ++it, ++i) {
                out += pad_in + nlohmann::json(it.key()).dump() + ": ";
                dump_17(it.value(), out, depth + 1);
                if (i + 1 < j.size()) out += ',';
                out += '\n';
            }
            out += pad + "}";
            return;
        }
        case nlohmann::json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            out += "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                out += pad_in;
                dump_17(j[i], out, depth + 1);
                if (i + 1 < j.size()) out += ',';
                out += '\n';
            }
            out += pad + "]";
            return;
        }
        case nlohmann::json::value_t::number_float: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", j.get<double>());
            out += buf;
            return;
        }
        default:
            out += j.dump();
            return;
    }
}

}  // namespace detail

/// Pretty JSON with floats printed to 17 significant digits so every value
/// re-parses to the identical double.
inline std::string dump_json_17(const nlohmann::json& j) {
    std::string out;
    detail::dump_17(j, out, 0);
    out += '\n';
    return out;
}

}  // namespace rsalab
