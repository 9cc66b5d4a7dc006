#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsalab/tensor.hpp"

namespace rsalab {

/// Checkpoints are a JSON manifest (tensor name, shape, dtype, byte offset)
/// next to a raw little-endian float blob. Loading validates every shape
/// against the manifest before copying bytes.

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T>* tensor;
};

namespace detail {

template <typename T>
const char* dtype_string() {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor<T>>& tensors,
                     const nlohmann::json& model_meta) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "rsalab-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = detail::dtype_string<T>();
    manifest["byte_order"] = "little";
    manifest["model"] = model_meta;
    manifest["tensors"] = nlohmann::json::array();

    std::ofstream blob(dir / "weights.bin", std::ios::binary);
    if (!blob) throw std::runtime_error("checkpoint: cannot open weights.bin for writing");
    std::uint64_t offset = 0;
    for (const auto& nt : tensors) {
        nlohmann::json entry;
        entry["name"] = nt.name;
        entry["shape"] = nt.tensor->shape();
        entry["dtype"] = detail::dtype_string<T>();
        entry["offset"] = offset;
        manifest["tensors"].push_back(entry);
        const std::uint64_t bytes = nt.tensor->size() * sizeof(T);
        blob.write(reinterpret_cast<const char*>(nt.tensor->data()),
                   static_cast<std::streamsize>(bytes));
        offset += bytes;
    }
    blob.close();

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("checkpoint: cannot open manifest.json for writing");
    mf << manifest.dump(2) << "\n";
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("checkpoint: missing manifest.json in " + dir.string());
    nlohmann::json manifest;
    mf >> manifest;
    if (manifest.value("format", "") != "rsalab-checkpoint")
        throw std::runtime_error("checkpoint: unrecognized manifest format");
    return manifest;
}

template <typename T>
void load_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor<T>>& tensors) {
    const nlohmann::json manifest = read_manifest(dir);
    if (manifest.value("dtype", "") != detail::dtype_string<T>())
        throw std::runtime_error("checkpoint: dtype mismatch");

    std::ifstream blob(dir / "weights.bin", std::ios::binary);
    if (!blob) throw std::runtime_error("checkpoint: missing weights.bin");

    for (const auto& nt : tensors) {
        const nlohmann::json* entry = nullptr;
        for (const auto& e : manifest.at("tensors"))
            if (e.at("name") == nt.name) {
                entry = &e;
                break;
            }
        if (!entry) throw std::runtime_error("checkpoint: tensor '" + nt.name + "' not in manifest");
        const std::vector<std::size_t> shape = entry->at("shape").get<std::vector<std::size_t>>();
        if (shape != nt.tensor->shape())
            throw std::runtime_error("checkpoint: shape mismatch for tensor '" + nt.name + "'");
        blob.seekg(static_cast<std::streamoff>(entry->at("offset").get<std::uint64_t>()));
        blob.read(reinterpret_cast<char*>(nt.tensor->data()),
                  static_cast<std::streamsize>(nt.tensor->size() * sizeof(T)));
        if (!blob) throw std::runtime_error("checkpoint: blob truncated for tensor '" + nt.name + "'");
    }
}

}  // namespace rsalab
