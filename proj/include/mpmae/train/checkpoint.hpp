#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "mpmae/model/layers.hpp"
#include "mpmae/train/optimizer.hpp"

namespace mpmae::train {

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Atomic write: temp file in the same directory, then rename.
inline void save_archive_atomic(const TensorArchive& a, const std::string& path) {
    const std::string tmp = path + ".tmp";
    a.save(tmp);
    std::filesystem::rename(tmp, path);
}

template <typename T>
void put_params(TensorArchive& a, const model::ParamRegistry<T>& params) {
    for (const auto& p : params.all()) a.put("param." + p->name, p->value);
}

template <typename T>
void load_params(const TensorArchive& a, model::ParamRegistry<T>& params,
                 const std::string& archive_prefix = "param.", const std::string& select = "") {
    for (const auto& p : params.all()) {
        if (!select.empty() && p->name.rfind(select, 0) != 0) continue;
        const std::string key = archive_prefix + p->name;
        if (!a.contains(key)) throw ShapeMismatch("checkpoint missing tensor '" + key + "'");
        auto t = a.get<T>(key);
        if (t.shape() != p->value.shape())
            throw ShapeMismatch("checkpoint tensor '" + key + "' has shape " + shape_str(t.shape()) +
                                ", expected " + shape_str(p->value.shape()));
        p->value = std::move(t);
    }
}

// Loads only the encoder.* parameters from a pretraining checkpoint into a
// downstream network (classifier or U-Net).
template <typename T>
void load_encoder_from_checkpoint(const std::string& path, model::ParamRegistry<T>& params) {
    auto a = TensorArchive::load(path);
    for (const auto& p : params.all()) {
        if (p->name.rfind("encoder.", 0) != 0 || p->name == "encoder.mask_token") continue;
        const std::string key = "param." + p->name;
        if (!a.contains(key)) throw ShapeMismatch("checkpoint missing tensor '" + key + "'");
        auto t = a.get<T>(key);
        if (t.shape() != p->value.shape())
            throw ShapeMismatch("checkpoint tensor '" + key + "' has shape " + shape_str(t.shape()) +
                                ", expected " + shape_str(p->value.shape()));
        p->value = std::move(t);
    }
}

inline nlohmann::json checkpoint_meta(const std::string& path) {
    auto a = TensorArchive::load(path);
    return nlohmann::json::parse(a.meta);
}

// Byte-level FNV over parameter payloads, in registry order.
template <typename T>
std::uint64_t params_hash(const model::ParamRegistry<T>& params, const std::string& prefix = "") {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& p : params.all()) {
        if (!prefix.empty() && p->name.rfind(prefix, 0) != 0) continue;
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
        for (std::int64_t i = 0; i < p->value.numel() * static_cast<std::int64_t>(sizeof(T)); ++i) {
            h ^= bytes[i];
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

}  // namespace mpmae::train
