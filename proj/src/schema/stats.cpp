#include <fstream>

#include <nlohmann/json.hpp>

#include "mpmae/schema/schema.hpp"

namespace mpmae::schema {

const std::vector<BandMoments>& BandStats::for_modality(const std::string& name,
                                                        ProductLevel level) const {
    if (name == "sentinel2") {
        auto it = optical.find(product_level_name(level));
        if (it == optical.end())
            throw ConfigError(std::string("stats missing optical product level ") +
                              product_level_name(level));
        return it->second;
    }
    auto it = modality.find(name);
    if (it == modality.end()) throw ConfigError("stats missing modality " + name);
    return it->second;
}

namespace {

nlohmann::json moments_json(const std::vector<BandMoments>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : v) arr.push_back({{"mean", m.mean}, {"std", m.stdev}});
    return arr;
}

std::vector<BandMoments> moments_from(const nlohmann::json& arr) {
    std::vector<BandMoments> v;
    for (const auto& m : arr) v.push_back({m.at("mean").get<double>(), m.at("std").get<double>()});
    return v;
}

}  // namespace

nlohmann::json BandStats::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    nlohmann::json mods = nlohmann::json::object();
    for (const auto& [name, v] : modality) mods[name] = moments_json(v);
    j["modalities"] = std::move(mods);
    nlohmann::json opt = nlohmann::json::object();
    for (const auto& [name, v] : optical) opt[name] = moments_json(v);
    j["optical"] = std::move(opt);
    j["warnings"] = warnings;
    return j;
}

BandStats BandStats::from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
        throw ConfigError("stats: unsupported schema_version");
    BandStats s;
    for (const auto& [name, v] : j.at("modalities").items()) s.modality[name] = moments_from(v);
    for (const auto& [name, v] : j.at("optical").items()) s.optical[name] = moments_from(v);
    if (j.contains("warnings")) s.warnings = j.at("warnings").get<std::vector<std::string>>();
    return s;
}

void BandStats::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << to_json().dump(2) << "\n";
}

BandStats BandStats::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
}

}  // namespace mpmae::schema
