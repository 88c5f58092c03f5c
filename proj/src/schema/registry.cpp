#include "mpmae/schema/schema.hpp"

#include <nlohmann/json.hpp>

#include "mpmae/core/rng.hpp"

namespace mpmae::schema {

const ModalitySpec& ModalityRegistry::find(const std::string& name) const {
    for (const auto& m : modalities)
        if (m.name == name) return m;
    throw ConfigError("unknown modality: " + name);
}

bool ModalityRegistry::contains(const std::string& name) const {
    for (const auto& m : modalities)
        if (m.name == name) return true;
    return false;
}

int ModalityRegistry::total_bands() const {
    int n = 0;
    for (const auto& m : modalities) n += m.band_count;
    return n;
}

ModalityRegistry build_modality_registry(const RegistryConfig& config) {
    const int res = config.raster_size;
    ModalityRegistry reg;
    reg.config = config;
    auto pixelc = [&](std::string name, int bands) {
        return ModalitySpec{std::move(name), Level::pixel, Kind::continuous, bands, 0, -1, res, false};
    };
    reg.modalities = {
        pixelc("sentinel2", 12),
        pixelc("sentinel1", 8),
        pixelc("aster", 2),
        pixelc("canopy_height", 2),
        {"dynamic_world", Level::pixel, Kind::categorical, 1, 9, 0, res, false},
        {"esa_worldcover", Level::pixel, Kind::categorical, 1, 11, -1, res, false},
        {"biome", Level::image, Kind::categorical, 1, config.biome_classes, -1, 0, false},
        {"ecoregion", Level::image, Kind::categorical, 1, config.ecoregion_classes, -1, 0, false},
        {"era5_temperature", Level::image, Kind::continuous, 9, 0, -1, 0, false},
        {"era5_precipitation", Level::image, Kind::continuous, 3, 0, -1, 0, false},
        {"geolocation", Level::image, Kind::continuous, 4, 0, -1, 0, true},
        {"date", Level::image, Kind::continuous, 2, 0, -1, 0, true},
    };
    if (reg.total_bands() != 46)
        throw SchemaCorruption("registry band counts sum to " + std::to_string(reg.total_bands()) +
                               ", expected 46");
    return reg;
}

nlohmann::json ModalityRegistry::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["config"] = {{"raster_size", config.raster_size},
                   {"biome_classes", config.biome_classes},
                   {"ecoregion_classes", config.ecoregion_classes}};
    nlohmann::json mods = nlohmann::json::object();
    int order = 0;
    for (const auto& m : modalities) {
        mods[m.name] = {{"order", order++},
                        {"level", m.level == Level::pixel ? "pixel" : "image"},
                        {"kind", m.kind == Kind::continuous ? "continuous" : "categorical"},
                        {"band_count", m.band_count},
                        {"class_count", m.class_count},
                        {"no_data_label", m.no_data_label},
                        {"resolution", m.resolution},
                        {"cyclic", m.cyclic}};
    }
    j["modalities"] = std::move(mods);
    return j;
}

ModalityRegistry ModalityRegistry::from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
        throw ConfigError("registry: unsupported schema_version");
    ModalityRegistry reg;
    reg.config.raster_size = j.at("config").at("raster_size").get<int>();
    reg.config.biome_classes = j.at("config").at("biome_classes").get<int>();
    reg.config.ecoregion_classes = j.at("config").at("ecoregion_classes").get<int>();
    std::vector<std::pair<int, ModalitySpec>> ordered;
    for (const auto& [name, m] : j.at("modalities").items()) {
        ModalitySpec s;
        s.name = name;
        s.level = m.at("level").get<std::string>() == "pixel" ? Level::pixel : Level::image;
        s.kind = m.at("kind").get<std::string>() == "continuous" ? Kind::continuous : Kind::categorical;
        s.band_count = m.at("band_count").get<int>();
        s.class_count = m.at("class_count").get<int>();
        s.no_data_label = m.at("no_data_label").get<int>();
        s.resolution = m.at("resolution").get<int>();
        s.cyclic = m.at("cyclic").get<bool>();
        ordered.emplace_back(m.at("order").get<int>(), std::move(s));
    }
    std::sort(ordered.begin(), ordered.end(), [](auto& a, auto& b) { return a.first < b.first; });
    for (auto& [o, s] : ordered) reg.modalities.push_back(std::move(s));
    return reg;
}

std::uint64_t ModalityRegistry::hash() const { return hash_str(to_json().dump()); }

std::vector<TaskSpec> build_default_tasks(const ModalityRegistry& registry) {
    const auto& dw = registry.find("dynamic_world");
    const auto& esa = registry.find("esa_worldcover");
    const auto& biome = registry.find("biome");
    const auto& eco = registry.find("ecoregion");
    std::vector<TaskSpec> tasks = {
        {"sentinel2", {{"sentinel2", 0, 12}}, LossKind::masked_regression, 12},
        {"sentinel1", {{"sentinel1", 0, 8}}, LossKind::masked_regression, 8},
        {"aster", {{"aster", 0, 2}}, LossKind::masked_regression, 2},
        {"canopy_height", {{"canopy_height", 0, 2}}, LossKind::masked_regression, 2},
        {"dynamic_world", {{"dynamic_world", 0, 1}}, LossKind::masked_classification,
         dw.stored_label_count()},
        {"esa_worldcover", {{"esa_worldcover", 0, 1}}, LossKind::masked_classification,
         esa.stored_label_count()},
        {"biome", {{"biome", 0, 1}}, LossKind::image_classification, biome.class_count},
        {"ecoregion", {{"ecoregion", 0, 1}}, LossKind::image_classification, eco.class_count},
        {"climate", {{"era5_temperature", 0, 9}, {"era5_precipitation", 0, 3}},
         LossKind::image_regression, 12},
        {"latitude", {{"geolocation", 0, 2}}, LossKind::image_regression, 2},
        {"longitude", {{"geolocation", 2, 2}}, LossKind::image_regression, 2},
        {"month", {{"date", 0, 2}}, LossKind::image_regression, 2},
    };
    return tasks;
}

}  // namespace mpmae::schema
