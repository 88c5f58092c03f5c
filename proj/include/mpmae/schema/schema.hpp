#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mpmae/core/tensor.hpp"

namespace mpmae::schema {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SchemaCorruption : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Level { pixel, image };
enum class Kind { continuous, categorical };
enum class ProductLevel : std::uint8_t { L1C = 0, L2A = 1 };

inline const char* product_level_name(ProductLevel p) { return p == ProductLevel::L1C ? "L1C" : "L2A"; }

struct ModalitySpec {
    std::string name;
    Level level = Level::pixel;
    Kind kind = Kind::continuous;
    int band_count = 0;
    int class_count = 0;     // categorical only; 0 = none
    int no_data_label = -1;  // -1 = none; dynamic_world uses 0
    int resolution = 0;      // pixel-level raster side
    bool cyclic = false;     // sin/cos pairs; exempt from standardization

    // stored label values span [0, stored_label_count)
    int stored_label_count() const { return class_count + (no_data_label >= 0 ? 1 : 0); }
};

struct RegistryConfig {
    int raster_size = 64;
    int biome_classes = 14;
    int ecoregion_classes = 16;  // paper-faithful value: 846
};

struct ModalityRegistry {
    RegistryConfig config;
    std::vector<ModalitySpec> modalities;

    const ModalitySpec& find(const std::string& name) const;
    bool contains(const std::string& name) const;
    int total_bands() const;

    nlohmann::json to_json() const;
    static ModalityRegistry from_json(const nlohmann::json& j);
    std::uint64_t hash() const;
};

// Builds the 12-modality registry (46 bands under any config).
ModalityRegistry build_modality_registry(const RegistryConfig& config = {});

// --- pretext tasks ----------------------------------------------------------

enum class LossKind { masked_regression, masked_classification, image_regression, image_classification };

struct TaskTarget {
    std::string modality;
    int band_offset = 0;
    int band_count = 0;
};

struct TaskSpec {
    std::string task_id;
    std::vector<TaskTarget> targets;
    LossKind loss_kind = LossKind::masked_regression;
    int output_channels = 0;

    bool pixel_level() const {
        return loss_kind == LossKind::masked_regression || loss_kind == LossKind::masked_classification;
    }
};

// The default T=12 task list: climate groups the two ERA5 modalities,
// geolocation splits into latitude and longitude.
std::vector<TaskSpec> build_default_tasks(const ModalityRegistry& registry);

// --- samples ----------------------------------------------------------------

struct MultiModalSample {
    std::uint64_t sample_id = 0;
    std::int32_t stratum_id = 0;  // biome
    ProductLevel product_level = ProductLevel::L2A;
    std::uint8_t month = 1;  // 1..12, echoed by the date modality

    std::map<std::string, Tensor<float>> pixel;                // continuous (C,H,W)
    std::map<std::string, Tensor<std::int32_t>> pixel_labels;  // categorical (1,H,W)
    std::map<std::string, std::vector<float>> image;           // continuous vectors
    std::map<std::string, std::int32_t> image_labels;          // categorical scalars
    Tensor<std::uint8_t> optical_valid;                        // (H,W), 1 = usable pixel
};

// sin/cos pair of 2*pi*value/period.
std::pair<double, double> encode_cyclic(double value, double period);

struct ValidationIssue {
    std::string modality;
    std::string message;
};

std::vector<ValidationIssue> validate_sample(const MultiModalSample& sample,
                                             const ModalityRegistry& registry);

// --- band statistics ---------------------------------------------------------

struct BandMoments {
    double mean = 0.0;
    double stdev = 1.0;
};

struct BandStats {
    // per-modality per-band moments; optical keyed separately by product level
    std::map<std::string, std::vector<BandMoments>> modality;
    std::map<std::string, std::vector<BandMoments>> optical;  // "L1C" / "L2A"
    std::vector<std::string> warnings;                        // degenerate-variance notes

    const std::vector<BandMoments>& for_modality(const std::string& name, ProductLevel level) const;

    nlohmann::json to_json() const;
    static BandStats from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static BandStats load(const std::string& path);
};

// (v - mean) / std on continuous non-cyclic bands; categorical and cyclic
// content untouched; missing optical pixels forced to zero afterwards.
MultiModalSample standardize_sample(const MultiModalSample& sample, const BandStats& stats,
                                    const ModalityRegistry& registry);

// Inverse transform for reconstruction dumps.
Tensor<float> destandardize_raster(const Tensor<float>& raster, const std::vector<BandMoments>& moments);

}  // namespace mpmae::schema
