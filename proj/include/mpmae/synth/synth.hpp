#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mpmae/core/rng.hpp"
#include "mpmae/core/serialize.hpp"
#include "mpmae/core/tensor.hpp"
#include "mpmae/schema/schema.hpp"

namespace mpmae::synth {

struct CorruptDataset : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedVersion : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct WorldConfig {
    std::uint64_t seed = 42;
    int raster_size = 64;
    int world_size = 768;
    int num_latent_fields = 4;
    double smoothness = 9.0;  // gaussian blur sigma, pixels
    int biome_count = 14;
    int ecoregion_count = 16;  // paper-faithful: 846

    double s2_noise = 0.15;
    double s1_noise = 0.10;
    double canopy_noise = 0.05;
    double missing_fraction = 0.02;  // optical pixels marked missing
    double nodata_fraction = 0.01;   // dynamic-world pixels forced to label 0

    void validate() const;
    nlohmann::json to_json() const;
    static WorldConfig from_json(const nlohmann::json& j);
};

// World-level parameters of the cross-modal structure. Drawn once per world
// so the same spectral signature / mixture maps to the same landcover
// everywhere, which is what makes the pretext tasks learnable.
struct WorldMixtures {
    // class-score affine mixtures over the latent fields
    std::vector<float> dw_weights;   // (9, L+1), last column is the bias
    std::vector<float> esa_weights;  // (11, L+1)
    // sentinel-2 per-class signatures and nuisance terms
    std::vector<float> s2_signature;   // (10, 12), row 0 unused (no-data)
    std::vector<float> s2_brightness;  // (12)
    std::vector<float> s2_season_amp;  // (12)
    std::vector<float> s2_season_phase;  // (12)
    std::vector<float> s2_l1c_offset;  // (12)
    // sentinel-1 class embeddings and slope couplings
    std::vector<float> s1_embed;  // (10, 8)
    std::vector<float> s1_slope;  // (8)
};

struct LatentWorld {
    WorldConfig config;
    std::vector<Tensor<float>> fields;  // num_latent_fields smooth (S,S) maps
    Tensor<std::int32_t> biome_map;     // (S,S), labels [0, biome_count)
    Tensor<std::int32_t> ecoregion_map; // (S,S), labels [0, ecoregion_count)
    std::vector<std::int32_t> eco_parent;  // ecoregion -> biome
    std::vector<std::int64_t> eco_area;    // pixel counts
    std::vector<std::int64_t> biome_area;
    WorldMixtures mix;

    std::uint64_t content_hash() const;
};

LatentWorld generate_latent_world(const WorldConfig& config);

// --- stratified allocation ---------------------------------------------------

struct EcoArea {
    std::int64_t area = 0;
    int biome = 0;
};

struct StratumAllocation {
    struct Entry {
        int ecoregion = 0;
        int biome = 0;
        std::int64_t area = 0;
        std::int64_t biome_area = 0;
        std::int64_t count = 0;
    };
    std::vector<Entry> entries;  // ordered by ecoregion id

    std::int64_t total() const;
    std::map<int, std::int64_t> per_biome_totals() const;
};

// N_e = floor((N_t / biome_count) * A_e / A_B), with the per-biome flooring
// residual assigned one-per-ecoregion in descending fractional-part order.
StratumAllocation allocate_stratified(std::int64_t n_total, const std::map<int, EcoArea>& areas,
                                      int biome_count);

// --- rendering ----------------------------------------------------------------

struct RenderTrace {
    Tensor<std::int32_t> dw_argmax;  // mixture argmax before no-data injection
};

// Deterministic given (world, y, x, month, rng seed). Window top-left (y,x).
schema::MultiModalSample render_sample(const LatentWorld& world, int y, int x, int month, Rng& rng,
                                       RenderTrace* trace = nullptr);

// --- dataset container ---------------------------------------------------------

struct SplitRange {
    std::int64_t offset = 0;
    std::int64_t count = 0;
};

struct GenOptions {
    std::int64_t pretrain = 4096;
    std::int64_t train = 512;
    std::int64_t val = 128;
    std::int64_t test = 512;
};

// Generates a full dataset directory (manifest.json, stats.json, *.bin) with
// biome-stratified splits. Returns per-biome counts of the pretrain split.
std::map<int, std::int64_t> generate_dataset(const WorldConfig& config, const GenOptions& gen,
                                             const std::string& out_dir);

class DatasetReader {
public:
    explicit DatasetReader(const std::string& dir);
    ~DatasetReader();
    DatasetReader(const DatasetReader&) = delete;
    DatasetReader& operator=(const DatasetReader&) = delete;

    std::int64_t size() const { return sample_count_; }
    int raster_size() const { return registry_.config.raster_size; }
    const schema::ModalityRegistry& registry() const { return registry_; }
    const std::string& dir() const { return dir_; }
    SplitRange split(const std::string& name) const;
    std::vector<std::string> split_names() const;

    schema::MultiModalSample get(std::int64_t idx) const;
    Tensor<float> read_float(const std::string& record, std::int64_t idx) const;
    Tensor<std::int32_t> read_i32(const std::string& record, std::int64_t idx) const;
    Tensor<std::uint8_t> read_u8(const std::string& record, std::int64_t idx) const;

    schema::BandStats stats() const;  // loads stats.json from the directory

private:
    struct Record;
    const Record& record(const std::string& name) const;

    std::string dir_;
    std::int64_t sample_count_ = 0;
    schema::ModalityRegistry registry_;
    std::map<std::string, SplitRange> splits_;
    std::vector<std::unique_ptr<Record>> records_;
    std::map<std::string, std::size_t> record_index_;
};

// Writes one raw array file (magic, version, dtype, rank, dims, payload).
void write_array_file(const std::string& path, DType dtype, const Shape& shape,
                      const void* data, std::size_t bytes);

// Writes an ad-hoc sample list as a dataset directory (round-trip and
// fixture helper); default split layout is a single "all" split.
void write_dataset(const std::vector<schema::MultiModalSample>& samples,
                   const schema::ModalityRegistry& registry, const std::string& dir,
                   const std::map<std::string, SplitRange>& splits = {});

// Per-band statistics over a split; optical handled per product level with
// missing pixels excluded. Zero-variance bands are floored at 1e-6 with a
// warning recorded on the result.
schema::BandStats compute_band_stats(const DatasetReader& reader, const std::string& split);

}  // namespace mpmae::synth
