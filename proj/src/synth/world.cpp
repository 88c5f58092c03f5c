#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mpmae/core/parallel.hpp"
#include "mpmae/synth/synth.hpp"

namespace mpmae::synth {

void WorldConfig::validate() const {
    if (raster_size < 16) throw std::invalid_argument("raster_size must be >= 16");
    if (biome_count < 1) throw std::invalid_argument("biome_count must be >= 1");
    if (num_latent_fields < 2) throw std::invalid_argument("need at least 2 latent fields");
    if (world_size < raster_size * 2) throw std::invalid_argument("world too small for windows");
    if (s2_noise < 0 || s1_noise < 0 || canopy_noise < 0)
        throw std::invalid_argument("noise scales must be >= 0");
    if (ecoregion_count < biome_count)
        throw std::invalid_argument("need at least one ecoregion per biome");
}

nlohmann::json WorldConfig::to_json() const {
    return {{"seed", seed},
            {"raster_size", raster_size},
            {"world_size", world_size},
            {"num_latent_fields", num_latent_fields},
            {"smoothness", smoothness},
            {"biome_count", biome_count},
            {"ecoregion_count", ecoregion_count},
            {"s2_noise", s2_noise},
            {"s1_noise", s1_noise},
            {"canopy_noise", canopy_noise},
            {"missing_fraction", missing_fraction},
            {"nodata_fraction", nodata_fraction}};
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
    WorldConfig c;
    c.seed = j.value("seed", c.seed);
    c.raster_size = j.value("raster_size", c.raster_size);
    c.world_size = j.value("world_size", c.world_size);
    c.num_latent_fields = j.value("num_latent_fields", c.num_latent_fields);
    c.smoothness = j.value("smoothness", c.smoothness);
    c.biome_count = j.value("biome_count", c.biome_count);
    c.ecoregion_count = j.value("ecoregion_count", c.ecoregion_count);
    c.s2_noise = j.value("s2_noise", c.s2_noise);
    c.s1_noise = j.value("s1_noise", c.s1_noise);
    c.canopy_noise = j.value("canopy_noise", c.canopy_noise);
    c.missing_fraction = j.value("missing_fraction", c.missing_fraction);
    c.nodata_fraction = j.value("nodata_fraction", c.nodata_fraction);
    return c;
}

namespace {

// separable gaussian blur with reflected edges
void gaussian_blur_inplace(Tensor<float>& f, double sigma) {
    const int S = static_cast<int>(f.dim(0));
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = static_cast<float>(v);
        ksum += v;
    }
    for (auto& k : kernel) k = static_cast<float>(k / ksum);

    auto reflect = [S](int i) {
        if (i < 0) i = -i - 1;
        if (i >= S) i = 2 * S - 1 - i;
        return i;
    };

    Tensor<float> tmp({S, S});
    parallel_for(S, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t y = b; y < e; ++y)
            for (int x = 0; x < S; ++x) {
                float acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] * f[y * S + reflect(x + i)];
                tmp[y * S + x] = acc;
            }
    });
    parallel_for(S, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t y = b; y < e; ++y)
            for (int x = 0; x < S; ++x) {
                float acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[reflect(static_cast<int>(y) + i) * S + x];
                f[y * S + x] = acc;
            }
    });
}

void normalize_field(Tensor<float>& f) {
    double mean = 0;
    for (std::int64_t i = 0; i < f.numel(); ++i) mean += f[i];
    mean /= static_cast<double>(f.numel());
    double var = 0;
    for (std::int64_t i = 0; i < f.numel(); ++i) {
        const double d = f[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(f.numel());
    const float inv = static_cast<float>(1.0 / std::sqrt(std::max(var, 1e-12)));
    for (std::int64_t i = 0; i < f.numel(); ++i)
        f[i] = static_cast<float>((f[i] - mean) * inv);
}

// contiguous-quantile labels of `field` restricted to `subset` (all pixels
// when empty): equal-count bins, ties broken by pixel index.
void quantile_bins(const Tensor<float>& field, const std::vector<std::int64_t>& subset, int bins,
                   Tensor<std::int32_t>& labels, std::int32_t label_offset) {
    std::vector<std::int64_t> idx = subset;
    std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        if (field[a] != field[b]) return field[a] < field[b];
        return a < b;
    });
    const std::int64_t n = static_cast<std::int64_t>(idx.size());
    for (std::int64_t i = 0; i < n; ++i) {
        const auto bin = static_cast<std::int32_t>((i * bins) / n);
        labels[idx[static_cast<std::size_t>(i)]] = label_offset + bin;
    }
}

WorldMixtures draw_mixtures(std::uint64_t seed, int num_fields) {
    WorldMixtures m;
    Rng rng(stream_seed(seed, "mixtures"));
    const int L = num_fields;
    auto fill_normal = [&rng](std::vector<float>& v, std::size_t n, double sd) {
        v.resize(n);
        for (auto& x : v) x = static_cast<float>(rng.normal() * sd);
    };
    auto fill_uniform = [&rng](std::vector<float>& v, std::size_t n, double lo, double hi) {
        v.resize(n);
        for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    };
    fill_normal(m.dw_weights, static_cast<std::size_t>(9 * (L + 1)), 1.5);
    fill_normal(m.esa_weights, static_cast<std::size_t>(11 * (L + 1)), 1.5);
    fill_uniform(m.s2_signature, 10 * 12, 0.15, 0.85);
    fill_uniform(m.s2_brightness, 12, 0.10, 0.30);
    fill_uniform(m.s2_season_amp, 12, 0.02, 0.10);
    fill_uniform(m.s2_season_phase, 12, 0.0, 6.283185307179586);
    m.s2_l1c_offset.resize(12);
    for (int b = 0; b < 12; ++b)
        m.s2_l1c_offset[static_cast<std::size_t>(b)] =
            static_cast<float>(0.07 * std::exp(-b / 6.0));  // haze-like, stronger in low bands
    fill_normal(m.s1_embed, 10 * 8, 0.9);
    fill_normal(m.s1_slope, 8, 0.7);
    return m;
}

}  // namespace

LatentWorld generate_latent_world(const WorldConfig& config) {
    config.validate();
    const int S = config.world_size;
    LatentWorld w;
    w.config = config;

    for (int f = 0; f < config.num_latent_fields; ++f) {
        Rng rng(stream_seed(config.seed, "field", static_cast<std::uint64_t>(f)));
        Tensor<float> field({S, S});
        for (std::int64_t i = 0; i < field.numel(); ++i) field[i] = static_cast<float>(rng.normal());
        gaussian_blur_inplace(field, config.smoothness);
        normalize_field(field);
        w.fields.push_back(std::move(field));
    }

    // biome partition from the last field, ecoregion subdivision from the
    // second-to-last
    const auto& biome_field = w.fields[static_cast<std::size_t>(config.num_latent_fields - 1)];
    const auto& eco_field = w.fields[static_cast<std::size_t>(config.num_latent_fields - 2)];

    w.biome_map = Tensor<std::int32_t>({S, S});
    std::vector<std::int64_t> all(static_cast<std::size_t>(S) * S);
    std::iota(all.begin(), all.end(), 0);
    quantile_bins(biome_field, all, config.biome_count, w.biome_map, 0);

    // distribute ecoregion classes round-robin across biomes
    std::vector<int> eco_per_biome(static_cast<std::size_t>(config.biome_count),
                                   config.ecoregion_count / config.biome_count);
    for (int b = 0; b < config.ecoregion_count % config.biome_count; ++b)
        eco_per_biome[static_cast<std::size_t>(b)] += 1;

    w.ecoregion_map = Tensor<std::int32_t>({S, S});
    w.biome_area.assign(static_cast<std::size_t>(config.biome_count), 0);
    std::vector<std::vector<std::int64_t>> biome_pixels(static_cast<std::size_t>(config.biome_count));
    for (std::int64_t i = 0; i < w.biome_map.numel(); ++i)
        biome_pixels[static_cast<std::size_t>(w.biome_map[i])].push_back(i);

    std::int32_t eco_offset = 0;
    for (int b = 0; b < config.biome_count; ++b) {
        const auto& pix = biome_pixels[static_cast<std::size_t>(b)];
        w.biome_area[static_cast<std::size_t>(b)] = static_cast<std::int64_t>(pix.size());
        const int k = eco_per_biome[static_cast<std::size_t>(b)];
        quantile_bins(eco_field, pix, k, w.ecoregion_map, eco_offset);
        for (int e = 0; e < k; ++e) w.eco_parent.push_back(b);
        eco_offset += k;
    }
    w.eco_area.assign(static_cast<std::size_t>(config.ecoregion_count), 0);
    for (std::int64_t i = 0; i < w.ecoregion_map.numel(); ++i)
        w.eco_area[static_cast<std::size_t>(w.ecoregion_map[i])] += 1;

    w.mix = draw_mixtures(config.seed, config.num_latent_fields);
    return w;
}

std::uint64_t LatentWorld::content_hash() const {
    std::uint64_t h = hash_u64(config.seed);
    for (const auto& f : fields)
        h = hash_combine(h, hash_str({reinterpret_cast<const char*>(f.data()),
                                      static_cast<std::size_t>(f.numel()) * sizeof(float)}));
    h = hash_combine(h, hash_str({reinterpret_cast<const char*>(biome_map.data()),
                                  static_cast<std::size_t>(biome_map.numel()) * sizeof(std::int32_t)}));
    h = hash_combine(h, hash_str({reinterpret_cast<const char*>(ecoregion_map.data()),
                                  static_cast<std::size_t>(ecoregion_map.numel()) * sizeof(std::int32_t)}));
    return h;
}

}  // namespace mpmae::synth
