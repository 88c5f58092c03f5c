#include <cmath>

#include "mpmae/synth/synth.hpp"

namespace mpmae::synth {

namespace {

constexpr double kPi = 3.141592653589793238462643;

// world row/col -> degrees
double row_to_lat(int row, int S) { return 90.0 - 180.0 * static_cast<double>(row) / (S - 1); }
double col_to_lon(int col, int S) { return -180.0 + 360.0 * static_cast<double>(col) / (S - 1); }

float field_at(const Tensor<float>& f, int y, int x) {
    return f[static_cast<std::int64_t>(y) * f.dim(1) + x];
}

// slope magnitude of field 0 by central differences (one-sided at borders)
float slope_at(const Tensor<float>& f, int y, int x) {
    const int S = static_cast<int>(f.dim(0));
    const int ym = std::max(0, y - 1), yp = std::min(S - 1, y + 1);
    const int xm = std::max(0, x - 1), xp = std::min(S - 1, x + 1);
    const float dy = (field_at(f, yp, x) - field_at(f, ym, x)) / static_cast<float>(yp - ym);
    const float dx = (field_at(f, y, xp) - field_at(f, y, xm)) / static_cast<float>(xp - xm);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

schema::MultiModalSample render_sample(const LatentWorld& world, int y0, int x0, int month, Rng& rng,
                                       RenderTrace* trace) {
    const WorldConfig& cfg = world.config;
    const int R = cfg.raster_size;
    const int S = cfg.world_size;
    if (y0 < 0 || x0 < 0 || y0 + R > S || x0 + R > S)
        throw std::invalid_argument("render_sample: window out of bounds");
    if (month < 1 || month > 12) throw std::invalid_argument("render_sample: month must be in 1..12");

    const int L = cfg.num_latent_fields;
    schema::MultiModalSample s;
    s.month = static_cast<std::uint8_t>(month);
    s.product_level = rng.uniform() < 0.5 ? schema::ProductLevel::L1C : schema::ProductLevel::L2A;

    // landcover class scores from the world-level affine mixtures
    Tensor<std::int32_t> dw({1, R, R}), esa({1, R, R});
    Tensor<std::int32_t> dw_argmax({R, R});
    for (int yy = 0; yy < R; ++yy)
        for (int xx = 0; xx < R; ++xx) {
            const int wy = y0 + yy, wx = x0 + xx;
            int best_dw = 0, best_esa = 0;
            float best_dw_v = -1e30f, best_esa_v = -1e30f;
            for (int k = 0; k < 9; ++k) {
                float v = world.mix.dw_weights[static_cast<std::size_t>(k * (L + 1) + L)];
                for (int l = 0; l < L; ++l)
                    v += world.mix.dw_weights[static_cast<std::size_t>(k * (L + 1) + l)] *
                         field_at(world.fields[static_cast<std::size_t>(l)], wy, wx);
                if (v > best_dw_v) {
                    best_dw_v = v;
                    best_dw = k;
                }
            }
            for (int k = 0; k < 11; ++k) {
                float v = world.mix.esa_weights[static_cast<std::size_t>(k * (L + 1) + L)];
                for (int l = 0; l < L; ++l)
                    v += world.mix.esa_weights[static_cast<std::size_t>(k * (L + 1) + l)] *
                         field_at(world.fields[static_cast<std::size_t>(l)], wy, wx);
                if (v > best_esa_v) {
                    best_esa_v = v;
                    best_esa = k;
                }
            }
            dw_argmax[yy * R + xx] = best_dw + 1;  // stored labels 1..9, 0 = no-data
            dw[yy * R + xx] = best_dw + 1;
            esa[yy * R + xx] = best_esa;
        }

    // aster: elevation from latent 0, slope from its gradient
    const auto& f0 = world.fields[0];
    const auto& f1 = world.fields[1];
    Tensor<float> aster({2, R, R});
    for (int yy = 0; yy < R; ++yy)
        for (int xx = 0; xx < R; ++xx) {
            aster[(0 * R + yy) * R + xx] = 800.0f + 500.0f * field_at(f0, y0 + yy, x0 + xx);
            aster[(1 * R + yy) * R + xx] = 400.0f * slope_at(f0, y0 + yy, x0 + xx);
        }

    // canopy height: monotone in latents 0,1, gated by landcover
    Tensor<float> canopy({2, R, R});
    for (int yy = 0; yy < R; ++yy)
        for (int xx = 0; xx < R; ++xx) {
            const float z = 1.2f * field_at(f0, y0 + yy, x0 + xx) +
                            1.5f * field_at(f1, y0 + yy, x0 + xx);
            const float h_base = 35.0f / (1.0f + std::exp(-z));
            const std::int32_t cls = dw_argmax[yy * R + xx];
            const float gate = (cls == 2 || cls == 6) ? 1.0f : (cls == 1 || cls == 3) ? 0.15f : 0.02f;
            const float h = h_base * gate + static_cast<float>(rng.normal() * cfg.canopy_noise);
            canopy[(0 * R + yy) * R + xx] = std::max(0.0f, h);
            canopy[(1 * R + yy) * R + xx] =
                0.12f * std::max(0.0f, h) + std::abs(static_cast<float>(rng.normal() * cfg.canopy_noise));
        }

    // sentinel-2: per-class signature + brightness modulation + season + noise
    const bool l1c = s.product_level == schema::ProductLevel::L1C;
    Tensor<float> s2({12, R, R});
    for (int b = 0; b < 12; ++b) {
        const float amp = world.mix.s2_brightness[static_cast<std::size_t>(b)];
        const float season =
            world.mix.s2_season_amp[static_cast<std::size_t>(b)] *
            static_cast<float>(std::sin(2.0 * kPi * month / 12.0 +
                                        world.mix.s2_season_phase[static_cast<std::size_t>(b)]));
        const float off = l1c ? world.mix.s2_l1c_offset[static_cast<std::size_t>(b)] : 0.0f;
        for (int yy = 0; yy < R; ++yy)
            for (int xx = 0; xx < R; ++xx) {
                const std::int32_t cls = dw_argmax[yy * R + xx];
                float v = world.mix.s2_signature[static_cast<std::size_t>(cls * 12 + b)];
                v += amp * field_at(f1, y0 + yy, x0 + xx);
                v += season + off;
                v += static_cast<float>(rng.normal() * cfg.s2_noise);
                s2[(b * R + yy) * R + xx] = v;
            }
    }

    // sentinel-1: nonlinear mixture of landcover embedding and slope
    Tensor<float> s1({8, R, R});
    for (int b = 0; b < 8; ++b) {
        const float cs = world.mix.s1_slope[static_cast<std::size_t>(b)];
        for (int yy = 0; yy < R; ++yy)
            for (int xx = 0; xx < R; ++xx) {
                const std::int32_t cls = dw_argmax[yy * R + xx];
                const float sl = std::tanh(aster[(1 * R + yy) * R + xx] / 150.0f);
                const float v =
                    std::tanh(world.mix.s1_embed[static_cast<std::size_t>(cls * 8 + b)] + cs * sl) +
                    static_cast<float>(rng.normal() * cfg.s1_noise);
                s1[(b * R + yy) * R + xx] = v;
            }
    }

    // dynamic-world no-data injection (after rendering, so optical pixels keep
    // their true class colouring)
    if (cfg.nodata_fraction > 0) {
        for (std::int64_t i = 0; i < dw.numel(); ++i)
            if (rng.uniform() < cfg.nodata_fraction) dw[i] = 0;
    }

    // optical missing pixels
    Tensor<std::uint8_t> valid({R, R});
    valid.fill(1);
    if (cfg.missing_fraction > 0) {
        for (std::int64_t i = 0; i < valid.numel(); ++i)
            if (rng.uniform() < cfg.missing_fraction) valid[i] = 0;
    }

    // image-level modalities from the window centre
    const int cy = y0 + R / 2, cx = x0 + R / 2;
    const double lat = row_to_lat(cy, S), lon = col_to_lon(cx, S);

    double f1_mean = 0;
    for (int yy = 0; yy < R; ++yy)
        for (int xx = 0; xx < R; ++xx) f1_mean += field_at(f1, y0 + yy, x0 + xx);
    f1_mean /= R * R;
    double elev_mean = 0;
    for (int yy = 0; yy < R; ++yy)
        for (int xx = 0; xx < R; ++xx) elev_mean += field_at(f0, y0 + yy, x0 + xx);
    elev_mean /= R * R;

    const double hemi = lat >= 0 ? 1.0 : -1.0;
    const double t_base = 28.0 - 55.0 * std::abs(lat) / 90.0 - 5.0 * elev_mean;
    const double t_amp = 2.0 + 12.0 * std::abs(lat) / 90.0;
    auto t_month = [&](int m) {
        return t_base + hemi * t_amp * std::cos(2.0 * kPi * (m - 7) / 12.0);
    };
    const int prev = month == 1 ? 12 : month - 1;
    std::vector<float> temp(9);
    temp[0] = static_cast<float>(t_base);                    // year mean
    temp[1] = static_cast<float>(t_base - t_amp - 3.0);      // year min
    temp[2] = static_cast<float>(t_base + t_amp + 3.0);      // year max
    temp[3] = static_cast<float>(t_month(month));            // month mean
    temp[4] = static_cast<float>(t_month(month) - 3.0);      // month min
    temp[5] = static_cast<float>(t_month(month) + 3.0);      // month max
    temp[6] = static_cast<float>(t_month(prev));
    temp[7] = static_cast<float>(t_month(prev) - 3.0);
    temp[8] = static_cast<float>(t_month(prev) + 3.0);

    const double p_year = (2000.0 * std::exp(-std::pow((std::abs(lat) - 10.0) / 30.0, 2)) + 200.0) *
                          (1.0 + 0.3 * f1_mean);
    auto p_month = [&](int m) {
        return (p_year / 12.0) * (1.0 + 0.4 * hemi * std::sin(2.0 * kPi * (m - 4) / 12.0));
    };
    std::vector<float> precip = {static_cast<float>(p_year), static_cast<float>(p_month(month)),
                                 static_cast<float>(p_month(prev))};

    const auto [lat_sin, lat_cos] = schema::encode_cyclic(lat, 360.0);
    const auto [lon_sin, lon_cos] = schema::encode_cyclic(lon, 360.0);
    const auto [m_sin, m_cos] = schema::encode_cyclic(static_cast<double>(month), 12.0);

    s.pixel["sentinel2"] = std::move(s2);
    s.pixel["sentinel1"] = std::move(s1);
    s.pixel["aster"] = std::move(aster);
    s.pixel["canopy_height"] = std::move(canopy);
    s.pixel_labels["dynamic_world"] = std::move(dw);
    s.pixel_labels["esa_worldcover"] = std::move(esa);
    s.image_labels["biome"] = world.biome_map[static_cast<std::int64_t>(cy) * S + cx];
    s.image_labels["ecoregion"] = world.ecoregion_map[static_cast<std::int64_t>(cy) * S + cx];
    s.image["era5_temperature"] = std::move(temp);
    s.image["era5_precipitation"] = std::move(precip);
    s.image["geolocation"] = {static_cast<float>(lat_sin), static_cast<float>(lat_cos),
                              static_cast<float>(lon_sin), static_cast<float>(lon_cos)};
    s.image["date"] = {static_cast<float>(m_sin), static_cast<float>(m_cos)};
    s.optical_valid = std::move(valid);
    s.stratum_id = s.image_labels["biome"];

    if (trace) trace->dw_argmax = std::move(dw_argmax);
    return s;
}

}  // namespace mpmae::synth
