#pragma once

#include "mpmae/schema/schema.hpp"

namespace mpmae::testing {

// Minimal spec-conformant sample with deterministic content.
inline schema::MultiModalSample make_valid_sample(const schema::ModalityRegistry& reg,
                                                  std::uint64_t seed = 1) {
    const int R = reg.config.raster_size;
    Rng rng(seed);
    schema::MultiModalSample s;
    s.sample_id = seed;
    s.month = static_cast<std::uint8_t>(1 + rng.uniform_int(12));
    s.product_level = rng.uniform() < 0.5 ? schema::ProductLevel::L1C : schema::ProductLevel::L2A;
    for (const auto& m : reg.modalities) {
        if (m.level == schema::Level::pixel) {
            if (m.kind == schema::Kind::continuous) {
                Tensor<float> t({m.band_count, R, R});
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<float>(rng.normal() + 3.0);
                s.pixel[m.name] = std::move(t);
            } else {
                Tensor<std::int32_t> t({1, R, R});
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<std::int32_t>(rng.uniform_int(m.stored_label_count()));
                s.pixel_labels[m.name] = std::move(t);
            }
        } else if (m.kind == schema::Kind::categorical) {
            s.image_labels[m.name] = static_cast<std::int32_t>(rng.uniform_int(m.class_count));
        } else if (m.cyclic) {
            std::vector<float> v;
            for (int b = 0; b < m.band_count / 2; ++b) {
                auto [sn, cs] = schema::encode_cyclic(rng.uniform(-180.0, 180.0), 360.0);
                v.push_back(static_cast<float>(sn));
                v.push_back(static_cast<float>(cs));
            }
            s.image[m.name] = std::move(v);
        } else {
            std::vector<float> v(static_cast<std::size_t>(m.band_count));
            for (auto& x : v) x = static_cast<float>(rng.normal() * 10.0);
            s.image[m.name] = std::move(v);
        }
    }
    s.optical_valid = Tensor<std::uint8_t>({R, R});
    s.optical_valid.fill(1);
    s.stratum_id = s.image_labels.at("biome");
    return s;
}

// Stats with distinct values per band for transform tests.
inline schema::BandStats make_stats(const schema::ModalityRegistry& reg, double mean_base = 0.0,
                                    double sd = 1.0) {
    schema::BandStats st;
    for (const auto& m : reg.modalities) {
        if (m.kind != schema::Kind::continuous) continue;
        std::vector<schema::BandMoments> v;
        for (int b = 0; b < m.band_count; ++b) v.push_back({mean_base + b * 0.1, sd});
        if (m.name == "sentinel2") {
            st.optical["L1C"] = v;
            auto v2 = v;
            for (auto& x : v2) x.mean += 0.5;
            st.optical["L2A"] = v2;
        } else {
            st.modality[m.name] = v;
        }
    }
    return st;
}

}  // namespace mpmae::testing
