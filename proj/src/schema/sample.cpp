#include <cmath>
#include <sstream>

#include "mpmae/schema/schema.hpp"

namespace mpmae::schema {

std::pair<double, double> encode_cyclic(double value, double period) {
    if (!std::isfinite(value) || !std::isfinite(period) || period <= 0.0)
        throw std::invalid_argument("encode_cyclic: value must be finite and period > 0");
    const double a = 2.0 * 3.141592653589793238462643 * value / period;
    return {std::sin(a), std::cos(a)};
}

namespace {

void check_cyclic_pairs(const std::string& modality, const std::vector<float>& v,
                        std::vector<ValidationIssue>& issues) {
    for (std::size_t i = 0; i + 1 < v.size(); i += 2) {
        const double s2 = static_cast<double>(v[i]) * v[i] + static_cast<double>(v[i + 1]) * v[i + 1];
        if (std::abs(s2 - 1.0) > 1e-6) {
            std::ostringstream os;
            os << "cyclic pair " << i / 2 << " off unit circle (sin^2+cos^2 = " << s2 << ")";
            issues.push_back({modality, os.str()});
        }
    }
}

}  // namespace

std::vector<ValidationIssue> validate_sample(const MultiModalSample& sample,
                                             const ModalityRegistry& registry) {
    std::vector<ValidationIssue> issues;
    const int res = registry.config.raster_size;

    for (const auto& spec : registry.modalities) {
        if (spec.level == Level::pixel) {
            if (spec.kind == Kind::continuous) {
                auto it = sample.pixel.find(spec.name);
                if (it == sample.pixel.end()) {
                    issues.push_back({spec.name, "missing raster"});
                    continue;
                }
                const auto& t = it->second;
                if (t.rank() != 3 || t.dim(0) != spec.band_count || t.dim(1) != res || t.dim(2) != res) {
                    issues.push_back({spec.name, "raster shape " + shape_str(t.shape()) +
                                                     " does not match (bands," + std::to_string(res) +
                                                     "," + std::to_string(res) + ")"});
                    continue;
                }
                for (std::int64_t i = 0; i < t.numel(); ++i) {
                    if (!std::isfinite(t[i])) {
                        issues.push_back({spec.name, "non-finite value at flat index " + std::to_string(i)});
                        break;
                    }
                }
            } else {
                auto it = sample.pixel_labels.find(spec.name);
                if (it == sample.pixel_labels.end()) {
                    issues.push_back({spec.name, "missing label raster"});
                    continue;
                }
                const auto& t = it->second;
                if (t.rank() != 3 || t.dim(0) != 1 || t.dim(1) != res || t.dim(2) != res) {
                    issues.push_back({spec.name, "label raster shape mismatch " + shape_str(t.shape())});
                    continue;
                }
                const int hi = spec.stored_label_count();
                for (std::int64_t i = 0; i < t.numel(); ++i) {
                    const std::int32_t v = t[i];
                    if (v < 0 || v >= hi) {
                        issues.push_back({spec.name, "label " + std::to_string(v) +
                                                         " outside [0," + std::to_string(hi) + ")"});
                        break;
                    }
                }
            }
        } else {
            if (spec.kind == Kind::categorical) {
                auto it = sample.image_labels.find(spec.name);
                if (it == sample.image_labels.end()) {
                    issues.push_back({spec.name, "missing image-level label"});
                    continue;
                }
                if (it->second < 0 || it->second >= spec.stored_label_count())
                    issues.push_back({spec.name, "label " + std::to_string(it->second) + " out of range"});
            } else {
                auto it = sample.image.find(spec.name);
                if (it == sample.image.end()) {
                    issues.push_back({spec.name, "missing image-level vector"});
                    continue;
                }
                if (static_cast<int>(it->second.size()) != spec.band_count) {
                    issues.push_back({spec.name, "vector length " + std::to_string(it->second.size()) +
                                                     " != " + std::to_string(spec.band_count)});
                    continue;
                }
                for (float v : it->second)
                    if (!std::isfinite(v)) {
                        issues.push_back({spec.name, "non-finite entry"});
                        break;
                    }
                if (spec.cyclic) check_cyclic_pairs(spec.name, it->second, issues);
            }
        }
    }

    // all pixel rasters share one spatial shape by construction of the checks
    if (sample.optical_valid.defined()) {
        if (sample.optical_valid.rank() != 2 || sample.optical_valid.dim(0) != res ||
            sample.optical_valid.dim(1) != res)
            issues.push_back({"sentinel2", "validity mask shape mismatch"});
    }
    return issues;
}

MultiModalSample standardize_sample(const MultiModalSample& sample, const BandStats& stats,
                                    const ModalityRegistry& registry) {
    MultiModalSample out = sample;
    for (const auto& spec : registry.modalities) {
        if (spec.kind != Kind::continuous || spec.cyclic) continue;
        const auto& moments = stats.for_modality(spec.name, sample.product_level);
        if (static_cast<int>(moments.size()) != spec.band_count)
            throw ConfigError("stats missing bands for modality " + spec.name);
        if (spec.level == Level::pixel) {
            auto it = out.pixel.find(spec.name);
            if (it == out.pixel.end()) continue;
            Tensor<float>& t = it->second;
            t = t.clone();
            const std::int64_t hw = t.dim(1) * t.dim(2);
            for (int b = 0; b < spec.band_count; ++b) {
                const float mean = static_cast<float>(moments[static_cast<std::size_t>(b)].mean);
                const float inv = static_cast<float>(1.0 / moments[static_cast<std::size_t>(b)].stdev);
                float* p = t.data() + b * hw;
                for (std::int64_t i = 0; i < hw; ++i) p[i] = (p[i] - mean) * inv;
            }
            if (spec.name == "sentinel2" && sample.optical_valid.defined()) {
                const std::uint8_t* v = sample.optical_valid.data();
                for (int b = 0; b < spec.band_count; ++b) {
                    float* p = t.data() + b * hw;
                    for (std::int64_t i = 0; i < hw; ++i)
                        if (!v[i]) p[i] = 0.0f;  // missing -> zeros (the mean)
                }
            }
        } else {
            auto it = out.image.find(spec.name);
            if (it == out.image.end()) continue;
            for (int b = 0; b < spec.band_count; ++b) {
                auto& v = it->second[static_cast<std::size_t>(b)];
                v = static_cast<float>((v - moments[static_cast<std::size_t>(b)].mean) /
                                       moments[static_cast<std::size_t>(b)].stdev);
            }
        }
    }
    return out;
}

Tensor<float> destandardize_raster(const Tensor<float>& raster, const std::vector<BandMoments>& moments) {
    Tensor<float> out = raster.clone();
    const std::int64_t hw = out.dim(1) * out.dim(2);
    for (std::int64_t b = 0; b < out.dim(0); ++b) {
        const float mean = static_cast<float>(moments[static_cast<std::size_t>(b)].mean);
        const float sd = static_cast<float>(moments[static_cast<std::size_t>(b)].stdev);
        float* p = out.data() + b * hw;
        for (std::int64_t i = 0; i < hw; ++i) p[i] = p[i] * sd + mean;
    }
    return out;
}

}  // namespace mpmae::schema
