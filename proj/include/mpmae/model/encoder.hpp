#pragma once

#include <map>

#include "mpmae/mask/masking.hpp"
#include "mpmae/model/layers.hpp"

namespace mpmae::model {

enum class StemKind { modified, original };

struct EncoderConfig {
    int in_channels = 12;
    std::vector<int> depths = {2, 2, 6, 2};
    std::vector<int> widths = {40, 80, 160, 320};  // Atto; Pico halves these
    int image_size = 112;
    int patch_size = 16;
    StemKind stem = StemKind::modified;
    int block_kernel = 7;

    int stem_stride() const { return stem == StemKind::modified ? 2 : 4; }

    // strides of the three inter-stage transitions (2 until the patch stride
    // is reached, then 1)
    std::vector<int> transition_strides() const {
        int remaining = patch_size / stem_stride();
        std::vector<int> ts;
        for (int i = 0; i < 3; ++i) {
            if (remaining >= 2) {
                ts.push_back(2);
                remaining /= 2;
            } else {
                ts.push_back(1);
            }
        }
        if (remaining != 1) throw std::invalid_argument("patch size incompatible with stem stride");
        return ts;
    }

    void validate() const {
        if (depths.size() != 4 || widths.size() != 4)
            throw std::invalid_argument("encoder must have exactly 4 stages");
        for (int w : widths)
            if (w <= 0) throw std::invalid_argument("stage widths must be positive");
        for (int d : depths)
            if (d <= 0) throw std::invalid_argument("stage depths must be positive");
        if (image_size % patch_size != 0)
            throw std::invalid_argument("patch size must divide image size");
        if (patch_size % stem_stride() != 0)
            throw std::invalid_argument("patch size incompatible with stem stride");
        (void)transition_strides();
    }

    int grid_side() const { return image_size / patch_size; }
};

template <typename T>
struct EncoderOut {
    NodeRef<T> tokens;                // final-stage features (N, w3, G, G); zero at masked cells
    std::vector<NodeRef<T>> pyramid;  // [stem_features, stage1..stage4]
};

// Masked convolutional encoder. With masks the sparse convolution is
// emulated by zero-fill -> dense conv -> re-mask at every spatial layer, and
// GRN statistics are restricted to visible positions; without masks it is a
// plain dense ConvNeXt V2 forward.
template <typename T>
class Encoder {
public:
    Encoder(ParamRegistry<T>& reg, const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
        : cfg_(cfg) {
        cfg.validate();
        if (cfg.stem == StemKind::modified) {
            stem_conv_ = Conv2d<T>(reg, prefix + ".stem.conv", cfg.in_channels, cfg.widths[0], 3, 1, 1,
                                   1, rng);
            stem_norm_ = LayerNormCh<T>(reg, prefix + ".stem.norm", cfg.widths[0]);
            stem_down_ = Conv2d<T>(reg, prefix + ".stem.down", cfg.widths[0], cfg.widths[0], 2, 2, 0,
                                   cfg.widths[0], rng);
        } else {
            stem_conv_ = Conv2d<T>(reg, prefix + ".stem.conv", cfg.in_channels, cfg.widths[0], 4, 4, 0,
                                   1, rng);
            stem_norm_ = LayerNormCh<T>(reg, prefix + ".stem.norm", cfg.widths[0]);
        }
        const auto ts = cfg.transition_strides();
        for (int s = 0; s < 4; ++s) {
            std::vector<ConvNeXtBlock<T>> blocks;
            for (int d = 0; d < cfg.depths[static_cast<std::size_t>(s)]; ++d)
                blocks.emplace_back(reg,
                                    prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(d),
                                    cfg.widths[static_cast<std::size_t>(s)], cfg.block_kernel, rng);
            stages_.push_back(std::move(blocks));
            if (s < 3) {
                const int stride = ts[static_cast<std::size_t>(s)];
                trans_norm_.emplace_back(reg, prefix + ".trans" + std::to_string(s) + ".norm",
                                         cfg.widths[static_cast<std::size_t>(s)]);
                trans_conv_.emplace_back(reg, prefix + ".trans" + std::to_string(s) + ".conv",
                                         cfg.widths[static_cast<std::size_t>(s)],
                                         cfg.widths[static_cast<std::size_t>(s + 1)], stride, stride, 0,
                                         1, rng);
            }
        }
    }

    const EncoderConfig& config() const { return cfg_; }

    // masks may be null (dense forward). Input spatial size may differ from
    // cfg.image_size at dense inference; with masks it must match.
    EncoderOut<T> forward(const NodeRef<T>& x, const std::vector<mask::PatchMask>* masks) const {
        const int H = static_cast<int>(x->value.dim(2));
        if (masks && H != cfg_.image_size)
            throw std::invalid_argument("masked forward requires the configured image size");
        const mask::PatchGrid grid = masks ? mask::PatchGrid(cfg_.image_size, cfg_.patch_size)
                                           : mask::PatchGrid(H, H);

        std::map<int, Tensor<T>> vis_cache;
        auto vis_at = [&](int size) -> const Tensor<T>& {
            auto it = vis_cache.find(size);
            if (it == vis_cache.end())
                it = vis_cache.emplace(size, mask::batch_visibility<T>(*masks, grid, size)).first;
            return it->second;
        };
        const Tensor<T> none;

        EncoderOut<T> out;
        NodeRef<T> h;
        int res = H;
        if (cfg_.stem == StemKind::modified) {
            auto z = masks ? ops::mask_mul(x, vis_at(res)) : x;
            z = stem_conv_(z);
            if (masks) z = ops::mask_mul(z, vis_at(res));
            z = stem_norm_(z);
            if (masks) z = ops::mask_mul(z, vis_at(res));
            out.pyramid.push_back(z);  // full-resolution features for U-Net skips
            res /= 2;
            h = stem_down_(z);
            if (masks) h = ops::mask_mul(h, vis_at(res));
        } else {
            auto z = masks ? ops::mask_mul(x, vis_at(res)) : x;
            res /= 4;
            h = stem_conv_(z);
            if (masks) h = ops::mask_mul(h, vis_at(res));
            h = stem_norm_(h);
            if (masks) h = ops::mask_mul(h, vis_at(res));
            out.pyramid.push_back(h);
        }

        const auto ts = cfg_.transition_strides();
        for (int s = 0; s < 4; ++s) {
            for (const auto& blk : stages_[static_cast<std::size_t>(s)])
                h = blk.forward(h, masks ? vis_at(res) : none);
            out.pyramid.push_back(h);
            if (s < 3) {
                h = trans_norm_[static_cast<std::size_t>(s)](h);
                h = trans_conv_[static_cast<std::size_t>(s)](h);
                res /= ts[static_cast<std::size_t>(s)];
                if (masks) h = ops::mask_mul(h, vis_at(res));
            }
        }
        out.tokens = h;
        return out;
    }

    std::vector<int> pyramid_widths() const {
        return {cfg_.widths[0], cfg_.widths[0], cfg_.widths[1], cfg_.widths[2], cfg_.widths[3]};
    }

private:
    EncoderConfig cfg_;
    Conv2d<T> stem_conv_, stem_down_;
    LayerNormCh<T> stem_norm_;
    std::vector<std::vector<ConvNeXtBlock<T>>> stages_;
    std::vector<LayerNormCh<T>> trans_norm_;
    std::vector<Conv2d<T>> trans_conv_;
};

}  // namespace mpmae::model
