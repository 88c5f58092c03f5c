#pragma once

#include "mpmae/model/encoder.hpp"

namespace mpmae::model {

// U-Net segmenter over the encoder's per-stage feature pyramid. Each up
// block is nearest-neighbour upsampling, a 3x3 convolution, layer norm and
// GELU; skips come from [stage3, stage2, stage1, stem] in that order.
template <typename T>
class UNetSeg {
public:
    UNetSeg(const EncoderConfig& enc_cfg, int num_classes, std::uint64_t seed)
        : enc_cfg_(enc_cfg), num_classes_(num_classes) {
        Rng rng(stream_seed(seed, "unet_init"));
        encoder_ = std::make_unique<Encoder<T>>(params_, "encoder", enc_cfg, rng);

        const std::vector<int> skip_w = {enc_cfg.widths[2], enc_cfg.widths[1], enc_cfg.widths[0],
                                         enc_cfg.widths[0]};
        int cur = enc_cfg.widths[3];
        for (std::size_t i = 0; i < skip_w.size(); ++i) {
            const int out_w = std::max(8, skip_w[i]);
            convs_.emplace_back(params_, "decoder.up" + std::to_string(i) + ".conv",
                                cur + skip_w[i], out_w, 3, 1, 1, 1, rng);
            norms_.emplace_back(params_, "decoder.up" + std::to_string(i) + ".norm", out_w);
            cur = out_w;
        }
        head_ = Conv2d<T>(params_, "decoder.head", cur, num_classes, 1, 1, 0, 1, rng);
    }

    ParamRegistry<T>& params() { return params_; }
    const ParamRegistry<T>& params() const { return params_; }
    Encoder<T>& encoder() { return *encoder_; }
    int num_classes() const { return num_classes_; }
    int skip_count() const { return static_cast<int>(convs_.size()); }

    // `drop_skip` zeroes one skip input (ablation hook); -1 keeps all.
    NodeRef<T> forward(const NodeRef<T>& x, int drop_skip = -1) const {
        auto out = encoder_->forward(x, nullptr);
        // pyramid = [stem, s1, s2, s3, s4]
        std::vector<NodeRef<T>> skips = {out.pyramid[3], out.pyramid[2], out.pyramid[1],
                                         out.pyramid[0]};
        auto h = out.tokens;
        for (std::size_t i = 0; i < skips.size(); ++i) {
            auto skip = skips[i];
            if (static_cast<int>(i) == drop_skip) skip = ops::scale(skip, T(0));
            const std::int64_t cur_res = h->value.dim(2);
            const std::int64_t skip_res = skip->value.dim(2);
            if (skip_res > cur_res) {
                if (skip_res % cur_res != 0)
                    throw std::invalid_argument("pyramid resolutions not nested");
                h = ops::upsample_nearest(h, static_cast<int>(skip_res / cur_res));
            }
            h = ops::concat_channels(h, skip);
            h = convs_[i](h);
            h = norms_[i](h);
            h = ops::gelu(h);
        }
        const std::int64_t in_res = x->value.dim(2);
        if (h->value.dim(2) != in_res)
            h = ops::upsample_nearest(h, static_cast<int>(in_res / h->value.dim(2)));
        return head_(h);
    }

private:
    EncoderConfig enc_cfg_;
    int num_classes_;
    ParamRegistry<T> params_;
    std::unique_ptr<Encoder<T>> encoder_;
    std::vector<Conv2d<T>> convs_;
    std::vector<LayerNormCh<T>> norms_;
    Conv2d<T> head_;
};

// Classification head over globally pooled final encoder features (used for
// both linear probing and fine-tuning; LP freezes the encoder outside).
template <typename T>
class Classifier {
public:
    Classifier(const EncoderConfig& enc_cfg, int num_classes, std::uint64_t seed) {
        Rng rng(stream_seed(seed, "cls_init"));
        encoder_ = std::make_unique<Encoder<T>>(params_, "encoder", enc_cfg, rng);
        head_ = Linear<T>(params_, "head", enc_cfg.widths[3], num_classes, rng);
    }

    ParamRegistry<T>& params() { return params_; }
    const ParamRegistry<T>& params() const { return params_; }
    Encoder<T>& encoder() { return *encoder_; }

    NodeRef<T> forward(const NodeRef<T>& x) const {
        auto out = encoder_->forward(x, nullptr);
        return head_(ops::global_mean_hw(out.tokens));
    }

    // head applied to precomputed pooled features (N, width)
    NodeRef<T> head_forward(const NodeRef<T>& feats) const { return head_(feats); }

private:
    ParamRegistry<T> params_;
    std::unique_ptr<Encoder<T>> encoder_;
    Linear<T> head_;
};

}  // namespace mpmae::model
