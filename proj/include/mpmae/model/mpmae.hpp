#pragma once

#include "mpmae/model/encoder.hpp"
#include "mpmae/schema/schema.hpp"

namespace mpmae::model {

struct MPMAEConfig {
    EncoderConfig encoder;
    int decoder_width = 256;
    int decoder_kernel = 7;

    void validate() const {
        encoder.validate();
        if (decoder_width <= 0) throw std::invalid_argument("decoder width must be positive");
    }
};

// One shallow decoder per pretext task: 1x1 projection, one ConvNeXt block,
// linear prediction head.
template <typename T>
struct TaskDecoder {
    schema::TaskSpec task;
    Conv2d<T> proj;
    ConvNeXtBlock<T> block;
    Conv2d<T> pixel_head;    // pixel tasks: dec_width -> patch^2 * out_channels
    Linear<T> image_head;    // image tasks: dec_width -> out_channels

    TaskDecoder() = default;
    TaskDecoder(ParamRegistry<T>& reg, const std::string& prefix, const schema::TaskSpec& t,
                const MPMAEConfig& cfg, Rng& rng)
        : task(t),
          proj(reg, prefix + ".proj", cfg.encoder.widths[3], cfg.decoder_width, 1, 1, 0, 1, rng),
          block(reg, prefix + ".block", cfg.decoder_width, cfg.decoder_kernel, rng) {
        if (t.pixel_level()) {
            pixel_head = Conv2d<T>(reg, prefix + ".head", cfg.decoder_width,
                                   cfg.encoder.patch_size * cfg.encoder.patch_size * t.output_channels,
                                   1, 1, 0, 1, rng);
        } else {
            image_head = Linear<T>(reg, prefix + ".head", cfg.decoder_width, t.output_channels, rng);
        }
    }
};

// The MP-MAE network: masked encoder, learnable mask token at the final
// width, and per-task shallow decoders over the mask-token-completed grid.
template <typename T>
class MPMAE {
public:
    MPMAE(MPMAEConfig cfg, const std::vector<schema::TaskSpec>& tasks, std::uint64_t seed)
        : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(stream_seed(seed, "init"));
        encoder_ = std::make_unique<Encoder<T>>(params_, "encoder", cfg_.encoder, rng);
        mask_token_ = params_.create("encoder.mask_token",
                                     trunc_normal<T>({cfg_.encoder.widths[3]}, rng));
        for (const auto& t : tasks)
            decoders_.push_back(TaskDecoder<T>(params_, "decoders." + t.task_id, t, cfg_, rng));
    }

    const MPMAEConfig& config() const { return cfg_; }
    const Encoder<T>& encoder() const { return *encoder_; }
    ParamRegistry<T>& params() { return params_; }
    const ParamRegistry<T>& params() const { return params_; }
    const NodeRef<T>& mask_token() const { return mask_token_; }
    const std::vector<TaskDecoder<T>>& decoders() const { return decoders_; }

    EncoderOut<T> encode(const NodeRef<T>& x, const std::vector<mask::PatchMask>* masks) const {
        return encoder_->forward(x, masks);
    }

    // Masked cells replaced by the learnable token; output fully dense.
    NodeRef<T> fill_tokens(const NodeRef<T>& tokens, const std::vector<mask::PatchMask>& masks) const {
        const mask::PatchGrid grid(cfg_.encoder.image_size, cfg_.encoder.patch_size);
        return ops::fill_mask_tokens(tokens, mask::batch_masked_cells(masks, grid), mask_token_);
    }

    NodeRef<T> decode_pixel(const TaskDecoder<T>& dec, const NodeRef<T>& dense_tokens) const {
        if (!dec.task.pixel_level()) throw schema::ConfigError("decode_pixel on image-level task");
        auto h = dec.proj(dense_tokens);
        h = dec.block.forward(h);
        h = dec.pixel_head(h);
        return ops::tokens_to_raster(h, cfg_.encoder.patch_size, dec.task.output_channels);
    }

    // Average pooling over the decoded non-visible cells only.
    NodeRef<T> decode_image(const TaskDecoder<T>& dec, const NodeRef<T>& dense_tokens,
                            const std::vector<mask::PatchMask>& masks) const {
        if (dec.task.pixel_level()) throw schema::ConfigError("decode_image on pixel-level task");
        const std::int64_t n = static_cast<std::int64_t>(masks.size());
        const std::int64_t p = mask::PatchGrid(cfg_.encoder.image_size, cfg_.encoder.patch_size)
                                   .num_patches();
        Tensor<T> w({n, p});
        for (std::int64_t i = 0; i < n; ++i) {
            const auto& m = masks[static_cast<std::size_t>(i)];
            const int cnt = m.count_masked();
            if (cnt == 0)
                throw std::logic_error("decode_image: cannot pool over zero masked cells");
            for (std::int64_t c = 0; c < p; ++c)
                w[i * p + c] = m.masked[c] ? T(1) / T(cnt) : T(0);
        }
        auto h = dec.proj(dense_tokens);
        h = dec.block.forward(h);
        auto pooled = ops::weighted_cell_mean(h, w);
        return dec.image_head(pooled);
    }

    const TaskDecoder<T>& decoder_for(const std::string& task_id) const {
        for (const auto& d : decoders_)
            if (d.task.task_id == task_id) return d;
        throw schema::ConfigError("unknown task: " + task_id);
    }

    struct ParamCounts {
        std::int64_t encoder = 0;
        std::int64_t decoders = 0;
        std::int64_t total = 0;
    };

    ParamCounts count_parameters() const {
        ParamCounts c;
        c.encoder = params_.count("encoder.");
        c.decoders = params_.count("decoders.");
        c.total = params_.count();
        return c;
    }

private:
    MPMAEConfig cfg_;
    ParamRegistry<T> params_;
    std::unique_ptr<Encoder<T>> encoder_;
    NodeRef<T> mask_token_;
    std::vector<TaskDecoder<T>> decoders_;
};

}  // namespace mpmae::model
