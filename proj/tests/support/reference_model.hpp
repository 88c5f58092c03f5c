#pragma once

// Naive re-implementation of the masked encoder forward pass: every
// convolution is the direct-summation reference with explicit zero-fill and
// re-mask, and every normalization is an explicit loop. Parameters are read
// from the library network by name, so this is an independent compute path
// over identical weights.

#include "mpmae/mask/masking.hpp"
#include "mpmae/model/encoder.hpp"
#include "reference_ops.hpp"

namespace mpmae::testing {

inline Tensor<double> ref_mask_apply(const Tensor<double>& x, const Tensor<double>& vis) {
    Tensor<double> y = x.clone();
    const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < HW; ++i) y[(n * C + c) * HW + i] *= vis[n * HW + i];
    return y;
}

inline Tensor<double> ref_layer_norm(const Tensor<double>& x, const Tensor<double>& g,
                                     const Tensor<double>& b) {
    Tensor<double> y(x.shape());
    const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t i = 0; i < HW; ++i) {
            double mean = 0;
            for (std::int64_t c = 0; c < C; ++c) mean += x[(n * C + c) * HW + i];
            mean /= static_cast<double>(C);
            double var = 0;
            for (std::int64_t c = 0; c < C; ++c) {
                const double d = x[(n * C + c) * HW + i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(C);
            const double inv = 1.0 / std::sqrt(var + 1e-6);
            for (std::int64_t c = 0; c < C; ++c)
                y[(n * C + c) * HW + i] = (x[(n * C + c) * HW + i] - mean) * inv * g[c] + b[c];
        }
    return y;
}

inline Tensor<double> ref_gelu(const Tensor<double>& x) {
    Tensor<double> y(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i)
        y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
    return y;
}

inline Tensor<double> ref_grn(const Tensor<double>& x, const Tensor<double>& g,
                              const Tensor<double>& b, const Tensor<double>* vis) {
    Tensor<double> y(x.shape());
    const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (std::int64_t n = 0; n < N; ++n) {
        std::vector<double> gx(static_cast<std::size_t>(C));
        double mean = 0;
        for (std::int64_t c = 0; c < C; ++c) {
            double acc = 0;
            for (std::int64_t i = 0; i < HW; ++i) {
                const double v = x[(n * C + c) * HW + i];
                acc += v * v * (vis ? (*vis)[n * HW + i] : 1.0);
            }
            gx[static_cast<std::size_t>(c)] = std::sqrt(acc);
            mean += gx[static_cast<std::size_t>(c)];
        }
        mean /= static_cast<double>(C);
        for (std::int64_t c = 0; c < C; ++c) {
            const double nx = gx[static_cast<std::size_t>(c)] / (mean + 1e-6);
            for (std::int64_t i = 0; i < HW; ++i) {
                const double v = x[(n * C + c) * HW + i];
                y[(n * C + c) * HW + i] = g[c] * v * nx + b[c] + v;
            }
        }
    }
    return y;
}

// One masked ConvNeXt block via the zero-fill -> dense-conv -> re-mask oracle.
template <typename Params>
Tensor<double> ref_masked_block(const Params& params, const std::string& prefix,
                                const Tensor<double>& x, const Tensor<double>* vis) {
    auto W = [&](const std::string& n) { return params.find(prefix + n)->value; };
    Tensor<double> h = vis ? ref_mask_apply(x, *vis) : x.clone();
    const std::int64_t C = x.dim(1);
    h = ref_conv2d(h, W(".dwconv.weight"), W(".dwconv.bias"), 1,
                   static_cast<int>(W(".dwconv.weight").dim(2)) / 2, static_cast<int>(C));
    h = ref_layer_norm(h, W(".norm.gamma"), W(".norm.beta"));
    h = ref_conv2d(h, W(".pw1.weight"), W(".pw1.bias"), 1, 0, 1);
    h = ref_gelu(h);
    h = ref_grn(h, W(".grn.gamma"), W(".grn.beta"), vis);
    h = ref_conv2d(h, W(".pw2.weight"), W(".pw2.bias"), 1, 0, 1);
    for (std::int64_t i = 0; i < h.numel(); ++i) h[i] += x[i];
    return vis ? ref_mask_apply(h, *vis) : h;
}

// Full masked encoder forward (modified or original stem).
template <typename Params>
Tensor<double> ref_masked_encoder(const Params& params, const model::EncoderConfig& cfg,
                                  const Tensor<double>& x,
                                  const std::vector<mask::PatchMask>& masks) {
    auto W = [&](const std::string& n) { return params.find("encoder." + n)->value; };
    const mask::PatchGrid grid(cfg.image_size, cfg.patch_size);
    auto vis_at = [&](int size) {
        return mask::batch_visibility<double>(masks, grid, size);
    };

    int res = cfg.image_size;
    Tensor<double> vis = vis_at(res);
    Tensor<double> h;
    if (cfg.stem == model::StemKind::modified) {
        h = ref_mask_apply(x, vis);
        h = ref_conv2d(h, W("stem.conv.weight"), W("stem.conv.bias"), 1, 1, 1);
        h = ref_mask_apply(h, vis);
        h = ref_layer_norm(h, W("stem.norm.gamma"), W("stem.norm.beta"));
        h = ref_mask_apply(h, vis);
        h = ref_conv2d(h, W("stem.down.weight"), W("stem.down.bias"), 2, 0,
                       static_cast<int>(h.dim(1)));
        res /= 2;
        vis = vis_at(res);
        h = ref_mask_apply(h, vis);
    } else {
        h = ref_mask_apply(x, vis);
        h = ref_conv2d(h, W("stem.conv.weight"), W("stem.conv.bias"), 4, 0, 1);
        res /= 4;
        vis = vis_at(res);
        h = ref_mask_apply(h, vis);
        h = ref_layer_norm(h, W("stem.norm.gamma"), W("stem.norm.beta"));
        h = ref_mask_apply(h, vis);
    }

    const auto ts = cfg.transition_strides();
    for (int s = 0; s < 4; ++s) {
        for (int d = 0; d < cfg.depths[static_cast<std::size_t>(s)]; ++d)
            h = ref_masked_block(params, "encoder.stage" + std::to_string(s) + ".block" + std::to_string(d),
                                 h, &vis);
        if (s < 3) {
            h = ref_layer_norm(h, W("trans" + std::to_string(s) + ".norm.gamma"),
                               W("trans" + std::to_string(s) + ".norm.beta"));
            const int stride = ts[static_cast<std::size_t>(s)];
            h = ref_conv2d(h, W("trans" + std::to_string(s) + ".conv.weight"),
                           W("trans" + std::to_string(s) + ".conv.bias"), stride, 0, 1);
            res /= stride;
            vis = vis_at(res);
            h = ref_mask_apply(h, vis);
        }
    }
    return h;
}

}  // namespace mpmae::testing
