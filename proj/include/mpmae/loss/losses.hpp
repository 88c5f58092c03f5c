#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpmae/mask/masking.hpp"
#include "mpmae/model/mpmae.hpp"
#include "mpmae/schema/schema.hpp"

namespace mpmae::loss {

enum class LossMode { equal, uncertainty };

inline const char* loss_mode_name(LossMode m) { return m == LossMode::equal ? "equal" : "uncertainty"; }

template <typename T>
struct TaskLossResult {
    std::string task_id;
    NodeRef<T> raw;  // scalar node; null when skipped
    double raw_value = 0.0;
    double weighted_value = 0.0;
    double s_value = 0.0;
    std::int64_t count = 0;
    bool skipped = true;
};

// Eq.-style aggregation: uncertainty mode sum_t exp(-s_t) L_t + s_t/2,
// equal mode sum_t L_t. s holds one log-variance per task (full task list
// order); only non-skipped tasks contribute, so their s_t receive no
// gradient without evidence.
template <typename T>
NodeRef<T> aggregate_multitask(std::vector<TaskLossResult<T>>& results, const NodeRef<T>& s,
                               LossMode mode) {
    std::vector<int> included;
    for (int i = 0; i < static_cast<int>(results.size()); ++i)
        if (!results[static_cast<std::size_t>(i)].skipped) included.push_back(i);
    if (included.empty()) throw std::logic_error("aggregate_multitask: every task skipped");
    if (s->value.numel() != static_cast<std::int64_t>(results.size()))
        throw std::invalid_argument("uncertainty parameter count != task count");

    double total = 0.0;
    for (int i : included) {
        auto& r = results[static_cast<std::size_t>(i)];
        const double st = static_cast<double>(s->value[i]);
        r.s_value = st;
        if (mode == LossMode::uncertainty)
            r.weighted_value = std::exp(-st) * r.raw_value + st / 2.0;
        else
            r.weighted_value = r.raw_value;
        total += r.weighted_value;
    }

    Tensor<T> v({1});
    v[0] = static_cast<T>(total);
    auto node = make_node(std::move(v));
    bool needs = s->requires_grad && mode == LossMode::uncertainty;
    for (int i : included) needs = needs || results[static_cast<std::size_t>(i)].raw->requires_grad;
    if (needs) {
        node->requires_grad = true;
        std::vector<NodeRef<T>> raws;
        for (int i : included) {
            raws.push_back(results[static_cast<std::size_t>(i)].raw);
            node->parents.push_back(results[static_cast<std::size_t>(i)].raw);
        }
        node->parents.push_back(s);
        std::vector<double> raw_values;
        for (int i : included) raw_values.push_back(results[static_cast<std::size_t>(i)].raw_value);
        auto inc = included;
        node->backward_fn = [raws, s, inc, raw_values, mode](Node<T>& self) {
            const T g = self.grad[0];
            for (std::size_t k = 0; k < raws.size(); ++k) {
                const double st = static_cast<double>(s->value[inc[k]]);
                const T w = mode == LossMode::uncertainty ? static_cast<T>(std::exp(-st)) : T(1);
                if (raws[k]->requires_grad) raws[k]->ensure_grad()[0] += g * w;
            }
            if (s->requires_grad && mode == LossMode::uncertainty) {
                T* gs = s->ensure_grad().data();
                for (std::size_t k = 0; k < raws.size(); ++k) {
                    const double st = static_cast<double>(s->value[inc[k]]);
                    gs[inc[k]] += g * static_cast<T>(-std::exp(-st) * raw_values[k] + 0.5);
                }
            }
        };
    }
    return node;
}

// --- batch assembly -----------------------------------------------------------

template <typename T>
struct PretrainBatch {
    Tensor<T> input;        // (N,12,S,S) standardized optical, missing zeroed
    Tensor<T> input_valid;  // (N,1,S,S) 1 = valid optical pixel
    std::map<std::string, Tensor<T>> cont_targets;             // (N,C,S,S)
    std::map<std::string, Tensor<std::int32_t>> label_targets; // (N,1,S,S)
    std::map<std::string, Tensor<T>> image_targets;            // (N,C)
    std::map<std::string, Tensor<std::int32_t>> image_labels;  // (N)
    std::vector<mask::PatchMask> masks;  // one shared mask per sample
    mask::PatchGrid grid;
};

// Crops every pixel-level raster of a standardized sample to a window.
inline schema::MultiModalSample crop_sample(const schema::MultiModalSample& s, int y0, int x0,
                                            int size) {
    schema::MultiModalSample out = s;
    auto crop_f = [&](const Tensor<float>& t) {
        Tensor<float> c({t.dim(0), size, size});
        for (std::int64_t ch = 0; ch < t.dim(0); ++ch)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    c[(ch * size + y) * size + x] = t[(ch * t.dim(1) + y0 + y) * t.dim(2) + x0 + x];
        return c;
    };
    for (auto& [name, t] : out.pixel) t = crop_f(t);
    for (auto& [name, t] : out.pixel_labels) {
        Tensor<std::int32_t> c({1, size, size});
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                c[y * size + x] = t[(y0 + y) * t.dim(2) + x0 + x];
        t = c;
    }
    if (out.optical_valid.defined()) {
        Tensor<std::uint8_t> c({size, size});
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                c[y * size + x] = out.optical_valid[(y0 + y) * out.optical_valid.dim(1) + x0 + x];
        out.optical_valid = c;
    }
    return out;
}

// Assembles batch tensors from standardized, already-cropped samples. The
// sentinel-2 reconstruction target is patch-normalized; other continuous
// pixel targets keep their global standardization unless
// `patch_norm_all_continuous` is set.
template <typename T>
PretrainBatch<T> build_pretrain_batch(const std::vector<schema::MultiModalSample>& samples,
                                      const std::vector<schema::TaskSpec>& tasks,
                                      const mask::PatchGrid& grid,
                                      std::vector<mask::PatchMask> masks,
                                      bool patch_norm_all_continuous = false) {
    const std::int64_t N = static_cast<std::int64_t>(samples.size());
    const int S = grid.image_size;
    PretrainBatch<T> b;
    b.grid = grid;
    b.masks = std::move(masks);
    b.input = Tensor<T>({N, 12, S, S});
    b.input_valid = Tensor<T>({N, 1, S, S});

    for (std::int64_t n = 0; n < N; ++n) {
        const auto& s = samples[static_cast<std::size_t>(n)];
        const auto& s2 = s.pixel.at("sentinel2");
        std::copy(s2.data(), s2.data() + s2.numel(), b.input.data() + n * s2.numel());
        for (std::int64_t i = 0; i < S * S; ++i)
            b.input_valid[n * S * S + i] = s.optical_valid.defined() ? T(s.optical_valid[i]) : T(1);
    }

    for (const auto& task : tasks) {
        if (task.loss_kind == schema::LossKind::masked_regression) {
            const auto& name = task.targets[0].modality;
            const std::int64_t C = task.output_channels;
            Tensor<T> tgt({N, C, S, S});
            const bool pn = name == "sentinel2" || patch_norm_all_continuous;
            for (std::int64_t n = 0; n < N; ++n) {
                Tensor<float> r = samples[static_cast<std::size_t>(n)].pixel.at(name);
                if (pn) r = mask::patch_normalize(r, grid);
                for (std::int64_t i = 0; i < r.numel(); ++i)
                    tgt[n * C * S * S + i] = static_cast<T>(r[i]);
            }
            b.cont_targets[task.task_id] = std::move(tgt);
        } else if (task.loss_kind == schema::LossKind::masked_classification) {
            const auto& name = task.targets[0].modality;
            Tensor<std::int32_t> tgt({N, 1, S, S});
            for (std::int64_t n = 0; n < N; ++n) {
                const auto& r = samples[static_cast<std::size_t>(n)].pixel_labels.at(name);
                std::copy(r.data(), r.data() + r.numel(), tgt.data() + n * S * S);
            }
            b.label_targets[task.task_id] = std::move(tgt);
        } else if (task.loss_kind == schema::LossKind::image_regression) {
            const std::int64_t C = task.output_channels;
            Tensor<T> tgt({N, C});
            for (std::int64_t n = 0; n < N; ++n) {
                std::int64_t c = 0;
                for (const auto& tt : task.targets) {
                    const auto& v = samples[static_cast<std::size_t>(n)].image.at(tt.modality);
                    for (int k = 0; k < tt.band_count; ++k)
                        tgt[n * C + c++] = static_cast<T>(v[static_cast<std::size_t>(tt.band_offset + k)]);
                }
            }
            b.image_targets[task.task_id] = std::move(tgt);
        } else {
            Tensor<std::int32_t> tgt({N});
            for (std::int64_t n = 0; n < N; ++n)
                tgt[n] = samples[static_cast<std::size_t>(n)].image_labels.at(task.targets[0].modality);
            b.image_labels[task.task_id] = std::move(tgt);
        }
    }
    return b;
}

template <typename T>
struct PretrainLossOutput {
    NodeRef<T> total;
    std::vector<TaskLossResult<T>> tasks;
    NodeRef<T> input;  // the input leaf (for isolation checks)
    std::map<std::string, NodeRef<T>> target_nodes;  // continuous targets as leaves
};

// Full forward + multi-task loss for one batch. The same per-sample mask is
// applied to the input and every pixel-level target.
template <typename T>
PretrainLossOutput<T> multitask_pretrain_loss(const model::MPMAE<T>& net, PretrainBatch<T>& batch,
                                              const std::vector<schema::TaskSpec>& tasks,
                                              const NodeRef<T>& s_params, LossMode mode,
                                              bool input_requires_grad = false,
                                              bool targets_require_grad = false) {
    const std::int64_t N = batch.input.dim(0);
    const int S = batch.grid.image_size;
    PretrainLossOutput<T> out;
    out.input = make_node(batch.input, input_requires_grad);

    auto enc = net.encode(out.input, &batch.masks);
    auto dense = net.fill_tokens(enc.tokens, batch.masks);

    // masked-pixel map (1 = masked) shared across tasks
    Tensor<T> masked_px({N, 1, S, S});
    for (std::int64_t n = 0; n < N; ++n) {
        auto up = mask::upsample_mask_to_pixels(batch.masks[static_cast<std::size_t>(n)], batch.grid);
        for (std::int64_t i = 0; i < S * S; ++i) masked_px[n * S * S + i] = T(up[i]);
    }

    for (const auto& task : tasks) {
        TaskLossResult<T> r;
        r.task_id = task.task_id;
        const auto& dec = net.decoder_for(task.task_id);

        if (task.loss_kind == schema::LossKind::masked_regression) {
            auto pred = net.decode_pixel(dec, dense);
            auto target = make_node(batch.cont_targets.at(task.task_id), targets_require_grad);
            out.target_nodes[task.task_id] = target;
            const std::int64_t C = task.output_channels;
            Tensor<T> w({N, C, S, S});
            const bool use_valid = task.targets[0].modality == "sentinel2";
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t c = 0; c < C; ++c)
                    for (std::int64_t i = 0; i < S * S; ++i)
                        w[(n * C + c) * S * S + i] =
                            masked_px[n * S * S + i] *
                            (use_valid ? batch.input_valid[n * S * S + i] : T(1));
            auto l = ops::masked_mse_loss(pred, target, w);
            if (l.count > 0) {
                r.raw = l.node;
                r.raw_value = static_cast<double>(l.node->value[0]);
                r.count = l.count;
                r.skipped = false;
            }
        } else if (task.loss_kind == schema::LossKind::masked_classification) {
            auto pred = net.decode_pixel(dec, dense);
            const auto& spec_nd = task.targets[0].modality == "dynamic_world" ? 0 : -1;
            auto l = ops::masked_ce_loss(pred, batch.label_targets.at(task.task_id), masked_px,
                                         spec_nd);
            if (l.count > 0) {
                r.raw = l.node;
                r.raw_value = static_cast<double>(l.node->value[0]);
                r.count = l.count;
                r.skipped = false;
            }
        } else if (task.loss_kind == schema::LossKind::image_regression) {
            auto pred = net.decode_image(dec, dense, batch.masks);
            auto target = make_node(batch.image_targets.at(task.task_id), targets_require_grad);
            out.target_nodes[task.task_id] = target;
            Tensor<T> valid({N});
            for (std::int64_t n = 0; n < N; ++n) {
                bool ok = true;
                for (std::int64_t c = 0; c < target->value.dim(1); ++c)
                    ok = ok && std::isfinite(static_cast<double>(target->value[n * target->value.dim(1) + c]));
                valid[n] = ok ? T(1) : T(0);
            }
            auto l = ops::image_mse_loss(pred, target, valid);
            if (l.count > 0) {
                r.raw = l.node;
                r.raw_value = static_cast<double>(l.node->value[0]);
                r.count = l.count;
                r.skipped = false;
            }
        } else {
            auto pred = net.decode_image(dec, dense, batch.masks);
            auto l = ops::image_ce_loss(pred, batch.image_labels.at(task.task_id));
            if (l.count > 0) {
                r.raw = l.node;
                r.raw_value = static_cast<double>(l.node->value[0]);
                r.count = l.count;
                r.skipped = false;
            }
        }
        out.tasks.push_back(std::move(r));
    }

    out.total = aggregate_multitask(out.tasks, s_params, mode);
    return out;
}

}  // namespace mpmae::loss
