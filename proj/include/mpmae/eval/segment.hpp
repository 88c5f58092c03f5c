#pragma once

#include "mpmae/eval/probe.hpp"

namespace mpmae::eval {

struct SegResult {
    MetricReport report;
    double phase1_test_iou = 0.0;  // decoder-only endpoint
    std::uint64_t encoder_hash_before = 0;
    std::uint64_t encoder_hash_after_phase1 = 0;
    std::string phase1_checkpoint;
    std::string phase2_checkpoint;
};

namespace detail {

inline double evaluate_macro_iou(model::UNetSeg<float>& net, const ProbeData& data, int num_classes,
                                 int ignore_label) {
    set_requires_grad(net.params(), "", false);
    const std::int64_t m = static_cast<std::int64_t>(data.inputs.size());
    const std::int64_t hw = data.seg[0].dim(1) * data.seg[0].dim(2);
    Tensor<std::int32_t> pred({m, hw}), truth({m, hw});
    for (std::int64_t lo = 0; lo < m; lo += 8) {
        std::vector<std::int64_t> ids;
        for (std::int64_t i = lo; i < std::min(m, lo + 8); ++i) ids.push_back(i);
        auto logits = net.forward(batch_input(data.inputs, ids));
        const std::int64_t k = logits->value.dim(1);
        for (std::size_t b = 0; b < ids.size(); ++b)
            for (std::int64_t i = 0; i < hw; ++i) {
                int best = 0;
                for (int c = 1; c < k; ++c)
                    if (logits->value[(static_cast<std::int64_t>(b) * k + c) * hw + i] >
                        logits->value[(static_cast<std::int64_t>(b) * k + best) * hw + i])
                        best = c;
                pred[ids[b] * hw + i] = best;
                truth[ids[b] * hw + i] = data.seg[static_cast<std::size_t>(ids[b])][i];
            }
    }
    set_requires_grad(net.params(), "", true);
    return macro_iou(pred, truth, num_classes, ignore_label);
}

inline void train_seg_epochs(model::UNetSeg<float>& net, train::AdamW<float>& opt,
                             const ProbeData& data, const ProbeConfig& cfg, int epochs, double peak,
                             std::uint64_t perm_salt) {
    const std::int64_t n = static_cast<std::int64_t>(data.inputs.size());
    const int batch = std::min<std::int64_t>(cfg.seg_batch, n);
    const std::int64_t steps_per_epoch = (n + batch - 1) / batch;
    const std::int64_t total = steps_per_epoch * epochs;
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng perm(stream_seed(cfg.seed, "seg_perm", perm_salt, static_cast<std::uint64_t>(epoch)));
        perm.shuffle(order);
        for (std::int64_t lo = 0; lo < n; lo += batch, ++step) {
            const std::int64_t hi = std::min(n, lo + batch);
            std::vector<std::int64_t> ids(order.begin() + lo, order.begin() + hi);
            auto x = batch_input(data.inputs, ids);
            auto logits = net.forward(x);
            const std::int64_t S = logits->value.dim(2);
            Tensor<std::int32_t> yb({hi - lo, 1, S, S});
            for (std::size_t b = 0; b < ids.size(); ++b) {
                const auto& t = data.seg[static_cast<std::size_t>(ids[b])];
                std::copy(t.data(), t.data() + t.numel(),
                          yb.data() + static_cast<std::int64_t>(b) * S * S);
            }
            Tensor<float> all(yb.shape());
            all.fill(1.0f);
            auto l = ops::masked_ce_loss(logits, yb, all, 0);
            if (l.count == 0) continue;
            if (!std::isfinite(static_cast<double>(l.node->value[0])))
                throw train::NumericFailure("non-finite segmentation loss at epoch " +
                                            std::to_string(epoch));
            opt.zero_grad();
            backward(l.node);
            opt.step(train::lr_schedule(step, total, steps_per_epoch, peak));
        }
    }
}

}  // namespace detail

// Two-phase U-Net fine-tuning: decoder-only with a frozen encoder, then the
// full model. Macro-IoU on the test split from the last-epoch model.
inline SegResult fine_tune_segmenter_two_phase(const ProbeModelSpec& spec,
                                               const synth::DatasetReader& reader,
                                               const ProbeConfig& cfg,
                                               const std::string& archive_dir = "") {
    const auto task = make_downstream_task("segmentation");
    model::EncoderConfig enc = spec.encoder;
    model::UNetSeg<float> net(enc, task.num_classes,
                              spec.checkpoint_path.empty() ? spec.init_seed
                                                           : stream_seed(cfg.seed, "seg_head"));
    if (!spec.checkpoint_path.empty())
        train::load_encoder_from_checkpoint(spec.checkpoint_path, net.params());

    auto train_data = load_probe_data(reader, spec.stats, "train", {}, task);
    auto test_data = load_probe_data(reader, spec.stats, "test", {}, task);
    if (!archive_dir.empty()) std::filesystem::create_directories(archive_dir);

    SegResult res;
    res.encoder_hash_before = train::params_hash(net.params(), "encoder.");
    const double peak = cfg.seg_lr * std::min<std::int64_t>(cfg.seg_batch,
                                                            static_cast<std::int64_t>(
                                                                train_data.inputs.size())) /
                        256.0;

    // phase 1: frozen encoder, decoder only
    set_requires_grad(net.params(), "encoder.", false);
    {
        train::AdamW<float> opt(net.params().with_prefix("decoder."),
                                {0.9, 0.999, 1e-8, cfg.weight_decay});
        detail::train_seg_epochs(net, opt, train_data, cfg, cfg.seg_phase1_epochs, peak, 1);
    }
    res.encoder_hash_after_phase1 = train::params_hash(net.params(), "encoder.");
    if (res.encoder_hash_after_phase1 != res.encoder_hash_before)
        throw std::logic_error("frozen-encoder contract violated in segmentation phase 1");
    res.phase1_test_iou = detail::evaluate_macro_iou(net, test_data, task.num_classes, task.ignore_label);
    if (!archive_dir.empty()) {
        TensorArchive a;
        a.meta = "{\"kind\":\"seg_phase1\"}";
        train::put_params(a, net.params());
        res.phase1_checkpoint = archive_dir + "/seg_phase1.mpck";
        train::save_archive_atomic(a, res.phase1_checkpoint);
    }

    // phase 2: full fine-tuning
    set_requires_grad(net.params(), "", true);
    {
        train::AdamW<float> opt(net.params().all(), {0.9, 0.999, 1e-8, cfg.weight_decay});
        detail::train_seg_epochs(net, opt, train_data, cfg, cfg.seg_phase2_epochs, peak, 2);
    }
    if (!archive_dir.empty()) {
        TensorArchive a;
        a.meta = "{\"kind\":\"seg_phase2\"}";
        train::put_params(a, net.params());
        res.phase2_checkpoint = archive_dir + "/seg_phase2.mpck";
        train::save_archive_atomic(a, res.phase2_checkpoint);
    }

    res.report.checkpoint_id = spec.checkpoint_id;
    res.report.task = task.name;
    res.report.metric = "macro_iou";
    res.report.mode = "ft-seg";
    res.report.seed = cfg.seed;
    res.report.value = detail::evaluate_macro_iou(net, test_data, task.num_classes, task.ignore_label);
    return res;
}

}  // namespace mpmae::eval
