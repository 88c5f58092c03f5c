#pragma once

#include <nlohmann/json.hpp>

#include "mpmae/eval/downstream.hpp"
#include "mpmae/eval/metrics.hpp"
#include "mpmae/model/unet.hpp"
#include "mpmae/train/pretrain.hpp"

namespace mpmae::eval {

struct ProbeConfig {
    int epochs = 100;
    int batch = 128;  // paper effective batch 1024; desk-scale 128
    double base_lr = 2e-4;
    double weight_decay = 0.05;  // fine-tuning only; the probe head trains without decay
    int warmup_epochs = 5;
    std::uint64_t seed = 0;
    int seg_batch = 32;
    double seg_lr = 0.01;
    int seg_phase1_epochs = 50;
    int seg_phase2_epochs = 150;

    nlohmann::json to_json() const {
        return {{"epochs", epochs},           {"batch", batch},
                {"base_lr", base_lr},         {"weight_decay", weight_decay},
                {"warmup_epochs", warmup_epochs}, {"seed", seed},
                {"seg_batch", seg_batch},     {"seg_lr", seg_lr},
                {"seg_phase1_epochs", seg_phase1_epochs},
                {"seg_phase2_epochs", seg_phase2_epochs}};
    }
    static ProbeConfig from_json(const nlohmann::json& j) {
        ProbeConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch = j.value("batch", c.batch);
        c.base_lr = j.value("base_lr", c.base_lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
        c.seed = j.value("seed", c.seed);
        c.seg_batch = j.value("seg_batch", c.seg_batch);
        c.seg_lr = j.value("seg_lr", c.seg_lr);
        c.seg_phase1_epochs = j.value("seg_phase1_epochs", c.seg_phase1_epochs);
        c.seg_phase2_epochs = j.value("seg_phase2_epochs", c.seg_phase2_epochs);
        return c;
    }
};

struct MetricReport {
    std::string checkpoint_id;
    std::string task;
    std::string metric;
    std::string mode;  // lp | ft | ft-seg | lp-sweep
    std::string split = "test";
    double fraction = 1.0;
    std::uint64_t seed = 0;
    double value = 0.0;

    nlohmann::json to_json() const {
        return {{"checkpoint", checkpoint_id}, {"task", task},   {"metric", metric},
                {"mode", mode},                {"split", split}, {"fraction", fraction},
                {"seed", seed},                {"value", value}};
    }
};

// Model provenance for a probe: a pretraining checkpoint or a random
// initialization with the same architecture.
struct ProbeModelSpec {
    model::EncoderConfig encoder;
    schema::BandStats stats;
    std::string checkpoint_id;    // display name
    std::string checkpoint_path;  // empty = random init
    std::uint64_t init_seed = 0;
};

inline ProbeModelSpec spec_from_checkpoint(const std::string& path) {
    auto meta = train::checkpoint_meta(path);
    const auto cfg = train::PretrainConfig::from_json(meta.at("config"));
    ProbeModelSpec s;
    s.encoder.image_size = cfg.crop_size;
    s.encoder.patch_size = cfg.patch_size;
    s.encoder.widths = cfg.widths;
    s.encoder.depths = cfg.depths;
    s.stats = schema::BandStats::from_json(meta.at("stats"));
    s.checkpoint_path = path;
    s.checkpoint_id = std::filesystem::path(path).parent_path().filename().string();
    if (s.checkpoint_id.empty()) s.checkpoint_id = path;
    return s;
}

inline ProbeModelSpec spec_random(model::EncoderConfig enc, schema::BandStats stats,
                                  std::uint64_t seed = 1234) {
    ProbeModelSpec s;
    s.encoder = std::move(enc);
    s.stats = std::move(stats);
    s.checkpoint_id = "random-init";
    s.init_seed = seed;
    return s;
}

template <typename T>
void set_requires_grad(const model::ParamRegistry<T>& params, const std::string& prefix, bool value) {
    for (const auto& p : params.all())
        if (p->name.rfind(prefix, 0) == 0) p->requires_grad = value;
}

// Cached standardized inputs and labels for a split subset.
struct ProbeData {
    std::vector<Tensor<float>> inputs;  // (12,R,R)
    std::vector<std::int32_t> mc;
    std::vector<Tensor<std::uint8_t>> ml;
    std::vector<Tensor<std::int32_t>> seg;
};

inline ProbeData load_probe_data(const synth::DatasetReader& reader, const schema::BandStats& stats,
                                 const std::string& split, const std::vector<std::int64_t>& subset,
                                 const DownstreamTask& task) {
    const auto range = reader.split(split);
    std::vector<std::int64_t> ids;
    if (subset.empty()) {
        for (std::int64_t i = 0; i < range.count; ++i) ids.push_back(range.offset + i);
    } else {
        for (auto i : subset) ids.push_back(range.offset + i);
    }
    ProbeData d;
    d.inputs.resize(ids.size());
    d.mc.resize(ids.size());
    d.ml.resize(ids.size());
    d.seg.resize(ids.size());
    const auto& reg = reader.registry();
    parallel_for(static_cast<std::int64_t>(ids.size()), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t k = b; k < e; ++k) {
            auto s = reader.get(ids[static_cast<std::size_t>(k)]);
            auto z = schema::standardize_sample(s, stats, reg);
            d.inputs[static_cast<std::size_t>(k)] = z.pixel.at("sentinel2");
            const auto& dw = s.pixel_labels.at("dynamic_world");
            d.mc[static_cast<std::size_t>(k)] = derive_multiclass_label(dw);
            if (task.kind == TaskKind::multi_label) d.ml[static_cast<std::size_t>(k)] = derive_multilabel(dw);
            if (task.kind == TaskKind::segmentation) d.seg[static_cast<std::size_t>(k)] = dw;
        }
    });
    return d;
}

namespace detail {

inline NodeRef<float> batch_input(const std::vector<Tensor<float>>& inputs,
                                  const std::vector<std::int64_t>& ids) {
    const auto& first = inputs[static_cast<std::size_t>(ids[0])];
    Tensor<float> x({static_cast<std::int64_t>(ids.size()), first.dim(0), first.dim(1), first.dim(2)});
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto& t = inputs[static_cast<std::size_t>(ids[static_cast<std::size_t>(k)])];
        std::copy(t.data(), t.data() + t.numel(), x.data() + static_cast<std::int64_t>(k) * t.numel());
    }
    return make_node(std::move(x));
}

}  // namespace detail

// Pooled final-stage features for every sample (dense unmasked forward).
inline Tensor<float> extract_features(model::Classifier<float>& net,
                                      const std::vector<Tensor<float>>& inputs, int batch = 16) {
    set_requires_grad(net.params(), "", false);
    const std::int64_t n = static_cast<std::int64_t>(inputs.size());
    Tensor<float> feats;
    for (std::int64_t lo = 0; lo < n; lo += batch) {
        std::vector<std::int64_t> ids;
        for (std::int64_t i = lo; i < std::min(n, lo + batch); ++i) ids.push_back(i);
        auto x = detail::batch_input(inputs, ids);
        auto out = net.encoder().forward(x, nullptr);
        auto pooled = ops::global_mean_hw(out.tokens);
        if (!feats.defined()) feats = Tensor<float>({n, pooled->value.dim(1)});
        std::copy(pooled->value.data(), pooled->value.data() + pooled->value.numel(),
                  feats.data() + lo * pooled->value.dim(1));
    }
    set_requires_grad(net.params(), "", true);
    return feats;
}

struct HeadEval {
    double metric = 0.0;
    std::string metric_name;
};

// Trains a linear head on cached features and evaluates on test features
// (last-epoch checkpoint, per the protocol).
inline HeadEval train_linear_head(const Tensor<float>& train_feats, const ProbeData& train_data,
                                  const Tensor<float>& test_feats, const ProbeData& test_data,
                                  const DownstreamTask& task, const ProbeConfig& cfg) {
    const std::int64_t n = train_feats.dim(0), d = train_feats.dim(1);
    const int k = task.num_classes;
    model::ParamRegistry<float> reg;
    Rng rng(stream_seed(cfg.seed, "lp_head"));
    model::Linear<float> head(reg, "head", static_cast<int>(d), k, rng);
    train::AdamW<float> opt(reg.all(), {0.9, 0.999, 1e-8, 0.0});

    const int batch = std::min<std::int64_t>(cfg.batch, n);
    const std::int64_t steps_per_epoch = (n + batch - 1) / batch;
    const std::int64_t total = steps_per_epoch * cfg.epochs;
    const double peak = cfg.base_lr * batch / 256.0;

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng perm(stream_seed(cfg.seed, "lp_perm", static_cast<std::uint64_t>(epoch)));
        perm.shuffle(order);
        for (std::int64_t lo = 0; lo < n; lo += batch, ++step) {
            const std::int64_t hi = std::min(n, lo + batch);
            Tensor<float> xb({hi - lo, d});
            for (std::int64_t i = lo; i < hi; ++i)
                std::copy(train_feats.data() + order[static_cast<std::size_t>(i)] * d,
                          train_feats.data() + (order[static_cast<std::size_t>(i)] + 1) * d,
                          xb.data() + (i - lo) * d);
            auto logits = head(make_node(std::move(xb)));
            ops::LossOut<float> l;
            if (task.kind == TaskKind::multi_class) {
                Tensor<std::int32_t> yb({hi - lo});
                for (std::int64_t i = lo; i < hi; ++i)
                    yb[i - lo] = train_data.mc[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
                l = ops::image_ce_loss(logits, yb);
            } else {
                Tensor<float> yb({hi - lo, k});
                for (std::int64_t i = lo; i < hi; ++i)
                    for (int c = 0; c < k; ++c)
                        yb[(i - lo) * k + c] = static_cast<float>(
                            train_data.ml[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])][c]);
                l = ops::bce_logits_loss(logits, yb);
            }
            if (l.count == 0) continue;
            opt.zero_grad();
            backward(l.node);
            opt.step(train::lr_schedule(step, total, steps_per_epoch * cfg.warmup_epochs, peak));
        }
    }

    // final-epoch evaluation
    const std::int64_t m = test_feats.dim(0);
    HeadEval out;
    auto logits = head(make_node(test_feats.clone()));
    if (task.kind == TaskKind::multi_class) {
        std::vector<std::int32_t> pred(static_cast<std::size_t>(m)), truth(static_cast<std::size_t>(m));
        for (std::int64_t i = 0; i < m; ++i) {
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (logits->value[i * k + c] > logits->value[i * k + best]) best = c;
            pred[static_cast<std::size_t>(i)] = best;
            truth[static_cast<std::size_t>(i)] = test_data.mc[static_cast<std::size_t>(i)];
        }
        out.metric = overall_accuracy(pred, truth);
        out.metric_name = "overall_accuracy";
    } else {
        Tensor<std::uint8_t> pred({m, k}), truth({m, k});
        for (std::int64_t i = 0; i < m; ++i)
            for (int c = 0; c < k; ++c) {
                pred[i * k + c] = logits->value[i * k + c] > 0.0f ? 1 : 0;  // sigmoid > 0.5
                truth[i * k + c] = test_data.ml[static_cast<std::size_t>(i)][c];
            }
        out.metric = micro_f1(pred, truth);
        out.metric_name = "micro_f1";
    }
    return out;
}

// Builds the classifier, loading pretrained encoder weights when available.
inline std::unique_ptr<model::Classifier<float>> make_classifier(const ProbeModelSpec& spec,
                                                                 int num_classes,
                                                                 std::uint64_t head_seed) {
    auto net = std::make_unique<model::Classifier<float>>(spec.encoder, num_classes,
                                                          spec.checkpoint_path.empty()
                                                              ? spec.init_seed
                                                              : head_seed);
    if (!spec.checkpoint_path.empty())
        train::load_encoder_from_checkpoint(spec.checkpoint_path, net->params());
    return net;
}

// Linear probing: frozen encoder, single trained linear layer on pooled
// features. Optionally restricted to a training subset (label-efficiency).
inline MetricReport linear_probe(const ProbeModelSpec& spec, const synth::DatasetReader& reader,
                                 const DownstreamTask& task, const ProbeConfig& cfg,
                                 const std::vector<std::int64_t>& train_subset = {},
                                 double fraction = 1.0) {
    if (task.kind == TaskKind::segmentation)
        throw schema::ConfigError("linear_probe requires a classification task");
    auto net = make_classifier(spec, task.num_classes, stream_seed(cfg.seed, "probe_head"));
    const std::uint64_t before = train::params_hash(net->params(), "encoder.");

    auto train_data = load_probe_data(reader, spec.stats, "train", train_subset, task);
    auto test_data = load_probe_data(reader, spec.stats, "test", {}, task);
    auto train_feats = extract_features(*net, train_data.inputs);
    auto test_feats = extract_features(*net, test_data.inputs);

    auto eval = train_linear_head(train_feats, train_data, test_feats, test_data, task, cfg);

    const std::uint64_t after = train::params_hash(net->params(), "encoder.");
    if (before != after)
        throw std::logic_error("frozen-encoder contract violated during linear probing");

    MetricReport r;
    r.checkpoint_id = spec.checkpoint_id;
    r.task = task.name;
    r.metric = eval.metric_name;
    r.mode = "lp";
    r.fraction = fraction;
    r.seed = cfg.seed;
    r.value = eval.metric;
    return r;
}

// Full fine-tuning of encoder + head.
inline MetricReport fine_tune_classifier(const ProbeModelSpec& spec,
                                         const synth::DatasetReader& reader,
                                         const DownstreamTask& task, const ProbeConfig& cfg) {
    if (task.kind == TaskKind::segmentation)
        throw schema::ConfigError("fine_tune_classifier requires a classification task");
    auto net = make_classifier(spec, task.num_classes, stream_seed(cfg.seed, "ft_head"));
    auto train_data = load_probe_data(reader, spec.stats, "train", {}, task);
    auto test_data = load_probe_data(reader, spec.stats, "test", {}, task);

    train::AdamW<float> opt(net->params().all(), {0.9, 0.999, 1e-8, cfg.weight_decay});
    const std::int64_t n = static_cast<std::int64_t>(train_data.inputs.size());
    const int k = task.num_classes;
    const int batch = std::min<std::int64_t>(cfg.batch, n);
    const std::int64_t steps_per_epoch = (n + batch - 1) / batch;
    const std::int64_t total = steps_per_epoch * cfg.epochs;
    const double peak = cfg.base_lr * batch / 256.0;

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng perm(stream_seed(cfg.seed, "ft_perm", static_cast<std::uint64_t>(epoch)));
        perm.shuffle(order);
        for (std::int64_t lo = 0; lo < n; lo += batch, ++step) {
            const std::int64_t hi = std::min(n, lo + batch);
            std::vector<std::int64_t> ids(order.begin() + lo, order.begin() + hi);
            auto x = detail::batch_input(train_data.inputs, ids);
            auto logits = net->forward(x);
            ops::LossOut<float> l;
            if (task.kind == TaskKind::multi_class) {
                Tensor<std::int32_t> yb({hi - lo});
                for (std::size_t i = 0; i < ids.size(); ++i)
                    yb[static_cast<std::int64_t>(i)] = train_data.mc[static_cast<std::size_t>(ids[i])];
                l = ops::image_ce_loss(logits, yb);
            } else {
                Tensor<float> yb({hi - lo, k});
                for (std::size_t i = 0; i < ids.size(); ++i)
                    for (int c = 0; c < k; ++c)
                        yb[static_cast<std::int64_t>(i) * k + c] =
                            static_cast<float>(train_data.ml[static_cast<std::size_t>(ids[i])][c]);
                l = ops::bce_logits_loss(logits, yb);
            }
            if (l.count == 0) continue;
            if (!std::isfinite(static_cast<double>(l.node->value[0])))
                throw train::NumericFailure("non-finite fine-tuning loss at epoch " +
                                            std::to_string(epoch));
            opt.zero_grad();
            backward(l.node);
            opt.step(train::lr_schedule(step, total, steps_per_epoch * cfg.warmup_epochs, peak));
        }
    }

    // last-epoch test evaluation
    auto test_feats_logits = [&] {
        const std::int64_t m = static_cast<std::int64_t>(test_data.inputs.size());
        Tensor<float> out({m, k});
        set_requires_grad(net->params(), "", false);
        for (std::int64_t lo = 0; lo < m; lo += 16) {
            std::vector<std::int64_t> ids;
            for (std::int64_t i = lo; i < std::min(m, lo + 16); ++i) ids.push_back(i);
            auto logits = net->forward(detail::batch_input(test_data.inputs, ids));
            std::copy(logits->value.data(), logits->value.data() + logits->value.numel(),
                      out.data() + lo * k);
        }
        set_requires_grad(net->params(), "", true);
        return out;
    }();

    MetricReport r;
    r.checkpoint_id = spec.checkpoint_id;
    r.task = task.name;
    r.mode = "ft";
    r.seed = cfg.seed;
    const std::int64_t m = static_cast<std::int64_t>(test_data.inputs.size());
    if (task.kind == TaskKind::multi_class) {
        std::vector<std::int32_t> pred(static_cast<std::size_t>(m)), truth(static_cast<std::size_t>(m));
        for (std::int64_t i = 0; i < m; ++i) {
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (test_feats_logits[i * k + c] > test_feats_logits[i * k + best]) best = c;
            pred[static_cast<std::size_t>(i)] = best;
            truth[static_cast<std::size_t>(i)] = test_data.mc[static_cast<std::size_t>(i)];
        }
        r.metric = "overall_accuracy";
        r.value = overall_accuracy(pred, truth);
    } else {
        Tensor<std::uint8_t> pred({m, k}), truth({m, k});
        for (std::int64_t i = 0; i < m; ++i)
            for (int c = 0; c < k; ++c) {
                pred[i * k + c] = test_feats_logits[i * k + c] > 0.0f ? 1 : 0;
                truth[i * k + c] = test_data.ml[static_cast<std::size_t>(i)][c];
            }
        r.metric = "micro_f1";
        r.value = micro_f1(pred, truth);
    }
    return r;
}

// Class-stratified subsample of the train split (indices relative to the
// split); at least one sample per materialized class.
inline std::vector<std::int64_t> stratified_subset(const synth::DatasetReader& reader,
                                                   const schema::BandStats& stats, double fraction,
                                                   std::uint64_t seed) {
    const auto range = reader.split("train");
    std::map<std::int32_t, std::vector<std::int64_t>> by_class;
    for (std::int64_t i = 0; i < range.count; ++i) {
        const auto dw = reader.read_i32("dynamic_world", range.offset + i);
        by_class[derive_multiclass_label(dw)].push_back(i);
    }
    (void)stats;
    std::vector<std::int64_t> subset;
    for (auto& [cls, ids] : by_class) {
        if (cls < 0) continue;
        Rng rng(stream_seed(seed, "strat", static_cast<std::uint64_t>(cls)));
        rng.shuffle(ids);
        const auto want = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(ids.size()))));
        for (std::int64_t i = 0; i < std::min<std::int64_t>(want, static_cast<std::int64_t>(ids.size())); ++i)
            subset.push_back(ids[static_cast<std::size_t>(i)]);
    }
    std::sort(subset.begin(), subset.end());
    return subset;
}

// LP at each training fraction against a fixed test split.
inline std::vector<MetricReport> label_efficiency_sweep(const std::vector<ProbeModelSpec>& specs,
                                                        const synth::DatasetReader& reader,
                                                        const DownstreamTask& task,
                                                        const std::vector<double>& fractions,
                                                        const ProbeConfig& cfg) {
    std::vector<MetricReport> out;
    for (const auto& spec : specs) {
        for (double f : fractions) {
            std::vector<std::int64_t> subset;
            if (f < 1.0) subset = stratified_subset(reader, spec.stats, f, cfg.seed);
            auto r = linear_probe(spec, reader, task, cfg, subset, f);
            r.mode = "lp-sweep";
            out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace mpmae::eval
