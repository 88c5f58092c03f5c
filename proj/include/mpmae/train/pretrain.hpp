#pragma once

#include <chrono>
#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>

#include "mpmae/loss/losses.hpp"
#include "mpmae/synth/synth.hpp"
#include "mpmae/train/checkpoint.hpp"
#include "mpmae/train/optimizer.hpp"

namespace mpmae::train {

struct NumericFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PretrainConfig {
    int epochs = 200;
    double base_lr = 1.5e-4;
    int effective_batch = 256;  // paper default 4096; desk-scale 256
    int micro_batch = 0;        // 0 = effective_batch (no accumulation)
    int warmup_epochs = 20;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double masking_ratio = 0.6;
    loss::LossMode loss_mode = loss::LossMode::uncertainty;
    bool freeze_uncertainty = false;
    int crop_size = 56;
    int patch_size = 8;
    std::vector<int> widths = {20, 40, 80, 160};  // Pico; Atto = {40,80,160,320}
    std::vector<int> depths = {2, 2, 6, 2};
    int decoder_width = 256;
    std::string tasks = "all";  // all | s2 | pixel | image
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // epochs; 0 = final only
    std::string split = "pretrain";
    bool patch_norm_all_continuous = false;

    nlohmann::json to_json() const {
        return {{"epochs", epochs},
                {"base_lr", base_lr},
                {"effective_batch", effective_batch},
                {"micro_batch", micro_batch},
                {"warmup_epochs", warmup_epochs},
                {"weight_decay", weight_decay},
                {"beta1", beta1},
                {"beta2", beta2},
                {"masking_ratio", masking_ratio},
                {"loss_mode", loss::loss_mode_name(loss_mode)},
                {"freeze_uncertainty", freeze_uncertainty},
                {"crop_size", crop_size},
                {"patch_size", patch_size},
                {"widths", widths},
                {"depths", depths},
                {"decoder_width", decoder_width},
                {"tasks", tasks},
                {"seed", seed},
                {"checkpoint_every", checkpoint_every},
                {"split", split},
                {"patch_norm_all_continuous", patch_norm_all_continuous}};
    }

    static PretrainConfig from_json(const nlohmann::json& j) {
        PretrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.base_lr = j.value("base_lr", c.base_lr);
        c.effective_batch = j.value("effective_batch", c.effective_batch);
        c.micro_batch = j.value("micro_batch", c.micro_batch);
        c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.masking_ratio = j.value("masking_ratio", c.masking_ratio);
        c.loss_mode = j.value("loss_mode", std::string("uncertainty")) == "equal"
                          ? loss::LossMode::equal
                          : loss::LossMode::uncertainty;
        c.freeze_uncertainty = j.value("freeze_uncertainty", c.freeze_uncertainty);
        c.crop_size = j.value("crop_size", c.crop_size);
        c.patch_size = j.value("patch_size", c.patch_size);
        c.widths = j.value("widths", c.widths);
        c.depths = j.value("depths", c.depths);
        c.decoder_width = j.value("decoder_width", c.decoder_width);
        c.tasks = j.value("tasks", c.tasks);
        c.seed = j.value("seed", c.seed);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.split = j.value("split", c.split);
        c.patch_norm_all_continuous = j.value("patch_norm_all_continuous", c.patch_norm_all_continuous);
        return c;
    }
};

inline std::vector<schema::TaskSpec> tasks_for_preset(const std::string& preset,
                                                      const schema::ModalityRegistry& reg) {
    auto all = schema::build_default_tasks(reg);
    auto pick = [&](std::initializer_list<const char*> ids) {
        std::vector<schema::TaskSpec> out;
        for (const char* id : ids)
            for (const auto& t : all)
                if (t.task_id == id) out.push_back(t);
        return out;
    };
    if (preset == "all") return all;
    if (preset == "s2") return pick({"sentinel2"});
    if (preset == "pixel")
        return pick({"sentinel2", "sentinel1", "aster", "canopy_height", "dynamic_world",
                     "esa_worldcover"});
    if (preset == "image")
        return pick({"sentinel2", "biome", "ecoregion", "climate", "latitude", "longitude", "month"});
    std::string valid = "valid task presets: all, s2, pixel, image";
    throw schema::ConfigError("unknown task preset '" + preset + "'; " + valid);
}

struct EpochLog {
    int epoch = 0;
    double total_loss = 0.0;
    std::vector<double> task_raw;       // mean raw loss per task (NaN-free; 0 if always skipped)
    std::vector<double> task_s;         // s_t at epoch end
    std::vector<double> task_weighted;  // mean weighted contribution
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<std::string> task_ids;
    std::vector<EpochLog> epochs;

    // Deterministic CSVs (wall time goes to a separate timing file so that
    // same-seed runs produce identical logs).
    void write(const std::string& dir) const {
        std::ofstream t(dir + "/train_log.csv", std::ios::trunc);
        t << "epoch,total_loss,lr\n";
        t << std::setprecision(10);
        for (const auto& e : epochs) t << e.epoch << "," << e.total_loss << "," << e.lr << "\n";
        std::ofstream k(dir + "/task_log.csv", std::ios::trunc);
        k << "epoch,task_id,raw_loss,s_t,weighted\n";
        k << std::setprecision(10);
        for (const auto& e : epochs)
            for (std::size_t i = 0; i < task_ids.size(); ++i)
                k << e.epoch << "," << task_ids[i] << "," << e.task_raw[i] << "," << e.task_s[i]
                  << "," << e.task_weighted[i] << "\n";
        std::ofstream w(dir + "/timing.csv", std::ios::trunc);
        w << "epoch,wall_seconds\n";
        for (const auto& e : epochs) w << e.epoch << "," << e.wall_seconds << "\n";
    }
};

struct PretrainResult {
    std::string checkpoint_path;
    TrainLog log;
};

namespace detail {

// Deterministic per-(seed,epoch,sample) augmentation stream.
inline Rng aug_rng(std::uint64_t seed, int epoch, std::int64_t dataset_index) {
    return Rng(stream_seed(seed, "aug", static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(dataset_index)));
}

}  // namespace detail

template <typename T = float>
class PretrainRun {
public:
    PretrainRun(const synth::DatasetReader& reader, const PretrainConfig& cfg)
        : reader_(reader), cfg_(cfg), stats_(reader.stats()), registry_(reader.registry()) {
        tasks_ = tasks_for_preset(cfg.tasks, registry_);
        model::MPMAEConfig mc;
        mc.encoder.image_size = cfg.crop_size;
        mc.encoder.patch_size = cfg.patch_size;
        mc.encoder.widths = cfg.widths;
        mc.encoder.depths = cfg.depths;
        mc.decoder_width = cfg.decoder_width;
        net_ = std::make_unique<model::MPMAE<T>>(mc, tasks_, cfg.seed);
        s_ = net_->params().create("uncertainty.s",
                                   Tensor<T>::zeros({static_cast<std::int64_t>(tasks_.size())}));
        if (cfg.freeze_uncertainty) s_->requires_grad = false;
        typename AdamW<T>::Options opt;
        opt.beta1 = cfg.beta1;
        opt.beta2 = cfg.beta2;
        opt.weight_decay = cfg.weight_decay;
        optimizer_ = std::make_unique<AdamW<T>>(net_->params().all(), opt);
    }

    model::MPMAE<T>& net() { return *net_; }
    NodeRef<T> s_params() { return s_; }
    AdamW<T>& optimizer() { return *optimizer_; }
    const std::vector<schema::TaskSpec>& tasks() const { return tasks_; }

    // Loads and prepares one micro-batch: standardize, random-crop, mask.
    loss::PretrainBatch<T> prepare(const std::vector<std::int64_t>& ids, int epoch) {
        const int R = reader_.raster_size();
        const int S = cfg_.crop_size;
        if (S > R) throw schema::ConfigError("crop size exceeds raster size");
        std::vector<schema::MultiModalSample> samples(ids.size());
        std::vector<mask::PatchMask> masks(ids.size());
        const mask::PatchGrid grid(S, cfg_.patch_size);
        parallel_for(static_cast<std::int64_t>(ids.size()), [&](std::int64_t b, std::int64_t e) {
            for (std::int64_t k = b; k < e; ++k) {
                auto rng = detail::aug_rng(cfg_.seed, epoch, ids[static_cast<std::size_t>(k)]);
                auto s = reader_.get(ids[static_cast<std::size_t>(k)]);
                s = schema::standardize_sample(s, stats_, registry_);
                const int y0 = static_cast<int>(rng.uniform_int(R - S + 1));
                const int x0 = static_cast<int>(rng.uniform_int(R - S + 1));
                samples[static_cast<std::size_t>(k)] = loss::crop_sample(s, y0, x0, S);
                masks[static_cast<std::size_t>(k)] = mask::sample_mask(grid, cfg_.masking_ratio, rng);
            }
        });
        return loss::build_pretrain_batch<T>(samples, tasks_, grid, std::move(masks),
                                             cfg_.patch_norm_all_continuous);
    }

    PretrainResult run(const std::string& out_dir, const std::string& resume_path = "") {
        std::filesystem::create_directories(out_dir);
        const auto split = reader_.split(cfg_.split);
        const std::int64_t n = split.count;
        if (n <= 0) throw schema::ConfigError("empty pretraining split");
        const int eff = std::min<std::int64_t>(cfg_.effective_batch, n);
        const int micro = cfg_.micro_batch > 0 ? std::min(cfg_.micro_batch, eff) : eff;
        const std::int64_t steps_per_epoch = (n + eff - 1) / eff;
        const std::int64_t total_steps = steps_per_epoch * cfg_.epochs;
        const std::int64_t warmup_steps = steps_per_epoch * cfg_.warmup_epochs;
        const double peak_lr = cfg_.base_lr * static_cast<double>(eff) / 256.0;

        int epoch0 = 0;
        if (!resume_path.empty()) epoch0 = load(resume_path);

        TrainLog log;
        for (const auto& t : tasks_) log.task_ids.push_back(t.task_id);

        for (int epoch = epoch0; epoch < cfg_.epochs; ++epoch) {
            const auto t_start = std::chrono::steady_clock::now();
            std::vector<std::int64_t> order(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = split.offset + i;
            Rng perm(stream_seed(cfg_.seed, "perm", static_cast<std::uint64_t>(epoch)));
            perm.shuffle(order);

            EpochLog el;
            el.epoch = epoch;
            el.task_raw.assign(tasks_.size(), 0.0);
            el.task_weighted.assign(tasks_.size(), 0.0);
            std::vector<std::int64_t> task_hits(tasks_.size(), 0);
            double loss_sum = 0.0;
            double lr = 0.0;

            for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
                const std::int64_t lo = step * eff;
                const std::int64_t hi = std::min<std::int64_t>(n, lo + eff);
                optimizer_->zero_grad();
                double step_loss = 0.0;
                int micro_count = 0;
                for (std::int64_t mb = lo; mb < hi; mb += micro) ++micro_count;
                for (std::int64_t mb = lo; mb < hi; mb += micro) {
                    std::vector<std::int64_t> ids(order.begin() + mb,
                                                  order.begin() + std::min<std::int64_t>(hi, mb + micro));
                    auto batch = prepare(ids, epoch);
                    auto out = loss::multitask_pretrain_loss(*net_, batch, tasks_, s_, cfg_.loss_mode);
                    for (std::size_t t = 0; t < tasks_.size(); ++t) {
                        const auto& r = out.tasks[t];
                        if (r.skipped) continue;
                        if (!std::isfinite(r.raw_value))
                            throw NumericFailure("non-finite loss in task '" + r.task_id +
                                                 "' at epoch " + std::to_string(epoch));
                        el.task_raw[t] += r.raw_value;
                        el.task_weighted[t] += r.weighted_value;
                        task_hits[t] += 1;
                    }
                    step_loss += static_cast<double>(out.total->value[0]);
                    auto scaled = ops::scale(out.total, static_cast<T>(1.0 / micro_count));
                    backward(scaled);
                }
                lr = lr_schedule(static_cast<std::int64_t>(epoch) * steps_per_epoch + step, total_steps,
                                 warmup_steps, peak_lr);
                optimizer_->step(lr);
                loss_sum += step_loss / micro_count;
            }

            for (std::size_t t = 0; t < tasks_.size(); ++t) {
                if (task_hits[t] > 0) {
                    el.task_raw[t] /= static_cast<double>(task_hits[t]);
                    el.task_weighted[t] /= static_cast<double>(task_hits[t]);
                }
                el.task_s.push_back(static_cast<double>(s_->value[static_cast<std::int64_t>(t)]));
            }
            el.total_loss = loss_sum / static_cast<double>(steps_per_epoch);
            el.lr = lr;
            el.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            log.epochs.push_back(el);

            if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0 &&
                epoch + 1 < cfg_.epochs)
                save(out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".mpck", epoch + 1);
        }

        const std::string final_path = out_dir + "/checkpoint_final.mpck";
        save(final_path, cfg_.epochs);
        log.write(out_dir);
        return {final_path, std::move(log)};
    }

    void save(const std::string& path, int epoch) const {
        TensorArchive a;
        nlohmann::json meta;
        meta["kind"] = "mpmae_checkpoint";
        meta["epoch"] = epoch;
        meta["config"] = cfg_.to_json();
        meta["dataset"] = reader_.dir();
        meta["registry_hash"] = registry_.hash();
        meta["stats"] = stats_.to_json();
        std::vector<std::string> ids;
        for (const auto& t : tasks_) ids.push_back(t.task_id);
        meta["tasks"] = ids;
        // fixed mask stored for reproducible reconstruction dumps
        const mask::PatchGrid grid(cfg_.crop_size, cfg_.patch_size);
        Rng dump_rng(stream_seed(cfg_.seed, "dump_mask"));
        auto dump_mask = mask::sample_mask(grid, cfg_.masking_ratio, dump_rng);
        auto packed = mask::pack_mask(dump_mask);
        Tensor<std::uint8_t> pm({static_cast<std::int64_t>(packed.size())});
        std::copy(packed.begin(), packed.end(), pm.data());
        a.put("dump_mask", pm);
        meta["dump_mask_patches"] = grid.num_patches();
        meta["dump_mask_ratio"] = cfg_.masking_ratio;
        a.meta = meta.dump();
        put_params(a, net_->params());
        optimizer_->save_state(a);
        save_archive_atomic(a, path);
    }

    int load(const std::string& path) {
        auto a = TensorArchive::load(path);
        auto meta = nlohmann::json::parse(a.meta);
        load_params(a, net_->params());
        optimizer_->load_state(a);
        return meta.at("epoch").get<int>();
    }

private:
    const synth::DatasetReader& reader_;
    PretrainConfig cfg_;
    schema::BandStats stats_;
    schema::ModalityRegistry registry_;
    std::vector<schema::TaskSpec> tasks_;
    std::unique_ptr<model::MPMAE<T>> net_;
    NodeRef<T> s_;
    std::unique_ptr<AdamW<T>> optimizer_;
};

using PretrainRunF = PretrainRun<float>;

}  // namespace mpmae::train
