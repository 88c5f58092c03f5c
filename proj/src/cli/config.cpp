#include <iostream>

#include <CLI11.hpp>

#include "mpmae/cli/cli.hpp"
#include "mpmae/synth/synth.hpp"
#include "mpmae/train/pretrain.hpp"

namespace mpmae::cli {

namespace {

// helpers to push CLI overrides into config sections
template <typename T>
void set_if(nlohmann::json& section, const std::string& key, const std::optional<T>& v) {
    if (v) section[key] = *v;
}

}  // namespace

int dispatch(int argc, char** argv) {
    CLI::App app{"MP-MAE: multi-pretext masked autoencoder on synthetic multi-modal rasters"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON configuration file")->capture_default_str();

    // --- gen ---
    auto* gen = app.add_subcommand("gen", "generate a synthetic multi-modal dataset");
    gen->add_option("--config", config_path, "JSON configuration file");
    std::optional<std::string> gen_out;
    std::optional<std::int64_t> gen_samples, gen_train, gen_val, gen_test;
    std::optional<int> gen_biomes, gen_ecoregions, gen_raster;
    std::optional<std::uint64_t> gen_seed;
    bool gen_force = false;
    gen->add_option("--out", gen_out, "dataset directory");
    gen->add_option("--samples", gen_samples, "pretraining split size");
    gen->add_option("--train", gen_train, "downstream train split size");
    gen->add_option("--val", gen_val, "downstream val split size");
    gen->add_option("--test", gen_test, "downstream test split size");
    gen->add_option("--biomes", gen_biomes, "biome count");
    gen->add_option("--ecoregions", gen_ecoregions, "ecoregion count");
    gen->add_option("--raster", gen_raster, "raster size (pixels)");
    gen->add_option("--seed", gen_seed, "world seed");
    gen->add_flag("--force", gen_force, "overwrite a non-empty output directory");

    // --- pretrain ---
    auto* pre = app.add_subcommand("pretrain", "pretrain the MP-MAE");
    pre->add_option("--config", config_path, "JSON configuration file");
    std::optional<std::string> pre_data, pre_out, pre_tasks, pre_loss, pre_resume;
    std::optional<int> pre_epochs, pre_batch, pre_crop, pre_patch, pre_ckpt_every;
    std::optional<double> pre_lr, pre_ratio;
    std::optional<std::uint64_t> pre_seed;
    pre->add_option("--data", pre_data, "dataset directory");
    pre->add_option("--out", pre_out, "run output directory");
    pre->add_option("--tasks", pre_tasks, "task preset: all | s2 | pixel | image");
    pre->add_option("--loss", pre_loss, "loss mode: equal | uncertainty");
    pre->add_option("--epochs", pre_epochs, "pretraining epochs");
    pre->add_option("--batch", pre_batch, "effective batch size");
    pre->add_option("--crop", pre_crop, "crop size");
    pre->add_option("--patch", pre_patch, "patch size");
    pre->add_option("--lr", pre_lr, "base learning rate");
    pre->add_option("--mask-ratio", pre_ratio, "masking ratio in (0,1)");
    pre->add_option("--seed", pre_seed, "training seed");
    pre->add_option("--checkpoint-every", pre_ckpt_every, "checkpoint cadence (epochs)");
    pre->add_option("--resume", pre_resume, "checkpoint to resume from");

    // --- eval ---
    auto* ev = app.add_subcommand("eval", "downstream evaluation (LP / FT / segmentation / sweep)");
    ev->add_option("--config", config_path, "JSON configuration file");
    std::optional<std::string> ev_data, ev_out;
    std::vector<std::string> ev_ckpts, ev_modes, ev_tasks;
    std::vector<double> ev_fracs;
    std::vector<std::uint64_t> ev_seeds;
    std::optional<int> ev_epochs, ev_batch, ev_jobs;
    std::optional<double> ev_lr;
    ev->add_option("--data", ev_data, "dataset directory");
    ev->add_option("--out", ev_out, "results directory");
    ev->add_option("--checkpoint", ev_ckpts, "pretraining checkpoint(s)");
    ev->add_option("--mode", ev_modes, "lp | ft | ft-seg | sweep (repeatable)");
    ev->add_option("--task", ev_tasks, "multiclass | multilabel | segmentation (repeatable)");
    ev->add_option("--fractions", ev_fracs, "label-efficiency fractions");
    ev->add_option("--seeds", ev_seeds, "evaluation seeds");
    ev->add_option("--epochs", ev_epochs, "probe epochs");
    ev->add_option("--batch", ev_batch, "probe batch size");
    ev->add_option("--lr", ev_lr, "probe base learning rate");
    ev->add_option("--jobs", ev_jobs, "parallel evaluation jobs");

    // --- report ---
    auto* rep = app.add_subcommand("report", "tables and plots from a results store");
    rep->add_option("--config", config_path, "JSON configuration file");
    std::optional<std::string> rep_results, rep_out, rep_run, rep_ckpt, rep_dataset;
    std::optional<int> rep_dumps;
    rep->add_option("--results", rep_results, "results store directory");
    rep->add_option("--out", rep_out, "report output directory");
    rep->add_option("--run", rep_run, "pretraining run directory (task-uncertainty curves)");
    rep->add_option("--checkpoint", rep_ckpt, "checkpoint for reconstruction dumps");
    rep->add_option("--dataset", rep_dataset, "dataset for reconstruction dumps");
    rep->add_option("--dump-samples", rep_dumps, "number of reconstruction examples");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        nlohmann::json cfg = load_config_file(config_path);
        if (gen->parsed()) {
            auto& g = cfg["gen"];
            if (!g.is_object()) g = nlohmann::json::object();
            auto& w = cfg["world"];
            if (!w.is_object()) w = nlohmann::json::object();
            set_if(g, "out", gen_out);
            set_if(g, "pretrain", gen_samples);
            set_if(g, "train", gen_train);
            set_if(g, "val", gen_val);
            set_if(g, "test", gen_test);
            if (gen_force) g["force"] = true;
            set_if(w, "biome_count", gen_biomes);
            set_if(w, "ecoregion_count", gen_ecoregions);
            set_if(w, "raster_size", gen_raster);
            set_if(w, "seed", gen_seed);
            return cmd_gen(std::move(cfg));
        }
        if (pre->parsed()) {
            auto& p = cfg["pretrain"];
            if (!p.is_object()) p = nlohmann::json::object();
            set_if(p, "data", pre_data);
            set_if(p, "out", pre_out);
            set_if(p, "tasks", pre_tasks);
            set_if(p, "loss_mode", pre_loss);
            set_if(p, "epochs", pre_epochs);
            set_if(p, "effective_batch", pre_batch);
            set_if(p, "crop_size", pre_crop);
            set_if(p, "patch_size", pre_patch);
            set_if(p, "base_lr", pre_lr);
            set_if(p, "masking_ratio", pre_ratio);
            set_if(p, "seed", pre_seed);
            set_if(p, "checkpoint_every", pre_ckpt_every);
            set_if(p, "resume", pre_resume);
            return cmd_pretrain(std::move(cfg));
        }
        if (ev->parsed()) {
            auto& e = cfg["eval"];
            if (!e.is_object()) e = nlohmann::json::object();
            set_if(e, "data", ev_data);
            set_if(e, "out", ev_out);
            if (!ev_ckpts.empty()) e["checkpoints"] = ev_ckpts;
            if (!ev_modes.empty()) e["modes"] = ev_modes;
            if (!ev_tasks.empty()) e["tasks"] = ev_tasks;
            if (!ev_fracs.empty()) e["fractions"] = ev_fracs;
            if (!ev_seeds.empty()) e["seeds"] = ev_seeds;
            set_if(e, "epochs", ev_epochs);
            set_if(e, "batch", ev_batch);
            set_if(e, "base_lr", ev_lr);
            set_if(e, "jobs", ev_jobs);
            return cmd_eval(std::move(cfg));
        }
        if (rep->parsed()) {
            auto& r = cfg["report"];
            if (!r.is_object()) r = nlohmann::json::object();
            set_if(r, "results", rep_results);
            set_if(r, "out", rep_out);
            set_if(r, "run", rep_run);
            set_if(r, "checkpoint", rep_ckpt);
            set_if(r, "dataset", rep_dataset);
            set_if(r, "dump_samples", rep_dumps);
            return cmd_report(std::move(cfg));
        }
        return kExitConfig;
    } catch (const schema::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const synth::UnsupportedVersion& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const synth::CorruptDataset& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const IntegrityError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const train::ShapeMismatch& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const train::NumericFailure& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::logic_error& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return kExitNumeric;
    }
}

}  // namespace mpmae::cli
