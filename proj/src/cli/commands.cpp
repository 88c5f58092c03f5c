#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "mpmae/cli/cli.hpp"
#include "mpmae/eval/segment.hpp"
#include "mpmae/report/report.hpp"
#include "mpmae/train/pretrain.hpp"

#ifndef MPMAE_VERSION_STRING
#define MPMAE_VERSION_STRING "0.1.0-unknown"
#endif

namespace mpmae::cli {

namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& section) {
    if (!j.is_object()) throw schema::ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, v] : j.items())
        if (!allowed.count(key))
            throw schema::ConfigError("unknown key '" + key + "' in config section '" + section + "'");
}

std::uint64_t resolve_seed(const nlohmann::json& cfg) {
    if (const char* env = std::getenv("MPMAE_SEED")) return std::stoull(env);
    return cfg.value("seed", std::uint64_t{42});
}

const std::set<std::string> kTopKeys = {"seed", "output", "world", "gen", "pretrain", "eval", "report"};
const std::set<std::string> kWorldKeys = {"seed",        "raster_size",     "world_size",
                                          "num_latent_fields", "smoothness", "biome_count",
                                          "ecoregion_count",   "s2_noise",   "s1_noise",
                                          "canopy_noise", "missing_fraction", "nodata_fraction"};
const std::set<std::string> kGenKeys = {"out", "pretrain", "train", "val", "test", "force"};
const std::set<std::string> kPretrainKeys = {
    "data",          "out",        "epochs",       "base_lr",      "effective_batch",
    "micro_batch",   "warmup_epochs", "weight_decay", "beta1",     "beta2",
    "masking_ratio", "loss_mode",  "freeze_uncertainty", "crop_size", "patch_size",
    "widths",        "depths",     "decoder_width", "tasks",       "seed",
    "checkpoint_every", "split",   "patch_norm_all_continuous", "resume"};
const std::set<std::string> kEvalKeys = {"data",   "out",     "checkpoints", "tasks", "modes",
                                         "fractions", "seeds", "jobs",       "epochs", "batch",
                                         "base_lr", "weight_decay", "warmup_epochs", "seed",
                                         "seg_batch", "seg_lr", "seg_phase1_epochs",
                                         "seg_phase2_epochs"};
const std::set<std::string> kReportKeys = {"results", "out", "run", "checkpoint", "dataset",
                                           "dump_samples"};

}  // namespace

nlohmann::json load_config_file(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream f(path);
    if (!f) throw schema::ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw schema::ConfigError(std::string("config parse error: ") + e.what());
    }
    reject_unknown_keys(j, kTopKeys, "top-level");
    return j;
}

void write_provenance(const std::string& out_dir, const nlohmann::json& resolved) {
    std::filesystem::create_directories(out_dir);
    std::ofstream c(out_dir + "/config.json", std::ios::trunc);
    c << resolved.dump(2) << "\n";
    std::ofstream v(out_dir + "/VERSION", std::ios::trunc);
    v << "mpmae " << MPMAE_VERSION_STRING << "\n";
}

int cmd_gen(nlohmann::json cfg) {
    const auto world_j = cfg.value("world", nlohmann::json::object());
    const auto gen_j = cfg.value("gen", nlohmann::json::object());
    reject_unknown_keys(world_j, kWorldKeys, "world");
    reject_unknown_keys(gen_j, kGenKeys, "gen");

    auto world = synth::WorldConfig::from_json(world_j);
    if (!world_j.contains("seed")) world.seed = resolve_seed(cfg);
    synth::GenOptions gen;
    gen.pretrain = gen_j.value("pretrain", gen.pretrain);
    gen.train = gen_j.value("train", gen.train);
    gen.val = gen_j.value("val", gen.val);
    gen.test = gen_j.value("test", gen.test);
    const std::string out =
        gen_j.value("out", cfg.value("output", std::string("runs/out")) + "/dataset");

    if (std::filesystem::exists(out) && !std::filesystem::is_empty(out) &&
        !gen_j.value("force", false))
        throw schema::ConfigError("output directory '" + out +
                                  "' is not empty (pass --force to overwrite)");
    std::filesystem::remove_all(out);

    auto counts = synth::generate_dataset(world, gen, out);
    write_provenance(out, cfg);
    std::cout << "dataset written to " << out << "\n";
    std::cout << "pretrain-split samples per biome:\n";
    for (const auto& [biome, n] : counts) std::cout << "  biome " << biome << ": " << n << "\n";
    return kExitOk;
}

int cmd_pretrain(nlohmann::json cfg) {
    auto pj = cfg.value("pretrain", nlohmann::json::object());
    reject_unknown_keys(pj, kPretrainKeys, "pretrain");
    const std::string data = pj.value("data", std::string());
    if (data.empty()) throw schema::ConfigError("pretrain.data (dataset directory) is required");
    if (!std::filesystem::exists(data + "/manifest.json"))
        throw synth::CorruptDataset("dataset not found: " + data);

    auto pc = train::PretrainConfig::from_json(pj);
    if (!pj.contains("seed")) pc.seed = resolve_seed(cfg);
    const std::string out =
        pj.value("out", cfg.value("output", std::string("runs/out")) + "/pretrain");

    synth::DatasetReader reader(data);
    train::PretrainRun<float> run(reader, pc);
    const auto counts = run.net().count_parameters();
    std::cout << "tasks: " << run.tasks().size() << " | parameters: encoder " << counts.encoder
              << ", decoders " << counts.decoders << ", total " << counts.total << "\n";
    write_provenance(out, cfg);
    auto res = run.run(out, pj.value("resume", std::string()));
    for (const auto& e : res.log.epochs)
        std::cout << "epoch " << e.epoch << " loss " << e.total_loss << " lr " << e.lr << " ("
                  << e.wall_seconds << "s)\n";
    std::cout << "checkpoint: " << res.checkpoint_path << "\n";
    return kExitOk;
}

int cmd_eval(nlohmann::json cfg) {
    auto ej = cfg.value("eval", nlohmann::json::object());
    reject_unknown_keys(ej, kEvalKeys, "eval");
    const std::string data = ej.value("data", std::string());
    if (data.empty()) throw schema::ConfigError("eval.data (dataset directory) is required");
    std::vector<std::string> checkpoints = ej.value("checkpoints", std::vector<std::string>{});
    if (checkpoints.empty()) throw schema::ConfigError("eval.checkpoints must name at least one checkpoint");
    std::vector<std::string> modes = ej.value("modes", std::vector<std::string>{"lp"});
    std::vector<std::string> tasks = ej.value("tasks", std::vector<std::string>{"multiclass"});
    std::vector<double> fractions = ej.value("fractions", std::vector<double>{0.01, 0.05, 0.2, 1.0});
    std::vector<std::uint64_t> seeds = ej.value("seeds", std::vector<std::uint64_t>{});
    const std::string out = ej.value("out", cfg.value("output", std::string("runs/out")) + "/eval");
    const int jobs = ej.value("jobs", 1);

    eval::ProbeConfig pc = eval::ProbeConfig::from_json(ej);
    if (seeds.empty()) seeds = {resolve_seed(cfg)};

    synth::DatasetReader reader(data);
    write_provenance(out, cfg);

    struct Job {
        std::function<std::vector<eval::MetricReport>()> fn;
    };
    std::vector<Job> joblist;
    for (const auto& ckpt : checkpoints) {
        auto spec = eval::spec_from_checkpoint(ckpt);
        for (const auto& mode : modes) {
            for (auto seed : seeds) {
                auto pcs = pc;
                pcs.seed = seed;
                if (mode == "lp" || mode == "ft") {
                    for (const auto& tname : tasks) {
                        auto task = eval::make_downstream_task(tname);
                        if (task.kind == eval::TaskKind::segmentation) continue;
                        joblist.push_back({[=, &reader] {
                            return std::vector<eval::MetricReport>{
                                mode == "lp" ? eval::linear_probe(spec, reader, task, pcs)
                                             : eval::fine_tune_classifier(spec, reader, task, pcs)};
                        }});
                    }
                } else if (mode == "ft-seg") {
                    joblist.push_back({[=, &reader] {
                        auto res = eval::fine_tune_segmenter_two_phase(spec, reader, pcs, out);
                        std::cout << "  phase-1 test IoU " << res.phase1_test_iou
                                  << " | final test IoU " << res.report.value << "\n";
                        return std::vector<eval::MetricReport>{res.report};
                    }});
                } else if (mode == "sweep") {
                    joblist.push_back({[=, &reader] {
                        return eval::label_efficiency_sweep(
                            {spec}, reader, eval::make_downstream_task("multiclass"), fractions, pcs);
                    }});
                } else {
                    throw schema::ConfigError("unknown eval mode '" + mode +
                                              "' (valid: lp, ft, ft-seg, sweep)");
                }
            }
        }
    }

    std::vector<std::vector<eval::MetricReport>> results(joblist.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < joblist.size(); ++i) results[i] = joblist[i].fn();
    } else {
        // outer fan-out; inner ops run single-threaded so jobs do not contend
        ThreadPool::instance().set_size(1);
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (int t = 0; t < jobs; ++t)
            workers.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= joblist.size()) return;
                    results[i] = joblist[i].fn();
                }
            });
        for (auto& w : workers) w.join();
        ThreadPool::instance().set_size(static_cast<int>(std::thread::hardware_concurrency()));
    }

    std::vector<eval::MetricReport> flat;
    for (auto& r : results) flat.insert(flat.end(), r.begin(), r.end());
    report::append_results(out, flat);
    for (const auto& r : flat)
        std::cout << r.checkpoint_id << " " << r.task << " " << r.mode << " f=" << r.fraction
                  << " seed=" << r.seed << " " << r.metric << "=" << r.value << "\n";
    std::cout << "results appended to " << out << "/results.csv\n";
    return kExitOk;
}

int cmd_report(nlohmann::json cfg) {
    auto rj = cfg.value("report", nlohmann::json::object());
    reject_unknown_keys(rj, kReportKeys, "report");
    report::ReportOptions opts;
    opts.results_dir = rj.value("results", std::string());
    opts.out_dir = rj.value("out", cfg.value("output", std::string("runs/out")) + "/report");
    opts.run_dir = rj.value("run", std::string());
    opts.checkpoint = rj.value("checkpoint", std::string());
    opts.dataset = rj.value("dataset", std::string());
    opts.dump_samples = rj.value("dump_samples", 4);
    report::write_report(opts);
    write_provenance(opts.out_dir, cfg);
    std::cout << "report written to " << opts.out_dir << "/report.md\n";
    return kExitOk;
}

}  // namespace mpmae::cli
