#include "mpmae/report/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mpmae/loss/losses.hpp"
#include "mpmae/train/pretrain.hpp"

namespace mpmae::report {

namespace {

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

}  // namespace

void append_results(const std::string& dir, const std::vector<eval::MetricReport>& reports) {
    std::filesystem::create_directories(dir);
    auto existing = std::filesystem::exists(dir + "/results.json") ? load_results(dir)
                                                                   : std::vector<eval::MetricReport>{};
    existing.insert(existing.end(), reports.begin(), reports.end());

    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : existing) arr.push_back(r.to_json());
    std::ofstream j(dir + "/results.json", std::ios::trunc);
    j << arr.dump(2) << "\n";

    std::ofstream c(dir + "/results.csv", std::ios::trunc);
    c << "checkpoint,task,metric,mode,split,fraction,seed,value\n" << std::setprecision(10);
    for (const auto& r : existing)
        c << r.checkpoint_id << "," << r.task << "," << r.metric << "," << r.mode << "," << r.split
          << "," << r.fraction << "," << r.seed << "," << r.value << "\n";
}

std::vector<eval::MetricReport> load_results(const std::string& dir) {
    std::ifstream f(dir + "/results.json");
    if (!f) throw synth::CorruptDataset("missing results store: " + dir + "/results.json");
    nlohmann::json arr;
    f >> arr;
    std::vector<eval::MetricReport> out;
    for (const auto& j : arr) {
        eval::MetricReport r;
        r.checkpoint_id = j.at("checkpoint").get<std::string>();
        r.task = j.at("task").get<std::string>();
        r.metric = j.at("metric").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        r.split = j.at("split").get<std::string>();
        r.fraction = j.at("fraction").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.value = j.at("value").get<double>();
        out.push_back(std::move(r));
    }
    return out;
}

std::string markdown_grid(const std::vector<eval::MetricReport>& reports) {
    // rows: pretraining variants; columns: task with FT/LP sub-columns
    std::set<std::string> ckpts, tasks;
    for (const auto& r : reports) {
        if (r.mode != "lp" && r.mode != "ft" && r.mode != "ft-seg") continue;
        ckpts.insert(r.checkpoint_id);
        tasks.insert(r.task);
    }
    auto cell = [&](const std::string& ck, const std::string& task, const std::string& mode) {
        double sum = 0;
        int n = 0;
        for (const auto& r : reports)
            if (r.checkpoint_id == ck && r.task == task && (r.mode == mode || (mode == "ft" && r.mode == "ft-seg"))) {
                sum += r.value;
                ++n;
            }
        return n ? fmt(sum / n) : std::string("—");
    };

    std::ostringstream os;
    os << "| pretrain |";
    for (const auto& t : tasks) os << " " << t << " FT | " << t << " LP |";
    os << "\n|---|";
    for (std::size_t i = 0; i < tasks.size(); ++i) os << "---|---|";
    os << "\n";
    for (const auto& ck : ckpts) {
        os << "| " << ck << " |";
        for (const auto& t : tasks) os << " " << cell(ck, t, "ft") << " | " << cell(ck, t, "lp") << " |";
        os << "\n";
    }
    return os.str();
}

std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label, bool log_x) {
    const int W = 640, H = 420, ml = 70, mr = 160, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double x = log_x ? std::log10(s.x[i]) : s.x[i];
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (ymax - ymin < 1e-12) {
        ymax += 0.5;
        ymin -= 0.5;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    auto px = [&](double x) {
        const double v = log_x ? std::log10(x) : x;
        return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr);
    };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
                                   "#aec7e8", "#ffbb78"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" << title
       << "</text>\n";
    // axes
    os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
       << x_label << "</text>\n";
    os << "<text x=\"18\" y=\"" << (mt + H - mb) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << (mt + H - mb) / 2 << ")\">" << y_label << "</text>\n";
    // y ticks
    for (int i = 0; i <= 4; ++i) {
        const double y = ymin + (ymax - ymin) * i / 4;
        os << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(y) << "\" x2=\"" << ml << "\" y2=\"" << py(y)
           << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << fmt(y, 3)
           << "</text>\n";
    }
    int ci = 0;
    for (const auto& s : series) {
        const std::string col = colors[ci % 12];
        std::ostringstream pts;
        for (std::size_t i = 0; i < s.x.size(); ++i)
            pts << px(s.x[i]) << "," << py(s.y[i]) << " ";
        os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << col
           << "\" stroke-width=\"2\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << col
               << "\"/>\n";
        os << "<text x=\"" << W - mr + 12 << "\" y=\"" << mt + 16 * ci + 12 << "\" fill=\"" << col << "\">"
           << s.label << "</text>\n";
        ++ci;
    }
    os << "</svg>\n";
    return os.str();
}

void write_ppm(const std::string& path, const Tensor<float>& rgb) {
    const std::int64_t H = rgb.dim(1), W = rgb.dim(2);
    // robust per-image scaling (2nd..98th percentile)
    std::vector<float> vals(rgb.data(), rgb.data() + rgb.numel());
    std::sort(vals.begin(), vals.end());
    const float lo = vals[static_cast<std::size_t>(0.02 * (vals.size() - 1))];
    const float hi = vals[static_cast<std::size_t>(0.98 * (vals.size() - 1))];
    const float scale = hi > lo ? 255.0f / (hi - lo) : 1.0f;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P6\n" << W << " " << H << "\n255\n";
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = (rgb[(c * H + y) * W + x] - lo) * scale;
                f.put(static_cast<char>(std::min(255.0f, std::max(0.0f, v))));
            }
}

namespace {

// composes [raw input | masked input | reconstruction | target] RGB strips
void write_reconstruction_dumps(const ReportOptions& opts) {
    synth::DatasetReader reader(opts.dataset);
    auto meta = train::checkpoint_meta(opts.checkpoint);
    auto cfg = train::PretrainConfig::from_json(meta.at("config"));
    auto stats = schema::BandStats::from_json(meta.at("stats"));
    const auto& reg = reader.registry();
    auto tasks = train::tasks_for_preset(cfg.tasks, reg);

    model::MPMAEConfig mc;
    mc.encoder.image_size = cfg.crop_size;
    mc.encoder.patch_size = cfg.patch_size;
    mc.encoder.widths = cfg.widths;
    mc.encoder.depths = cfg.depths;
    mc.decoder_width = cfg.decoder_width;
    model::MPMAE<float> net(mc, tasks, cfg.seed);
    auto arch = TensorArchive::load(opts.checkpoint);
    train::load_params(arch, net.params());
    eval::set_requires_grad(net.params(), "", false);

    // the mask stored with the checkpoint keeps dumps reproducible
    const mask::PatchGrid grid(cfg.crop_size, cfg.patch_size);
    auto packed = arch.get<std::uint8_t>("dump_mask");
    std::vector<std::uint8_t> bytes(packed.data(), packed.data() + packed.numel());
    auto dump_mask = mask::unpack_mask(bytes, grid.num_patches(), meta.at("dump_mask_ratio").get<double>());

    const auto split = reader.split("test").count > 0 ? reader.split("test") : reader.split(reader.split_names()[0]);
    const int S = cfg.crop_size;
    for (int k = 0; k < opts.dump_samples && k < split.count; ++k) {
        auto raw = reader.get(split.offset + k);
        auto std_s = schema::standardize_sample(raw, stats, reg);
        const int off = (reader.raster_size() - S) / 2;
        auto cropped = loss::crop_sample(std_s, off, off, S);
        std::vector<mask::PatchMask> masks = {dump_mask};
        auto batch = loss::build_pretrain_batch<float>({cropped}, tasks, grid, masks);
        auto x = make_node(batch.input);
        auto enc = net.encode(x, &batch.masks);
        auto dense = net.fill_tokens(enc.tokens, batch.masks);
        auto pred = net.decode_pixel(net.decoder_for("sentinel2"), dense);
        auto pixels = mask::upsample_mask_to_pixels(dump_mask, grid);

        // RGB composite from bands B4,B3,B2 (indices 3,2,1)
        const int bands[3] = {3, 2, 1};
        Tensor<float> strip({3, S, 4 * S});
        auto put = [&](int panel, int c, int y, int xx, float v) {
            strip[(c * S + y) * 4 * S + panel * S + xx] = v;
        };
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < S; ++y)
                for (int xx = 0; xx < S; ++xx) {
                    const std::int64_t i = (bands[c] * S + y) * S + xx;
                    const float in_v = batch.input[i];
                    const float tgt_v = batch.cont_targets.at("sentinel2")[i];
                    const float rec_v = pred->value[i];
                    const bool m = pixels[y * S + xx] != 0;
                    put(0, c, y, xx, in_v);
                    put(1, c, y, xx, m ? 0.0f : in_v);
                    put(2, c, y, xx, m ? rec_v : in_v);
                    put(3, c, y, xx, tgt_v);
                }
        write_ppm(opts.out_dir + "/reconstruction_" + std::to_string(k) + ".ppm", strip);
    }
}

}  // namespace

void write_report(const ReportOptions& opts) {
    std::filesystem::create_directories(opts.out_dir);
    std::ostringstream md;
    md << "# Experiment report\n\n";

    std::vector<eval::MetricReport> reports;
    if (!opts.results_dir.empty() && std::filesystem::exists(opts.results_dir + "/results.json")) {
        reports = load_results(opts.results_dir);
        md << "## Downstream comparison (FT / LP, test split)\n\n";
        md << markdown_grid(reports) << "\n";
    } else {
        md << "_No results store found; comparison grid omitted._\n\n";
    }

    // label-efficiency curves from sweep rows, averaged over seeds
    {
        std::map<std::string, std::map<double, std::pair<double, int>>> curves;
        for (const auto& r : reports)
            if (r.mode == "lp-sweep") {
                auto& cell = curves[r.checkpoint_id][r.fraction];
                cell.first += r.value;
                cell.second += 1;
            }
        if (!curves.empty()) {
            std::vector<Series> series;
            for (const auto& [ck, pts] : curves) {
                Series s;
                s.label = ck;
                for (const auto& [f, acc] : pts) {
                    s.x.push_back(f);
                    s.y.push_back(acc.first / acc.second);
                }
                series.push_back(std::move(s));
            }
            std::ofstream f(opts.out_dir + "/label_efficiency.svg", std::ios::trunc);
            f << svg_line_chart(series, "Label efficiency (linear probing)", "training fraction",
                                "metric", /*log_x=*/true);
            md << "## Label efficiency\n\n![label efficiency](label_efficiency.svg)\n\n";
        } else {
            md << "_No sweep rows in the results store; label-efficiency panel omitted._\n\n";
        }
    }

    // task-uncertainty curves from a pretraining run dir
    if (!opts.run_dir.empty() && std::filesystem::exists(opts.run_dir + "/task_log.csv")) {
        std::ifstream f(opts.run_dir + "/task_log.csv");
        std::string line;
        std::getline(f, line);  // header
        std::map<std::string, Series> by_task;
        while (std::getline(f, line)) {
            std::stringstream ss(line);
            std::string epoch, task, raw, st, weighted;
            std::getline(ss, epoch, ',');
            std::getline(ss, task, ',');
            std::getline(ss, raw, ',');
            std::getline(ss, st, ',');
            std::getline(ss, weighted, ',');
            auto& s = by_task[task];
            s.label = task;
            s.x.push_back(std::stod(epoch));
            s.y.push_back(std::stod(st));
        }
        std::vector<Series> series;
        for (auto& [t, s] : by_task) series.push_back(std::move(s));
        std::ofstream out(opts.out_dir + "/task_uncertainty.svg", std::ios::trunc);
        out << svg_line_chart(series, "Task uncertainty (s_t = log var) during pretraining", "epoch",
                              "s_t");
        md << "## Task uncertainty\n\n![task uncertainty](task_uncertainty.svg)\n\n";
    }

    if (!opts.checkpoint.empty() && !opts.dataset.empty()) {
        write_reconstruction_dumps(opts);
        md << "## Reconstructions\n\npanels: input | masked input | reconstruction | target "
              "(masked cells from the decoder, visible cells from the input)\n\n";
        for (int k = 0; k < opts.dump_samples; ++k)
            md << "- reconstruction_" << k << ".ppm\n";
    }

    std::ofstream f(opts.out_dir + "/report.md", std::ios::trunc);
    f << md.str();
}

}  // namespace mpmae::report
