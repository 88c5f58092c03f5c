#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpmae/eval/probe.hpp"

namespace mpmae::report {

// Append-only results store: results.json (array of report objects) plus a
// results.csv mirror, keyed by (checkpoint, task, mode, fraction, seed).
void append_results(const std::string& dir, const std::vector<eval::MetricReport>& reports);
std::vector<eval::MetricReport> load_results(const std::string& dir);

struct ReportOptions {
    std::string results_dir;              // results store to read
    std::string out_dir;                  // static files destination
    std::string run_dir;                  // pretraining run dir for s_t curves (optional)
    std::string checkpoint;               // checkpoint for reconstruction dumps (optional)
    std::string dataset;                  // dataset for reconstruction dumps
    int dump_samples = 4;
};

// Emits report.md (comparison grid), label_efficiency.svg, task_uncertainty.svg
// and reconstruction PPM grids, depending on what inputs are available.
void write_report(const ReportOptions& opts);

// --- low-level helpers (exposed for tests) ----------------------------------

std::string markdown_grid(const std::vector<eval::MetricReport>& reports);

struct Series {
    std::string label;
    std::vector<double> x, y;
};

std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label,
                           bool log_x = false);

void write_ppm(const std::string& path, const Tensor<float>& rgb);  // (3,H,W), robust-scaled

}  // namespace mpmae::report
