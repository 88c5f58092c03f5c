#pragma once

#include <string>

#include "mpmae/synth/synth.hpp"

namespace mpmae::eval {

enum class TaskKind { multi_class, multi_label, segmentation };

// Synthetic analogs of the three GEO-Bench task types, labelled from
// generator ground truth: dominant landcover, per-class presence, and the
// landcover raster itself.
struct DownstreamTask {
    std::string name;
    TaskKind kind = TaskKind::multi_class;
    int num_classes = 9;   // dynamic-world classes 1..9 mapped to 0..8
    int ignore_label = -1; // segmentation keeps raw labels 0..9 and ignores 0
};

DownstreamTask make_downstream_task(const std::string& name);

// Modal landcover of the window (labels 1..9 -> classes 0..8); -1 when every
// pixel is no-data.
std::int32_t derive_multiclass_label(const Tensor<std::int32_t>& dw);

// Classes occupying more than `threshold` of the valid pixels; (9) indicator.
Tensor<std::uint8_t> derive_multilabel(const Tensor<std::int32_t>& dw, double threshold = 0.05);

}  // namespace mpmae::eval
