#pragma once

#include <cstdint>
#include <vector>

#include "mpmae/core/tensor.hpp"

namespace mpmae::eval {

// Multi-label micro F1: TP/FP/FN pooled over all classes and samples.
// pred/label are (N,K) indicator matrices.
double micro_f1(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& label);

// Multi-class overall accuracy.
double overall_accuracy(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& label);

// Unweighted mean over classes of TP/(TP+FP+FN). Pixels whose true label is
// `ignore_label` are excluded; classes absent from both prediction and label
// (and the ignore class itself) are excluded from the mean.
double macro_iou(const Tensor<std::int32_t>& pred, const Tensor<std::int32_t>& label, int num_classes,
                 int ignore_label = -1);

}  // namespace mpmae::eval
