#include "mpmae/eval/downstream.hpp"

namespace mpmae::eval {

DownstreamTask make_downstream_task(const std::string& name) {
    if (name == "multiclass") return {"multiclass", TaskKind::multi_class, 9, -1};
    if (name == "multilabel") return {"multilabel", TaskKind::multi_label, 9, -1};
    if (name == "segmentation") return {"segmentation", TaskKind::segmentation, 10, 0};
    throw std::invalid_argument("unknown downstream task '" + name +
                                "' (valid: multiclass, multilabel, segmentation)");
}

std::int32_t derive_multiclass_label(const Tensor<std::int32_t>& dw) {
    std::int64_t counts[10] = {0};
    for (std::int64_t i = 0; i < dw.numel(); ++i) counts[dw[i]] += 1;
    std::int32_t best = -1;
    std::int64_t best_n = 0;
    for (int c = 1; c <= 9; ++c)
        if (counts[c] > best_n) {
            best_n = counts[c];
            best = c - 1;
        }
    return best;
}

Tensor<std::uint8_t> derive_multilabel(const Tensor<std::int32_t>& dw, double threshold) {
    std::int64_t counts[10] = {0};
    std::int64_t valid = 0;
    for (std::int64_t i = 0; i < dw.numel(); ++i) {
        counts[dw[i]] += 1;
        valid += dw[i] != 0;
    }
    Tensor<std::uint8_t> out({9});
    for (int c = 1; c <= 9; ++c)
        out[c - 1] = valid > 0 && static_cast<double>(counts[c]) / static_cast<double>(valid) > threshold
                         ? 1
                         : 0;
    return out;
}

}  // namespace mpmae::eval
