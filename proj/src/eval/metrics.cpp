#include "mpmae/eval/metrics.hpp"

#include <stdexcept>

namespace mpmae::eval {

double micro_f1(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& label) {
    if (pred.numel() == 0) throw std::invalid_argument("micro_f1: empty input");
    if (pred.shape() != label.shape()) throw std::invalid_argument("micro_f1: shape mismatch");
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const bool p = pred[i] != 0, y = label[i] != 0;
        tp += p && y;
        fp += p && !y;
        fn += !p && y;
    }
    const double denom = 2.0 * tp + fp + fn;
    return denom == 0.0 ? 1.0 : 2.0 * tp / denom;
}

double overall_accuracy(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& label) {
    if (pred.empty() || pred.size() != label.size())
        throw std::invalid_argument("overall_accuracy: empty or mismatched input");
    std::int64_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == label[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double macro_iou(const Tensor<std::int32_t>& pred, const Tensor<std::int32_t>& label, int num_classes,
                 int ignore_label) {
    if (pred.numel() == 0) throw std::invalid_argument("macro_iou: empty input");
    if (pred.shape() != label.shape()) throw std::invalid_argument("macro_iou: shape mismatch");
    std::vector<std::int64_t> tp(static_cast<std::size_t>(num_classes), 0),
        fp(static_cast<std::size_t>(num_classes), 0), fn(static_cast<std::size_t>(num_classes), 0);
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const std::int32_t y = label[i];
        if (y == ignore_label) continue;
        const std::int32_t p = pred[i];
        if (y < 0 || y >= num_classes || p < 0 || p >= num_classes)
            throw std::invalid_argument("macro_iou: label outside class range");
        if (p == y) {
            tp[static_cast<std::size_t>(y)] += 1;
        } else {
            fp[static_cast<std::size_t>(p)] += 1;
            fn[static_cast<std::size_t>(y)] += 1;
        }
    }
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (c == ignore_label) continue;
        const std::int64_t denom = tp[static_cast<std::size_t>(c)] + fp[static_cast<std::size_t>(c)] +
                                   fn[static_cast<std::size_t>(c)];
        if (denom == 0) continue;  // absent from both prediction and label
        sum += static_cast<double>(tp[static_cast<std::size_t>(c)]) / static_cast<double>(denom);
        ++counted;
    }
    return counted == 0 ? 1.0 : sum / counted;
}

}  // namespace mpmae::eval
