#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mpmae/core/autograd.hpp"

namespace mpmae::testing {

// Central finite differences against the autograd result. `build` must
// re-run the forward pass from the current leaf values and return a scalar
// node. Returns the worst relative error over all checked elements.
inline double gradcheck(const std::vector<NodeRef<double>>& leaves,
                        const std::function<NodeRef<double>()>& build, double h = 1e-5,
                        int stride = 1) {
    for (auto& l : leaves)
        if (l->grad.defined()) l->grad.fill(0.0);
    auto loss = build();
    backward(loss);
    std::vector<Tensor<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& l : leaves) analytic.push_back(l->grad.defined() ? l->grad.clone()
                                                                : Tensor<double>::zeros(l->value.shape()));

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (std::int64_t i = 0; i < leaf->value.numel(); i += stride) {
            const double orig = leaf->value[i];
            leaf->value[i] = orig + h;
            const double fp = build()->value[0];
            leaf->value[i] = orig - h;
            const double fm = build()->value[0];
            leaf->value[i] = orig;
            const double num = (fp - fm) / (2 * h);
            const double ana = analytic[li][i];
            const double denom = std::max({std::abs(num), std::abs(ana), 1e-4});
            worst = std::max(worst, std::abs(num - ana) / denom);
        }
    }
    return worst;
}

}  // namespace mpmae::testing
