#pragma once

// Independent naive implementations used as oracles. Deliberately written
// as plain loops with no shared code with the library's compute paths.

#include <cmath>
#include <cstdint>
#include <vector>

#include "mpmae/core/tensor.hpp"

namespace mpmae::testing {

// Dense NCHW convolution by direct summation (zero padding).
template <typename T>
Tensor<T> ref_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad,
                     int groups) {
    const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t Cout = w.dim(0), Cw = w.dim(1);
    const std::int64_t kh = w.dim(2), kw = w.dim(3);
    const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    const std::int64_t cin_per = Cin / groups, cout_per = Cout / groups;
    Tensor<T> out({N, Cout, Ho, Wo});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co) {
            const std::int64_t g = co / cout_per;
            for (std::int64_t oy = 0; oy < Ho; ++oy)
                for (std::int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = b.defined() ? static_cast<double>(b[co]) : 0.0;
                    for (std::int64_t ci = 0; ci < Cw; ++ci)
                        for (std::int64_t i = 0; i < kh; ++i)
                            for (std::int64_t j = 0; j < kw; ++j) {
                                const std::int64_t y = oy * stride - pad + i;
                                const std::int64_t xx = ox * stride - pad + j;
                                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                                acc += static_cast<double>(
                                           w[((co * Cw + ci) * kh + i) * kw + j]) *
                                       static_cast<double>(
                                           x[((n * Cin + g * cin_per + ci) * H + y) * W + xx]);
                            }
                    out[((n * Cout + co) * Ho + oy) * Wo + ox] = static_cast<T>(acc);
                }
        }
    return out;
}

// Zero-fill -> dense conv -> re-mask, the masked-convolution oracle.
// vis: (N,1,H,W) 1 = visible. vis_out at the output resolution.
template <typename T>
Tensor<T> ref_masked_conv2d(const Tensor<T>& x, const Tensor<T>& vis, const Tensor<T>& w,
                            const Tensor<T>& b, int stride, int pad, int groups,
                            const Tensor<T>& vis_out) {
    Tensor<T> xz = x.clone();
    const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < HW; ++i) xz[(n * C + c) * HW + i] *= vis[n * HW + i];
    Tensor<T> y = ref_conv2d(xz, w, b, stride, pad, groups);
    const std::int64_t Co = y.dim(1), HWo = y.dim(2) * y.dim(3);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < Co; ++c)
            for (std::int64_t i = 0; i < HWo; ++i) y[(n * Co + c) * HWo + i] *= vis_out[n * HWo + i];
    return y;
}

}  // namespace mpmae::testing
