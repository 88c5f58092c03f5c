#pragma once

#include <stdexcept>
#include <vector>

#include "mpmae/core/autograd.hpp"
#include "mpmae/core/gemm.hpp"
#include "mpmae/core/parallel.hpp"
#include "mpmae/core/ops_basic.hpp"

namespace mpmae::ops {

struct ConvSpec {
    int stride = 1;
    int pad = 0;
    int groups = 1;
};

namespace detail {

template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, int kh, int kw, int stride,
            int pad, std::int64_t Hout, std::int64_t Wout, T* col) {
    // col layout: (C*kh*kw, Hout*Wout)
    const std::int64_t L = Hout * Wout;
    for (std::int64_t c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                T* dst = col + ((c * kh + i) * kw + j) * L;
                for (std::int64_t oy = 0; oy < Hout; ++oy) {
                    const std::int64_t y = oy * stride - pad + i;
                    if (y < 0 || y >= H) {
                        for (std::int64_t ox = 0; ox < Wout; ++ox) dst[oy * Wout + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (c * H + y) * W;
                    for (std::int64_t ox = 0; ox < Wout; ++ox) {
                        const std::int64_t xx = ox * stride - pad + j;
                        dst[oy * Wout + ox] = (xx >= 0 && xx < W) ? src[xx] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, int kh, int kw,
                int stride, int pad, std::int64_t Hout, std::int64_t Wout, T* x) {
    const std::int64_t L = Hout * Wout;
    for (std::int64_t c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const T* src = col + ((c * kh + i) * kw + j) * L;
                for (std::int64_t oy = 0; oy < Hout; ++oy) {
                    const std::int64_t y = oy * stride - pad + i;
                    if (y < 0 || y >= H) continue;
                    T* dst = x + (c * H + y) * W;
                    for (std::int64_t ox = 0; ox < Wout; ++ox) {
                        const std::int64_t xx = ox * stride - pad + j;
                        if (xx >= 0 && xx < W) dst[xx] += src[oy * Wout + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2D convolution, NCHW. Supports groups == 1 (im2col + GEMM) and full
// depthwise (groups == Cin == Cout, direct loops). Weight layout
// (Cout, Cin/groups, kh, kw).
template <typename T>
NodeRef<T> conv2d(const NodeRef<T>& x, const NodeRef<T>& w, const NodeRef<T>& b, ConvSpec spec) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: rank must be 4");
    const std::int64_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const std::int64_t Cout = ws[0], Cw = ws[1];
    const int kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
    const int s = spec.stride, p = spec.pad, g = spec.groups;
    const bool depthwise = (g == Cin && Cout == Cin && Cw == 1);
    if (!depthwise && g != 1) throw std::invalid_argument("conv2d: unsupported group count");
    if (!depthwise && Cw != Cin)
        throw std::invalid_argument("conv2d: weight channels do not match input");
    const std::int64_t Hout = (H + 2 * p - kh) / s + 1;
    const std::int64_t Wout = (W + 2 * p - kw) / s + 1;
    if (Hout <= 0 || Wout <= 0) throw std::invalid_argument("conv2d: output would be empty");
    const std::int64_t L = Hout * Wout;
    const std::int64_t K = Cin * kh * kw;

    Tensor<T> out({N, Cout, Hout, Wout});
    const T* px = x->value.data();
    const T* pw = w->value.data();
    const T* pb = b ? b->value.data() : nullptr;
    T* po = out.data();

    if (depthwise) {
        parallel_for(N * Cin, [&](std::int64_t beg, std::int64_t end) {
            for (std::int64_t nc = beg; nc < end; ++nc) {
                const T* xi = px + nc * H * W;
                const T* wc = pw + (nc % Cin) * kh * kw;
                T* oi = po + nc * L;
                const T bias = pb ? pb[nc % Cin] : T(0);
                for (std::int64_t oy = 0; oy < Hout; ++oy) {
                    for (std::int64_t ox = 0; ox < Wout; ++ox) {
                        T acc = bias;
                        for (int i = 0; i < kh; ++i) {
                            const std::int64_t y = oy * s - p + i;
                            if (y < 0 || y >= H) continue;
                            for (int j = 0; j < kw; ++j) {
                                const std::int64_t xx = ox * s - p + j;
                                if (xx < 0 || xx >= W) continue;
                                acc += wc[i * kw + j] * xi[y * W + xx];
                            }
                        }
                        oi[oy * Wout + ox] = acc;
                    }
                }
            }
        });
    } else {
        parallel_for(N, [&](std::int64_t beg, std::int64_t end) {
            std::vector<T> col(static_cast<std::size_t>(K * L));
            for (std::int64_t n = beg; n < end; ++n) {
                detail::im2col(px + n * Cin * H * W, Cin, H, W, kh, kw, s, p, Hout, Wout, col.data());
                gemm<T>(false, false, Cout, L, K, T(1), pw, K, col.data(), L, T(0), po + n * Cout * L, L);
                if (pb) {
                    T* oi = po + n * Cout * L;
                    for (std::int64_t c = 0; c < Cout; ++c)
                        for (std::int64_t l = 0; l < L; ++l) oi[c * L + l] += pb[c];
                }
            }
        });
    }

    auto node = make_node(std::move(out));
    if (x->requires_grad || w->requires_grad || (b && b->requires_grad)) {
        node->requires_grad = true;
        node->parents = {x, w};
        if (b) node->parents.push_back(b);
        node->backward_fn = [x, w, b, N, Cin, H, W, Cout, kh, kw, s, p, depthwise, Hout, Wout, L,
                             K](Node<T>& self) {
            const T* g = self.grad.data();
            const T* px = x->value.data();
            const T* pw = w->value.data();

            if (b && b->requires_grad) {
                T* gb = b->ensure_grad().data();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t c = 0; c < Cout; ++c) {
                        T acc = 0;
                        const T* gi = g + (n * Cout + c) * L;
                        for (std::int64_t l = 0; l < L; ++l) acc += gi[l];
                        gb[c] += acc;
                    }
            }

            if (depthwise) {
                if (w->requires_grad) {
                    std::vector<std::vector<T>> parts(kGradChunks);
                    for (auto& v : parts) v.assign(static_cast<std::size_t>(Cin * kh * kw), T(0));
                    parallel_chunks(N, kGradChunks, [&](int chunk, std::int64_t beg, std::int64_t end) {
                        for (std::int64_t n = beg; n < end; ++n) {
                            for (std::int64_t c = 0; c < Cin; ++c) {
                                const T* xi = px + (n * Cin + c) * H * W;
                                const T* gi = g + (n * Cin + c) * L;
                                T* wc = parts[chunk].data() + c * kh * kw;
                                for (std::int64_t oy = 0; oy < Hout; ++oy)
                                    for (std::int64_t ox = 0; ox < Wout; ++ox) {
                                        const T gv = gi[oy * Wout + ox];
                                        if (gv == T(0)) continue;
                                        for (int i = 0; i < kh; ++i) {
                                            const std::int64_t y = oy * s - p + i;
                                            if (y < 0 || y >= H) continue;
                                            for (int j = 0; j < kw; ++j) {
                                                const std::int64_t xx = ox * s - p + j;
                                                if (xx < 0 || xx >= W) continue;
                                                wc[i * kw + j] += gv * xi[y * W + xx];
                                            }
                                        }
                                    }
                            }
                        }
                    });
                    T* gw = w->ensure_grad().data();
                    for (int ch = 0; ch < kGradChunks; ++ch)
                        for (std::int64_t i = 0; i < Cin * kh * kw; ++i)
                            gw[i] += parts[ch][static_cast<std::size_t>(i)];
                }
                if (x->requires_grad) {
                    T* gx = x->ensure_grad().data();
                    parallel_for(N * Cin, [&](std::int64_t beg, std::int64_t end) {
                        for (std::int64_t nc = beg; nc < end; ++nc) {
                            const T* gi = g + nc * L;
                            const T* wc = pw + (nc % Cin) * kh * kw;
                            T* xi = gx + nc * H * W;
                            for (std::int64_t oy = 0; oy < Hout; ++oy)
                                for (std::int64_t ox = 0; ox < Wout; ++ox) {
                                    const T gv = gi[oy * Wout + ox];
                                    if (gv == T(0)) continue;
                                    for (int i = 0; i < kh; ++i) {
                                        const std::int64_t y = oy * s - p + i;
                                        if (y < 0 || y >= H) continue;
                                        for (int j = 0; j < kw; ++j) {
                                            const std::int64_t xx = ox * s - p + j;
                                            if (xx < 0 || xx >= W) continue;
                                            xi[y * W + xx] += gv * wc[i * kw + j];
                                        }
                                    }
                                }
                        }
                    });
                }
                return;
            }

            if (w->requires_grad) {
                std::vector<std::vector<T>> parts(kGradChunks);
                for (auto& v : parts) v.assign(static_cast<std::size_t>(Cout * K), T(0));
                parallel_chunks(N, kGradChunks, [&](int chunk, std::int64_t beg, std::int64_t end) {
                    std::vector<T> col(static_cast<std::size_t>(K * L));
                    for (std::int64_t n = beg; n < end; ++n) {
                        detail::im2col(px + n * Cin * H * W, Cin, H, W, kh, kw, s, p, Hout, Wout,
                                       col.data());
                        gemm<T>(false, true, Cout, K, L, T(1), g + n * Cout * L, L, col.data(), L, T(1),
                                parts[chunk].data(), K);
                    }
                });
                T* gw = w->ensure_grad().data();
                for (int ch = 0; ch < kGradChunks; ++ch)
                    for (std::int64_t i = 0; i < Cout * K; ++i)
                        gw[i] += parts[ch][static_cast<std::size_t>(i)];
            }
            if (x->requires_grad) {
                T* gx = x->ensure_grad().data();
                parallel_for(N, [&](std::int64_t beg, std::int64_t end) {
                    std::vector<T> colg(static_cast<std::size_t>(K * L));
                    for (std::int64_t n = beg; n < end; ++n) {
                        gemm<T>(true, false, K, L, Cout, T(1), pw, K, g + n * Cout * L, L, T(0),
                                colg.data(), L);
                        detail::col2im_add(colg.data(), Cin, H, W, kh, kw, s, p, Hout, Wout,
                                           gx + n * Cin * H * W);
                    }
                });
            }
        };
    }
    return node;
}

}  // namespace mpmae::ops
