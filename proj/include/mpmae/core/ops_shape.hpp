#pragma once

#include <cstdint>
#include <stdexcept>

#include "mpmae/core/autograd.hpp"
#include "mpmae/core/parallel.hpp"

namespace mpmae::ops {

// x * m with m of shape (N,1,H,W) broadcast over channels. Used to re-zero
// masked positions after every spatial-mixing layer.
template <typename T>
NodeRef<T> mask_mul(const NodeRef<T>& x, const Tensor<T>& m) {
    const auto& sh = x->value.shape();
    const std::int64_t N = sh[0], C = sh[1], HW = x->value.numel() / (sh[0] * sh[1]);
    if (m.numel() != N * HW) throw std::invalid_argument("mask_mul: mask shape mismatch");
    Tensor<T> out(sh);
    const T* px = x->value.data();
    const T* pm = m.data();
    T* po = out.data();
    parallel_for(N * C, [&](std::int64_t beg, std::int64_t end) {
        for (std::int64_t nc = beg; nc < end; ++nc) {
            const T* mi = pm + (nc / C) * HW;
            const T* xi = px + nc * HW;
            T* oi = po + nc * HW;
            for (std::int64_t i = 0; i < HW; ++i) oi[i] = xi[i] * mi[i];
        }
    });
    auto node = make_node(std::move(out));
    if (x->requires_grad) {
        node->requires_grad = true;
        node->parents = {x};
        node->backward_fn = [x, m, N, C, HW](Node<T>& self) {
            const T* g = self.grad.data();
            const T* pm = m.data();
            T* gx = x->ensure_grad().data();
            parallel_for(N * C, [&](std::int64_t beg, std::int64_t end) {
                for (std::int64_t nc = beg; nc < end; ++nc) {
                    const T* mi = pm + (nc / C) * HW;
                    const T* gi = g + nc * HW;
                    T* go = gx + nc * HW;
                    for (std::int64_t i = 0; i < HW; ++i) go[i] += gi[i] * mi[i];
                }
            });
        };
    }
    return node;
}

// Replaces masked grid cells with a learnable token: x (N,C,G,G),
// mask (N, G*G) with 1 = masked, token (C).
template <typename T>
NodeRef<T> fill_mask_tokens(const NodeRef<T>& x, const Tensor<std::uint8_t>& mask,
                            const NodeRef<T>& token) {
    const auto& sh = x->value.shape();
    const std::int64_t N = sh[0], C = sh[1], P = sh[2] * sh[3];
    if (mask.numel() != N * P) throw std::invalid_argument("fill_mask_tokens: mask size mismatch");
    if (token->value.numel() != C) throw std::invalid_argument("fill_mask_tokens: token width mismatch");
    Tensor<T> out(sh);
    const T* px = x->value.data();
    const T* pt = token->value.data();
    const std::uint8_t* pm = mask.data();
    T* po = out.data();
    parallel_for(N, [&](std::int64_t beg, std::int64_t end) {
        for (std::int64_t n = beg; n < end; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const T* xi = px + (n * C + c) * P;
                T* oi = po + (n * C + c) * P;
                const T tv = pt[c];
                const std::uint8_t* mi = pm + n * P;
                for (std::int64_t i = 0; i < P; ++i) oi[i] = mi[i] ? tv : xi[i];
            }
    });
    auto node = make_node(std::move(out));
    if (x->requires_grad || token->requires_grad) {
        node->requires_grad = true;
        node->parents = {x, token};
        node->backward_fn = [x, token, mask, N, C, P](Node<T>& self) {
            const T* g = self.grad.data();
            const std::uint8_t* pm = mask.data();
            if (x->requires_grad) {
                T* gx = x->ensure_grad().data();
                parallel_for(N * C, [&](std::int64_t beg, std::int64_t end) {
                    for (std::int64_t nc = beg; nc < end; ++nc) {
                        const std::uint8_t* mi = pm + (nc / C) * P;
                        const T* gi = g + nc * P;
                        T* go = gx + nc * P;
                        for (std::int64_t i = 0; i < P; ++i)
                            if (!mi[i]) go[i] += gi[i];
                    }
                });
            }
            if (token->requires_grad) {
                T* gt = token->ensure_grad().data();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* gi = g + (n * C + c) * P;
                        const std::uint8_t* mi = pm + n * P;
                        T acc = 0;
                        for (std::int64_t i = 0; i < P; ++i)
                            if (mi[i]) acc += gi[i];
                        gt[c] += acc;
                    }
            }
        };
    }
    return node;
}

// Weighted mean over grid cells: x (N,C,G,G), weights (N,G*G) -> (N,C).
// Callers use weights = mask / count for pooling over masked cells only.
template <typename T>
NodeRef<T> weighted_cell_mean(const NodeRef<T>& x, const Tensor<T>& weights) {
    const auto& sh = x->value.shape();
    const std::int64_t N = sh[0], C = sh[1], P = sh[2] * sh[3];
    if (weights.numel() != N * P) throw std::invalid_argument("weighted_cell_mean: weight size");
    Tensor<T> out({N, C});
    const T* px = x->value.data();
    const T* pw = weights.data();
    T* po = out.data();
    parallel_for(N, [&](std::int64_t beg, std::int64_t end) {
        for (std::int64_t n = beg; n < end; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const T* xi = px + (n * C + c) * P;
                const T* wi = pw + n * P;
                T acc = 0;
                for (std::int64_t i = 0; i < P; ++i) acc += xi[i] * wi[i];
                po[n * C + c] = acc;
            }
    });
    auto node = make_node(std::move(out));
    if (x->requires_grad) {
        node->requires_grad = true;
        node->parents = {x};
        node->backward_fn = [x, weights, N, C, P](Node<T>& self) {
            const T* g = self.grad.data();
            const T* pw = weights.data();
            T* gx = x->ensure_grad().data();
            parallel_for(N * C, [&](std::int64_t beg, std::int64_t end) {
                for (std::int64_t nc = beg; nc < end; ++nc) {
                    const T gv = g[nc];
                    const T* wi = pw + (nc / C) * P;
                    T* go = gx + nc * P;
                    for (std::int64_t i = 0; i < P; ++i) go[i] += gv * wi[i];
                }
            });
        };
    }
    return node;
}

// Global average pooling over spatial positions: (N,C,H,W) -> (N,C).
template <typename T>
NodeRef<T> global_mean_hw(const NodeRef<T>& x) {
    const auto& sh = x->value.shape();
    const std::int64_t N = sh[0], C = sh[1], HW = x->value.numel() / (sh[0] * sh[1]);
    Tensor<T> w({N, HW});
    w.fill(T(1) / T(HW));
    auto xr = make_node(x->value.reshaped({N, C, HW, 1}), false);
    xr->requires_grad = x->requires_grad;
    xr->parents = {x};
    // reshape shares storage: pass-through backward
    if (x->requires_grad) {
        xr->backward_fn = [x](Node<T>& self) {
            T* gx = x->ensure_grad().data();
            const T* g = self.grad.data();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i];
        };
    }
    return weighted_cell_mean(xr, w);
}

// Nearest-neighbour upsampling by an integer factor.
template <typename T>
NodeRef<T> upsample_nearest(const NodeRef<T>& x, int factor) {
    const auto& sh = x->value.shape();
    const std::int64_t N = sh[0], C = sh[1], H = sh[2], W = sh[3];
    const std::int64_t Ho = H * factor, Wo = W * factor;
    Tensor<T> out({N, C, Ho, Wo});
    const T* px = x->value.data();
    T* po = out.data();
    parallel_for(N * C, [&](std::int64_t beg, std::int64_t end) {
        for (std::int64_t nc = beg; nc < end; ++nc) {
            const T* xi = px + nc * H * W;
            T* oi = po + nc * Ho * Wo;
            for (std::int64_t y = 0; y < Ho; ++y) {
                const T* row = xi + (y / factor) * W;
                for (std::int64_t xx = 0; xx < Wo; ++xx) oi[y * Wo + xx] = row[xx / factor];
            }
        }
    });
    auto node = make_node(std::move(out));
    if (x->requires_grad) {
        node->requires_grad = true;
        node->parents = {x};
        node->backward_fn = [x, N, C, H, W, factor](Node<T>& self) {
            const std::int64_t Ho = H * factor, Wo = W * factor;
            const T* g = self.grad.data();
            T* gx = x->ensure_grad().data();
            parallel_for(N * C, [&](std::int64_t beg, std::int64_t end) {
                for (std::int64_t nc = beg; nc < end; ++nc) {
                    const T* gi = g + nc * Ho * Wo;
                    T* go = gx + nc * H * W;
                    for (std::int64_t y = 0; y < Ho; ++y)
                        for (std::int64_t xx = 0; xx < Wo; ++xx)
                            go[(y / factor) * W + xx / factor] += gi[y * Wo + xx];
                }
            });
        };
    }
    return node;
}

template <typename T>
NodeRef<T> concat_channels(const NodeRef<T>& a, const NodeRef<T>& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("concat_channels: spatial/batch mismatch");
    const std::int64_t N = sa[0], Ca = sa[1], Cb = sb[1], HW = sa[2] * sa[3];
    Tensor<T> out({N, Ca + Cb, sa[2], sa[3]});
    const T* pa = a->value.data();
    const T* pb = b->value.data();
    T* po = out.data();
    parallel_for(N, [&](std::int64_t beg, std::int64_t end) {
        for (std::int64_t n = beg; n < end; ++n) {
            std::copy(pa + n * Ca * HW, pa + (n + 1) * Ca * HW, po + n * (Ca + Cb) * HW);
            std::copy(pb + n * Cb * HW, pb + (n + 1) * Cb * HW, po + n * (Ca + Cb) * HW + Ca * HW);
        }
    });
    auto node = make_node(std::move(out));
    if (a->requires_grad || b->requires_grad) {
        node->requires_grad = true;
        node->parents = {a, b};
        node->backward_fn = [a, b, N, Ca, Cb, HW](Node<T>& self) {
            const T* g = self.grad.data();
            if (a->requires_grad) {
                T* ga = a->ensure_grad().data();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t i = 0; i < Ca * HW; ++i)
                        ga[n * Ca * HW + i] += g[n * (Ca + Cb) * HW + i];
            }
            if (b->requires_grad) {
                T* gb = b->ensure_grad().data();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t i = 0; i < Cb * HW; ++i)
                        gb[n * Cb * HW + i] += g[n * (Ca + Cb) * HW + Ca * HW + i];
            }
        };
    }
    return node;
}

// Rearranges per-token patch predictions (N, C*p*p, G, G) into a raster
// (N, C, G*p, G*p). Token channel layout is (c, py, px) row-major, matching
// mask::patchify.
template <typename T>
NodeRef<T> tokens_to_raster(const NodeRef<T>& x, int patch, std::int64_t channels) {
    const auto& sh = x->value.shape();
    const std::int64_t N = sh[0], D = sh[1], G = sh[2];
    if (sh[3] != G || D != channels * patch * patch)
        throw std::invalid_argument("tokens_to_raster: channel layout mismatch");
    const std::int64_t HW = G * patch;
    Tensor<T> out({N, channels, HW, HW});
    const T* px = x->value.data();
    T* po = out.data();
    parallel_for(N * channels, [&](std::int64_t beg, std::int64_t end) {
        for (std::int64_t nc = beg; nc < end; ++nc) {
            const std::int64_t n = nc / channels, c = nc % channels;
            for (std::int64_t gy = 0; gy < G; ++gy)
                for (std::int64_t gx = 0; gx < G; ++gx)
                    for (int py = 0; py < patch; ++py)
                        for (int px_ = 0; px_ < patch; ++px_) {
                            const std::int64_t d = (c * patch + py) * patch + px_;
                            po[((n * channels + c) * HW + gy * patch + py) * HW + gx * patch + px_] =
                                px[((n * D + d) * G + gy) * G + gx];
                        }
        }
    });
    auto node = make_node(std::move(out));
    if (x->requires_grad) {
        node->requires_grad = true;
        node->parents = {x};
        node->backward_fn = [x, N, D, G, patch, channels, HW](Node<T>& self) {
            const T* g = self.grad.data();
            T* gx = x->ensure_grad().data();
            parallel_for(N * channels, [&](std::int64_t beg, std::int64_t end) {
                for (std::int64_t nc = beg; nc < end; ++nc) {
                    const std::int64_t n = nc / channels, c = nc % channels;
                    for (std::int64_t gy = 0; gy < G; ++gy)
                        for (std::int64_t gxx = 0; gxx < G; ++gxx)
                            for (int py = 0; py < patch; ++py)
                                for (int px_ = 0; px_ < patch; ++px_) {
                                    const std::int64_t d = (c * patch + py) * patch + px_;
                                    gx[((n * D + d) * G + gy) * G + gxx] +=
                                        g[((n * channels + c) * HW + gy * patch + py) * HW +
                                          gxx * patch + px_];
                                }
                }
            });
        };
    }
    return node;
}

}  // namespace mpmae::ops
