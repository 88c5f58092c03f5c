#pragma once

#include <cmath>
#include <stdexcept>

#include "mpmae/core/autograd.hpp"
#include "mpmae/core/gemm.hpp"
#include "mpmae/core/parallel.hpp"

namespace mpmae::ops {

constexpr int kGradChunks = 8;  // fixed partial count for deterministic reductions

template <typename T>
NodeRef<T> add(const NodeRef<T>& a, const NodeRef<T>& b) {
    if (!same_shape(a->value, b->value)) throw std::invalid_argument("add: shape mismatch");
    Tensor<T> out(a->value.shape());
    const T* pa = a->value.data();
    const T* pb = b->value.data();
    T* po = out.data();
    parallel_for(out.numel(), [&](std::int64_t s, std::int64_t e) {
        for (std::int64_t i = s; i < e; ++i) po[i] = pa[i] + pb[i];
    });
    auto n = make_node(std::move(out));
    if (a->requires_grad || b->requires_grad) {
        n->requires_grad = true;
        n->parents = {a, b};
        n->backward_fn = [a, b](Node<T>& self) {
            const T* g = self.grad.data();
            if (a->requires_grad) {
                T* ga = a->ensure_grad().data();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i];
            }
            if (b->requires_grad) {
                T* gb = b->ensure_grad().data();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i) gb[i] += g[i];
            }
        };
    }
    return n;
}

template <typename T>
NodeRef<T> scale(const NodeRef<T>& a, T c) {
    Tensor<T> out(a->value.shape());
    const T* pa = a->value.data();
    T* po = out.data();
    parallel_for(out.numel(), [&](std::int64_t s, std::int64_t e) {
        for (std::int64_t i = s; i < e; ++i) po[i] = pa[i] * c;
    });
    auto n = make_node(std::move(out));
    if (a->requires_grad) {
        n->requires_grad = true;
        n->parents = {a};
        n->backward_fn = [a, c](Node<T>& self) {
            const T* g = self.grad.data();
            T* ga = a->ensure_grad().data();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i] * c;
        };
    }
    return n;
}

// x:(N,K) w:(M,K) b:(M) -> (N,M)
template <typename T>
NodeRef<T> linear(const NodeRef<T>& x, const NodeRef<T>& w, const NodeRef<T>& b) {
    const std::int64_t N = x->value.dim(0), K = x->value.dim(1), M = w->value.dim(0);
    if (w->value.dim(1) != K) throw std::invalid_argument("linear: weight/input width mismatch");
    Tensor<T> out({N, M});
    gemm<T>(false, true, N, M, K, T(1), x->value.data(), K, w->value.data(), K, T(0), out.data(), M);
    if (b) {
        T* po = out.data();
        const T* pb = b->value.data();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t m = 0; m < M; ++m) po[n * M + m] += pb[m];
    }
    auto n = make_node(std::move(out));
    if (x->requires_grad || w->requires_grad || (b && b->requires_grad)) {
        n->requires_grad = true;
        n->parents = {x, w};
        if (b) n->parents.push_back(b);
        n->backward_fn = [x, w, b, N, M, K](Node<T>& self) {
            const T* g = self.grad.data();
            if (x->requires_grad)
                gemm<T>(false, false, N, K, M, T(1), g, M, w->value.data(), K, T(1),
                        x->ensure_grad().data(), K);
            if (w->requires_grad)
                gemm<T>(true, false, M, K, N, T(1), g, M, x->value.data(), K, T(1),
                        w->ensure_grad().data(), K);
            if (b && b->requires_grad) {
                T* gb = b->ensure_grad().data();
                for (std::int64_t i = 0; i < N; ++i)
                    for (std::int64_t m = 0; m < M; ++m) gb[m] += g[i * M + m];
            }
        };
    }
    return n;
}

template <typename T>
NodeRef<T> gelu(const NodeRef<T>& x) {
    Tensor<T> out(x->value.shape());
    const T* px = x->value.data();
    T* po = out.data();
    parallel_for(out.numel(), [&](std::int64_t s, std::int64_t e) {
        for (std::int64_t i = s; i < e; ++i) {
            const T v = px[i];
            po[i] = T(0.5) * v * (T(1) + std::erf(v * T(0.7071067811865476)));
        }
    });
    auto n = make_node(std::move(out));
    if (x->requires_grad) {
        n->requires_grad = true;
        n->parents = {x};
        n->backward_fn = [x](Node<T>& self) {
            const T* g = self.grad.data();
            const T* px = x->value.data();
            T* gx = x->ensure_grad().data();
            parallel_for(self.grad.numel(), [&](std::int64_t s, std::int64_t e) {
                for (std::int64_t i = s; i < e; ++i) {
                    const T v = px[i];
                    const T cdf = T(0.5) * (T(1) + std::erf(v * T(0.7071067811865476)));
                    const T pdf = std::exp(T(-0.5) * v * v) * T(0.3989422804014327);
                    gx[i] += g[i] * (cdf + v * pdf);
                }
            });
        };
    }
    return n;
}

// LayerNorm over the channel dimension at each (n,h,w) position
// ("channels_first"). Accepts (N,C,H,W) or (N,C).
template <typename T>
NodeRef<T> layer_norm_channels(const NodeRef<T>& x, const NodeRef<T>& gamma, const NodeRef<T>& beta,
                               T eps = T(1e-6)) {
    const auto& sh = x->value.shape();
    const std::int64_t N = sh[0], C = sh[1];
    const std::int64_t HW = x->value.numel() / (N * C);
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw std::invalid_argument("layer_norm: affine size mismatch");

    Tensor<T> out(sh);
    const T* px = x->value.data();
    const T* pg = gamma->value.data();
    const T* pb = beta->value.data();
    T* po = out.data();
    parallel_for(N * HW, [&](std::int64_t s, std::int64_t e) {
        for (std::int64_t idx = s; idx < e; ++idx) {
            const std::int64_t n = idx / HW, hw = idx % HW;
            const T* xi = px + (n * C) * HW + hw;
            T* oi = po + (n * C) * HW + hw;
            T mean = 0;
            for (std::int64_t c = 0; c < C; ++c) mean += xi[c * HW];
            mean /= T(C);
            T var = 0;
            for (std::int64_t c = 0; c < C; ++c) {
                const T d = xi[c * HW] - mean;
                var += d * d;
            }
            var /= T(C);
            const T inv = T(1) / std::sqrt(var + eps);
            for (std::int64_t c = 0; c < C; ++c)
                oi[c * HW] = (xi[c * HW] - mean) * inv * pg[c] + pb[c];
        }
    });

    auto node = make_node(std::move(out));
    if (x->requires_grad || gamma->requires_grad || beta->requires_grad) {
        node->requires_grad = true;
        node->parents = {x, gamma, beta};
        node->backward_fn = [x, gamma, beta, N, C, HW, eps](Node<T>& self) {
            const T* g = self.grad.data();
            const T* px = x->value.data();
            const T* pg = gamma->value.data();
            T* gx = x->requires_grad ? x->ensure_grad().data() : nullptr;

            std::vector<std::vector<T>> part_g(kGradChunks), part_b(kGradChunks);
            const bool affine_grad = gamma->requires_grad || beta->requires_grad;
            if (affine_grad)
                for (auto& v : part_g) v.assign(static_cast<std::size_t>(C), T(0));
            if (affine_grad)
                for (auto& v : part_b) v.assign(static_cast<std::size_t>(C), T(0));

            parallel_chunks(N * HW, kGradChunks, [&](int chunk, std::int64_t s, std::int64_t e) {
                for (std::int64_t idx = s; idx < e; ++idx) {
                    const std::int64_t n = idx / HW, hw = idx % HW;
                    const T* xi = px + (n * C) * HW + hw;
                    const T* gi = g + (n * C) * HW + hw;
                    T mean = 0;
                    for (std::int64_t c = 0; c < C; ++c) mean += xi[c * HW];
                    mean /= T(C);
                    T var = 0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T d = xi[c * HW] - mean;
                        var += d * d;
                    }
                    var /= T(C);
                    const T inv = T(1) / std::sqrt(var + eps);
                    T sum_dxh = 0, sum_dxh_xh = 0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T xh = (xi[c * HW] - mean) * inv;
                        const T dxh = gi[c * HW] * pg[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        if (affine_grad) {
                            part_g[chunk][static_cast<std::size_t>(c)] += gi[c * HW] * xh;
                            part_b[chunk][static_cast<std::size_t>(c)] += gi[c * HW];
                        }
                    }
                    if (gx) {
                        for (std::int64_t c = 0; c < C; ++c) {
                            const T xh = (xi[c * HW] - mean) * inv;
                            const T dxh = gi[c * HW] * pg[c];
                            gx[(n * C + c) * HW + hw] +=
                                inv * (dxh - sum_dxh / T(C) - xh * sum_dxh_xh / T(C));
                        }
                    }
                }
            });
            if (gamma->requires_grad) {
                T* gg = gamma->ensure_grad().data();
                for (int ch = 0; ch < kGradChunks; ++ch)
                    for (std::int64_t c = 0; c < C; ++c) gg[c] += part_g[ch][static_cast<std::size_t>(c)];
            }
            if (beta->requires_grad) {
                T* gb = beta->ensure_grad().data();
                for (int ch = 0; ch < kGradChunks; ++ch)
                    for (std::int64_t c = 0; c < C; ++c) gb[c] += part_b[ch][static_cast<std::size_t>(c)];
            }
        };
    }
    return node;
}

// Global response normalization: y = gamma * (x * Nx) + beta + x, where
// Gx_c = ||x_c||_2 over (visible) spatial positions and Nx_c = Gx_c / mean_c(Gx).
// `vis` (N,1,H,W in {0,1}) restricts the norm statistics to visible positions.
template <typename T>
NodeRef<T> grn(const NodeRef<T>& x, const NodeRef<T>& gamma, const NodeRef<T>& beta,
               const Tensor<T>& vis = Tensor<T>()) {
    const auto& sh = x->value.shape();
    const std::int64_t N = sh[0], C = sh[1];
    const std::int64_t HW = x->value.numel() / (N * C);
    const T eps = T(1e-6);

    Tensor<T> out(sh);
    Tensor<T> nx({N, C});  // saved for backward
    const T* px = x->value.data();
    const T* pv = vis.defined() ? vis.data() : nullptr;
    const T* pg = gamma->value.data();
    const T* pb = beta->value.data();
    T* po = out.data();
    T* pnx = nx.data();
    parallel_for(N, [&](std::int64_t s, std::int64_t e) {
        std::vector<T> gx_c(static_cast<std::size_t>(C));
        for (std::int64_t n = s; n < e; ++n) {
            T mean_g = 0;
            for (std::int64_t c = 0; c < C; ++c) {
                const T* xi = px + (n * C + c) * HW;
                T acc = 0;
                if (pv) {
                    const T* vi = pv + n * HW;
                    for (std::int64_t i = 0; i < HW; ++i) acc += xi[i] * xi[i] * vi[i];
                } else {
                    for (std::int64_t i = 0; i < HW; ++i) acc += xi[i] * xi[i];
                }
                gx_c[static_cast<std::size_t>(c)] = std::sqrt(acc);
                mean_g += gx_c[static_cast<std::size_t>(c)];
            }
            mean_g /= T(C);
            for (std::int64_t c = 0; c < C; ++c) {
                const T nxc = gx_c[static_cast<std::size_t>(c)] / (mean_g + eps);
                pnx[n * C + c] = nxc;
                const T* xi = px + (n * C + c) * HW;
                T* oi = po + (n * C + c) * HW;
                const T gc = pg[c], bc = pb[c];
                for (std::int64_t i = 0; i < HW; ++i) oi[i] = gc * xi[i] * nxc + bc + xi[i];
            }
        }
    });

    auto node = make_node(std::move(out));
    if (x->requires_grad || gamma->requires_grad || beta->requires_grad) {
        node->requires_grad = true;
        node->parents = {x, gamma, beta};
        node->backward_fn = [x, gamma, beta, nx, vis, N, C, HW, eps](Node<T>& self) {
            const T* g = self.grad.data();
            const T* px = x->value.data();
            const T* pv = vis.defined() ? vis.data() : nullptr;
            const T* pg = gamma->value.data();
            const T* pnx = nx.data();
            T* gx = x->requires_grad ? x->ensure_grad().data() : nullptr;

            std::vector<std::vector<T>> part_g(kGradChunks), part_b(kGradChunks);
            for (auto& v : part_g) v.assign(static_cast<std::size_t>(C), T(0));
            for (auto& v : part_b) v.assign(static_cast<std::size_t>(C), T(0));

            parallel_chunks(N, kGradChunks, [&](int chunk, std::int64_t s, std::int64_t e) {
                std::vector<T> gx_c(static_cast<std::size_t>(C)), s_c(static_cast<std::size_t>(C)),
                    dnx(static_cast<std::size_t>(C));
                for (std::int64_t n = s; n < e; ++n) {
                    // recompute Gx and mean
                    T mean_g = 0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* xi = px + (n * C + c) * HW;
                        T acc = 0;
                        if (pv) {
                            const T* vi = pv + n * HW;
                            for (std::int64_t i = 0; i < HW; ++i) acc += xi[i] * xi[i] * vi[i];
                        } else {
                            for (std::int64_t i = 0; i < HW; ++i) acc += xi[i] * xi[i];
                        }
                        gx_c[static_cast<std::size_t>(c)] = std::sqrt(acc);
                        mean_g += gx_c[static_cast<std::size_t>(c)];
                    }
                    mean_g /= T(C);
                    const T denom = mean_g + eps;

                    T dot = 0;  // sum_c dnx_c * Gx_c, for the mean term
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* xi = px + (n * C + c) * HW;
                        const T* gi = g + (n * C + c) * HW;
                        T sc = 0, sb = 0, sg = 0;
                        const T nxc = pnx[n * C + c];
                        for (std::int64_t i = 0; i < HW; ++i) {
                            sc += gi[i] * xi[i];
                            sb += gi[i];
                            sg += gi[i] * xi[i] * nxc;
                        }
                        s_c[static_cast<std::size_t>(c)] = sc;
                        part_b[chunk][static_cast<std::size_t>(c)] += sb;
                        part_g[chunk][static_cast<std::size_t>(c)] += sg;
                        dnx[static_cast<std::size_t>(c)] = pg[c] * sc;
                        dot += dnx[static_cast<std::size_t>(c)] * gx_c[static_cast<std::size_t>(c)];
                    }
                    if (gx) {
                        for (std::int64_t c = 0; c < C; ++c) {
                            const T gxc = gx_c[static_cast<std::size_t>(c)];
                            const T dg =
                                dnx[static_cast<std::size_t>(c)] / denom - dot / (T(C) * denom * denom);
                            const T scale_g = (gxc > T(0)) ? dg / gxc : T(0);
                            const T* xi = px + (n * C + c) * HW;
                            const T* gi = g + (n * C + c) * HW;
                            T* go = gx + (n * C + c) * HW;
                            const T nxc = pnx[n * C + c];
                            const T gc = pg[c];
                            if (pv) {
                                const T* vi = pv + n * HW;
                                for (std::int64_t i = 0; i < HW; ++i)
                                    go[i] += gi[i] * (gc * nxc + T(1)) + scale_g * xi[i] * vi[i];
                            } else {
                                for (std::int64_t i = 0; i < HW; ++i)
                                    go[i] += gi[i] * (gc * nxc + T(1)) + scale_g * xi[i];
                            }
                        }
                    }
                }
            });
            if (gamma->requires_grad) {
                T* gg = gamma->ensure_grad().data();
                for (int ch = 0; ch < kGradChunks; ++ch)
                    for (std::int64_t c = 0; c < C; ++c) gg[c] += part_g[ch][static_cast<std::size_t>(c)];
            }
            if (beta->requires_grad) {
                T* gb = beta->ensure_grad().data();
                for (int ch = 0; ch < kGradChunks; ++ch)
                    for (std::int64_t c = 0; c < C; ++c) gb[c] += part_b[ch][static_cast<std::size_t>(c)];
            }
        };
    }
    return node;
}

}  // namespace mpmae::ops
