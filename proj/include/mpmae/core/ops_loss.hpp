#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mpmae/core/autograd.hpp"
#include "mpmae/core/parallel.hpp"

namespace mpmae::ops {

template <typename T>
struct LossOut {
    NodeRef<T> node;          // scalar; undefined when count == 0
    std::int64_t count = 0;   // elements actually scored
};

// Weighted mean squared error: sum(w * (pred-target)^2) / sum(w).
// `weights` has pred's shape; zero weight excludes an element from both the
// value and the gradient. Target participates in the graph so that
// visible-target zero-gradient isolation can be asserted directly.
template <typename T>
LossOut<T> masked_mse_loss(const NodeRef<T>& pred, const NodeRef<T>& target, const Tensor<T>& weights) {
    if (!same_shape(pred->value, target->value) || !same_shape(pred->value, weights))
        throw std::invalid_argument("masked_mse: shape mismatch");
    const std::int64_t M = pred->value.numel();
    const T* pp = pred->value.data();
    const T* pt = target->value.data();
    const T* pw = weights.data();
    double wsum = 0, acc = 0;
    std::int64_t cnt = 0;
    for (std::int64_t i = 0; i < M; ++i) {
        const double w = static_cast<double>(pw[i]);
        if (w == 0.0) continue;
        const double d = static_cast<double>(pp[i]) - static_cast<double>(pt[i]);
        acc += w * d * d;
        wsum += w;
        ++cnt;
    }
    LossOut<T> out;
    out.count = cnt;
    if (cnt == 0) return out;
    Tensor<T> v({1});
    v[0] = static_cast<T>(acc / wsum);
    auto node = make_node(std::move(v));
    if (pred->requires_grad || target->requires_grad) {
        node->requires_grad = true;
        node->parents = {pred, target};
        const T inv = static_cast<T>(1.0 / wsum);
        node->backward_fn = [pred, target, weights, inv, M](Node<T>& self) {
            const T g = self.grad[0];
            const T* pp = pred->value.data();
            const T* pt = target->value.data();
            const T* pw = weights.data();
            T* gp = pred->requires_grad ? pred->ensure_grad().data() : nullptr;
            T* gt = target->requires_grad ? target->ensure_grad().data() : nullptr;
            parallel_for(M, [&](std::int64_t s, std::int64_t e) {
                for (std::int64_t i = s; i < e; ++i) {
                    if (pw[i] == T(0)) continue;
                    const T d = g * T(2) * pw[i] * (pp[i] - pt[i]) * inv;
                    if (gp) gp[i] += d;
                    if (gt) gt[i] -= d;
                }
            });
        };
    }
    out.node = node;
    return out;
}

// Pixel-wise softmax cross entropy over masked positions. labels (N,1,H,W)
// int32; positions count when mask != 0 and label != ignore_label
// (ignore_label < 0 disables ignoring).
template <typename T>
LossOut<T> masked_ce_loss(const NodeRef<T>& logits, const Tensor<std::int32_t>& labels,
                          const Tensor<T>& mask, int ignore_label = -1) {
    const auto& sh = logits->value.shape();
    const std::int64_t N = sh[0], K = sh[1], HW = sh[2] * sh[3];
    if (labels.numel() != N * HW || mask.numel() != N * HW)
        throw std::invalid_argument("masked_ce: label/mask shape mismatch");

    const T* pl = logits->value.data();
    const std::int32_t* py = labels.data();
    const T* pm = mask.data();
    double acc = 0;
    std::int64_t cnt = 0;
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < HW; ++i) {
            if (pm[n * HW + i] == T(0)) continue;
            const std::int32_t y = py[n * HW + i];
            if (y == ignore_label) continue;
            if (y < 0 || y >= K) throw std::invalid_argument("masked_ce: label out of range");
            const T* li = pl + n * K * HW + i;
            T mx = li[0];
            for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, li[k * HW]);
            double z = 0;
            for (std::int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(li[k * HW] - mx));
            acc += std::log(z) + static_cast<double>(mx) - static_cast<double>(li[y * HW]);
            ++cnt;
        }
    }
    LossOut<T> out;
    out.count = cnt;
    if (cnt == 0) return out;
    Tensor<T> v({1});
    v[0] = static_cast<T>(acc / static_cast<double>(cnt));
    auto node = make_node(std::move(v));
    if (logits->requires_grad) {
        node->requires_grad = true;
        node->parents = {logits};
        const T inv = static_cast<T>(1.0 / static_cast<double>(cnt));
        node->backward_fn = [logits, labels, mask, ignore_label, N, K, HW, inv](Node<T>& self) {
            const T g = self.grad[0];
            const T* pl = logits->value.data();
            const std::int32_t* py = labels.data();
            const T* pm = mask.data();
            T* gl = logits->ensure_grad().data();
            parallel_for(N * HW, [&](std::int64_t s, std::int64_t e) {
                std::vector<T> prob(static_cast<std::size_t>(K));
                for (std::int64_t idx = s; idx < e; ++idx) {
                    const std::int64_t n = idx / HW, i = idx % HW;
                    if (pm[n * HW + i] == T(0)) continue;
                    const std::int32_t y = py[n * HW + i];
                    if (y == ignore_label) continue;
                    const T* li = pl + n * K * HW + i;
                    T mx = li[0];
                    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, li[k * HW]);
                    T z = 0;
                    for (std::int64_t k = 0; k < K; ++k) {
                        prob[static_cast<std::size_t>(k)] = std::exp(li[k * HW] - mx);
                        z += prob[static_cast<std::size_t>(k)];
                    }
                    T* go = gl + n * K * HW + i;
                    for (std::int64_t k = 0; k < K; ++k) {
                        T p = prob[static_cast<std::size_t>(k)] / z;
                        if (k == y) p -= T(1);
                        go[k * HW] += g * p * inv;
                    }
                }
            });
        };
    }
    out.node = node;
    return out;
}

// Mean squared error over (N,C) vectors; rows with valid == 0 are excluded.
template <typename T>
LossOut<T> image_mse_loss(const NodeRef<T>& pred, const NodeRef<T>& target,
                          const Tensor<T>& row_valid) {
    const std::int64_t N = pred->value.dim(0), C = pred->value.dim(1);
    Tensor<T> w(pred->value.shape());
    const T* pv = row_valid.data();
    T* pw = w.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) pw[n * C + c] = pv[n];
    return masked_mse_loss(pred, target, w);
}

// Softmax cross entropy over (N,K) with integer labels; label < 0 excludes
// the row.
template <typename T>
LossOut<T> image_ce_loss(const NodeRef<T>& logits, const Tensor<std::int32_t>& labels) {
    const std::int64_t N = logits->value.dim(0), K = logits->value.dim(1);
    if (labels.numel() != N) throw std::invalid_argument("image_ce: label count mismatch");
    auto r = make_node(logits->value.reshaped({N, K, 1, 1}), false);
    r->requires_grad = logits->requires_grad;
    r->parents = {logits};
    if (logits->requires_grad) {
        r->backward_fn = [logits](Node<T>& self) {
            T* gx = logits->ensure_grad().data();
            const T* g = self.grad.data();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i];
        };
    }
    Tensor<std::int32_t> lab({N, 1, 1, 1});
    Tensor<T> msk({N, 1, 1, 1});
    for (std::int64_t n = 0; n < N; ++n) {
        lab[n] = labels[n] < 0 ? -1 : labels[n];
        msk[n] = labels[n] < 0 ? T(0) : T(1);
    }
    return masked_ce_loss(r, lab, msk, -1);
}

// Per-element binary cross entropy with logits, mean over all elements.
template <typename T>
LossOut<T> bce_logits_loss(const NodeRef<T>& logits, const Tensor<T>& targets) {
    if (!same_shape(logits->value, targets)) throw std::invalid_argument("bce: shape mismatch");
    const std::int64_t M = logits->value.numel();
    const T* pz = logits->value.data();
    const T* pt = targets.data();
    double acc = 0;
    for (std::int64_t i = 0; i < M; ++i) {
        const double z = pz[i], t = pt[i];
        acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    LossOut<T> out;
    out.count = M;
    Tensor<T> v({1});
    v[0] = static_cast<T>(acc / static_cast<double>(M));
    auto node = make_node(std::move(v));
    if (logits->requires_grad) {
        node->requires_grad = true;
        node->parents = {logits};
        node->backward_fn = [logits, targets, M](Node<T>& self) {
            const T g = self.grad[0] / T(M);
            const T* pz = logits->value.data();
            const T* pt = targets.data();
            T* gz = logits->ensure_grad().data();
            parallel_for(M, [&](std::int64_t s, std::int64_t e) {
                for (std::int64_t i = s; i < e; ++i) {
                    const T sig = T(1) / (T(1) + std::exp(-pz[i]));
                    gz[i] += g * (sig - pt[i]);
                }
            });
        };
    }
    out.node = node;
    return out;
}

}  // namespace mpmae::ops
