#pragma once

#include "mpmae/core/autograd.hpp"
#include "mpmae/core/parallel.hpp"
#include "mpmae/core/serialize.hpp"

namespace mpmae::train {

// Decoupled-weight-decay Adam. Decay applies to ".weight" tensors only
// (biases, norms, the mask token and the task log-variances are exempt).
template <typename T>
class AdamW {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.95;
        double eps = 1e-8;
        double weight_decay = 0.05;
    };

    AdamW(std::vector<NodeRef<T>> params, Options opt = {}) : params_(std::move(params)), opt_(opt) {
        for (const auto& p : params_) {
            State s;
            s.m = Tensor<T>::zeros(p->value.shape());
            s.v = Tensor<T>::zeros(p->value.shape());
            s.decay = p->name.size() >= 7 && p->name.substr(p->name.size() - 7) == ".weight";
            state_.push_back(std::move(s));
        }
    }

    const std::vector<NodeRef<T>>& params() const { return params_; }
    std::int64_t step_count() const { return step_; }

    void zero_grad() { zero_grads(params_); }

    void step(double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p->grad.defined()) continue;
            auto& st = state_[i];
            T* w = p->value.data();
            const T* g = p->grad.data();
            T* m = st.m.data();
            T* v = st.v.data();
            const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
            const T wd = st.decay ? static_cast<T>(lr * opt_.weight_decay) : T(0);
            const T lr_t = static_cast<T>(lr);
            const T eps = static_cast<T>(opt_.eps);
            const T ibc1 = static_cast<T>(1.0 / bc1), ibc2 = static_cast<T>(1.0 / bc2);
            parallel_for(p->value.numel(), [&](std::int64_t s, std::int64_t e) {
                for (std::int64_t k = s; k < e; ++k) {
                    m[k] = b1 * m[k] + (T(1) - b1) * g[k];
                    v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
                    const T mh = m[k] * ibc1;
                    const T vh = v[k] * ibc2;
                    w[k] -= lr_t * mh / (std::sqrt(vh) + eps) + wd * w[k];
                }
            });
        }
    }

    void save_state(TensorArchive& a) const {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            a.put("opt.m." + params_[i]->name, state_[i].m);
            a.put("opt.v." + params_[i]->name, state_[i].v);
        }
        Tensor<std::uint64_t> st({1});
        st[0] = static_cast<std::uint64_t>(step_);
        a.put("opt.step", st);
    }

    void load_state(const TensorArchive& a) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            state_[i].m = a.get<T>("opt.m." + params_[i]->name);
            state_[i].v = a.get<T>("opt.v." + params_[i]->name);
        }
        step_ = static_cast<std::int64_t>(a.get<std::uint64_t>("opt.step")[0]);
    }

private:
    struct State {
        Tensor<T> m, v;
        bool decay = false;
    };

    std::vector<NodeRef<T>> params_;
    Options opt_;
    std::vector<State> state_;
    std::int64_t step_ = 0;
};

// Linear warmup then cosine decay to zero; peak = base_lr * batch/256.
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                          double peak_lr) {
    if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
    if (warmup_steps > 0 && step < warmup_steps)
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return 0.0;
    const double t = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup_steps));
    return peak_lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643 * t));
}

}  // namespace mpmae::train
