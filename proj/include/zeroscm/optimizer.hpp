#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "zeroscm/tape.hpp"

namespace zeroscm {

template <typename T>
struct AdamState {
    std::map<std::string, Tensor<T>> first_moment, second_moment;
    int64_t step = 0;
};

template <typename T>
void adam_init(AdamState<T>& state, const ParamRegistry<T>& params,
               const std::vector<std::string>& trained) {
    state.step = 0;
    for (const auto& name : trained) {
        state.first_moment[name] = Tensor<T>::zeros(params.get(name).shape);
        state.second_moment[name] = Tensor<T>::zeros(params.get(name).shape);
    }
}

/// Bias-corrected Adam with decoupled weight decay:
/// p <- p - lr*wd*p - lr * m^ / (sqrt(v^) + eps).
template <typename T>
void adam_step(ParamRegistry<T>& params, const std::map<std::string, Tensor<T>>& grads,
               AdamState<T>& state, const std::vector<std::string>& trained, T lr, T wd,
               T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
    state.step += 1;
    T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), double(state.step)));
    T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), double(state.step)));
    for (const auto& name : trained) {
        Tensor<T>& p = params.get(name);
        const Tensor<T>& g = grads.at(name);
        Tensor<T>& m = state.first_moment.at(name);
        Tensor<T>& v = state.second_moment.at(name);
        if (g.shape != p.shape) throw ShapeError("adam_step: gradient shape mismatch for " + name);
        for (size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = beta1 * m.data[i] + (T(1) - beta1) * g.data[i];
            v.data[i] = beta2 * v.data[i] + (T(1) - beta2) * g.data[i] * g.data[i];
            T mhat = m.data[i] / bc1;
            T vhat = v.data[i] / bc2;
            p.data[i] -= lr * wd * p.data[i] + lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename T>
struct EmaState {
    std::map<std::string, Tensor<T>> shadow;
    T decay = T(0.999);
};

template <typename T>
void ema_init(EmaState<T>& state, const ParamRegistry<T>& params,
              const std::vector<std::string>& trained, T decay) {
    state.decay = decay;
    for (const auto& name : trained) state.shadow[name] = params.get(name);
}

/// shadow <- decay * shadow + (1 - decay) * param.
template <typename T>
void ema_update(EmaState<T>& state, const ParamRegistry<T>& params) {
    for (auto& kv : state.shadow) {
        const Tensor<T>& p = params.get(kv.first);
        for (size_t i = 0; i < p.data.size(); ++i)
            kv.second.data[i] = state.decay * kv.second.data[i] + (T(1) - state.decay) * p.data[i];
    }
}

}  // namespace zeroscm
