#pragma once

#include "kpe_forge/error.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace kpeforge {

struct AdamHyper {
    double lr{1e-4};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
};

// First/second moment estimates over a flat parameter buffer.
template <class T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::uint64_t step{0};

    void resize(std::size_t n) {
        m.assign(n, T(0));
        v.assign(n, T(0));
        step = 0;
    }
};

template <class T>
void adamStep(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamHyper& hyper) {
    if (params.size() != grads.size()) throw InvalidArgument("adam: parameter/gradient size mismatch");
    if (state.m.size() != params.size()) state.resize(params.size());
    ++state.step;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
    const T stepSize = static_cast<T>(hyper.lr / bc1);
    const T invBc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(hyper.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        params[i] -= stepSize * state.m[i] / (std::sqrt(state.v[i] * invBc2) + eps);
    }
}

} // namespace kpeforge
