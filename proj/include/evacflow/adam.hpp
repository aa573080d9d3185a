#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "evacflow/common.hpp"
#include "evacflow/tensor.hpp"

namespace evacflow {

/// A trainable tensor with a stable name (used in reports and artifacts).
struct NamedParam {
    std::string name;
    Tensor value;
};

using ParamSet = std::vector<NamedParam>;

inline void zero_grads(ParamSet& params) {
    for (auto& p : params) p.value.zero_grad();
}

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
inline double clip_gradients(ParamSet& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params)
        if (p.value.has_grad())
            for (double g : p.value.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& p : params)
            if (p.value.has_grad())
                for (double& g : p.value.grad()) g *= s;
    }
    return norm;
}

// ---------------------------------------------------------------------------
// ADAM with bias correction. Moment buffers mirror the parameter list; the
// step counter advances once per update and grads are left for the caller to
// zero between steps.
// ---------------------------------------------------------------------------

struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    static AdamState init(const ParamSet& params, double lr = 0.001) {
        AdamState st;
        st.lr = lr;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto& p : params) {
            st.m.emplace_back(p.value.numel(), 0.0);
            st.v.emplace_back(p.value.numel(), 0.0);
        }
        return st;
    }
};

inline void adam_step(AdamState& state, ParamSet& params) {
    require<ContractError>(state.m.size() == params.size() &&
                               state.v.size() == params.size(),
                           "adam_step: state tracks " + std::to_string(state.m.size()) +
                               " parameters, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        require<ContractError>(params[i].value.has_grad(),
                               "adam_step: parameter '" + params[i].name +
                                   "' has no gradient");
        require<ContractError>(state.m[i].size() == params[i].value.numel(),
                               "adam_step: moment shape mismatch for '" +
                                   params[i].name + "'");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i].value.values();
        const auto& g = params[i].value.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace evacflow
