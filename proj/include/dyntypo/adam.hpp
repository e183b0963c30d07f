#pragma once

#include "dyntypo/error.hpp"
#include "dyntypo/tensor.hpp"

#include <cmath>
#include <string>

namespace dyntypo {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Tensor m, v;
    std::size_t step = 0;
};

/// One bias-corrected Adam update of `param` in place.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& st, double lr, const AdamConfig& cfg,
                      const std::string& name = "param") {
    if (!param.same_shape(grad)) throw Error("adam_step: gradient shape mismatch for " + name);
    if (!grad.all_finite()) throw Error("non-finite gradient in parameter " + name);
    if (st.m.empty()) {
        st.m = Tensor(param.rows, param.cols);
        st.v = Tensor(param.rows, param.cols);
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

} // namespace dyntypo
