#include "rdst/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "rdst/detail/dispatch.hpp"

namespace rdst {

void adam_step(ParamStore& params, const std::vector<Tensor>& grads, const AdamConfig& cfg, AdamState& state) {
    auto& entries = params.entries();
    if (grads.size() != entries.size()) {
        throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                    std::to_string(entries.size()) + " parameters");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!grads[i].defined()) throw std::invalid_argument("adam_step: missing gradient for " + entries[i].first);
        if (grads[i].shape() != entries[i].second.shape()) {
            throw ShapeError("adam_step: gradient shape mismatch for " + entries[i].first);
        }
    }
    if (state.m.empty()) {
        for (const auto& [name, p] : entries) {
            state.m.push_back(Tensor::zeros(p.shape(), p.dtype()));
            state.v.push_back(Tensor::zeros(p.shape(), p.dtype()));
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor& p = entries[i].second;
        detail::visit_dtype(p.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto w = p.mutable_data<T>();
            auto g = grads[i].data<T>();
            auto m = state.m[i].mutable_data<T>();
            auto v = state.v[i].mutable_data<T>();
            const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
            const T step_size = static_cast<T>(cfg.lr / bc1);
            const T inv_bc2 = static_cast<T>(1.0 / bc2);
            const T eps = static_cast<T>(cfg.eps);
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[k] = b1 * m[k] + (T(1) - b1) * g[k];
                v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
                w[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
            }
        });
    }
}

}  // namespace rdst
