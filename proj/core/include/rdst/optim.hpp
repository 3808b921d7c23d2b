#pragma once

#include <cstdint>
#include <vector>

#include "rdst/param_store.hpp"

namespace rdst {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

/// One bias-corrected Adam update, in place on `params`. `grads` is aligned
/// with `params.entries()`. Moment buffers are allocated on the first call.
void adam_step(ParamStore& params, const std::vector<Tensor>& grads, const AdamConfig& cfg, AdamState& state);

}  // namespace rdst
