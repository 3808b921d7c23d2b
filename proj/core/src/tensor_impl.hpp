#pragma once

#include <memory>
#include <variant>
#include <vector>

#include "rdst/tensor.hpp"

namespace rdst {

using Storage = std::variant<std::vector<float>, std::vector<double>>;

struct Tensor::Impl {
    Shape shape;
    DType dtype = DType::kF32;
    std::shared_ptr<Storage> storage;
    bool requires_grad = false;
    // Tape bookkeeping, see Tape.
    std::uint64_t tape_uid = 0;
    int node = -1;
};

}  // namespace rdst
