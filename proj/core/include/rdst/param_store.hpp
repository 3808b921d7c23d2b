#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rdst/tensor.hpp"

namespace rdst {

/// Named, ordered collection of trainable tensors. Insertion order is the
/// serialization order and the optimizer's iteration order.
class ParamStore {
   public:
    /// Registers `value` under `name` and marks it requires-grad.
    Tensor& add(const std::string& name, Tensor value);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    std::size_t size() const { return entries_.size(); }
    /// Total scalar count over all tensors.
    std::int64_t count() const;

    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

    /// Overwrites values by name; every name in `other` must exist here with
    /// the same shape. Storage of this store is replaced, not aliased.
    void load_from(const ParamStore& other);

    /// Deep copy with fresh storage.
    ParamStore clone() const;

   private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace rdst
