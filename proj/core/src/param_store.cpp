#include "rdst/param_store.hpp"

#include <stdexcept>

namespace rdst {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].second;
}

std::int64_t ParamStore::count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

void ParamStore::load_from(const ParamStore& other) {
    for (const auto& [name, t] : other.entries_) {
        Tensor& dst = get(name);
        if (dst.shape() != t.shape()) {
            throw ShapeError("parameter " + name + ": shape " + to_string(t.shape()) + " does not match " +
                             to_string(dst.shape()));
        }
        dst = t.to(dst.dtype());
        dst.set_requires_grad(true);
    }
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& [name, t] : entries_) out.add(name, t.clone());
    return out;
}

}  // namespace rdst
