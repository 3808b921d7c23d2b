#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace rdst {

enum class DType : std::uint32_t { kF32 = 0, kF64 = 1 };

using Shape = std::vector<std::int64_t>;

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
std::string to_string(DType dtype);
std::size_t dtype_size(DType dtype);

// Post-op scan for NaN/Inf. On by default; benchmark paths switch it off.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

class FiniteCheckGuard {
   public:
    explicit FiniteCheckGuard(bool enabled) : previous_(finite_checks_enabled()) { set_finite_checks(enabled); }
    ~FiniteCheckGuard() { set_finite_checks(previous_); }
    FiniteCheckGuard(const FiniteCheckGuard&) = delete;
    FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

   private:
    bool previous_;
};

/// Dense row-major tensor with shared, logically immutable storage.
///
/// Copies are cheap handles onto the same storage. Every op returns a fresh
/// tensor; the only in-place writers are owners of freshly built tensors
/// (kernels, initialisers) and the optimiser updating parameters between
/// steps. Gradient bookkeeping lives in `Tape`.
class Tensor {
   public:
    Tensor() = default;
    Tensor(Shape shape, DType dtype);

    static Tensor zeros(Shape shape, DType dtype = DType::kF32);
    static Tensor ones(Shape shape, DType dtype = DType::kF32);
    static Tensor full(Shape shape, double value, DType dtype = DType::kF32);
    static Tensor scalar(double value, DType dtype = DType::kF32);
    static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = DType::kF32);
    static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype = DType::kF32);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    std::int64_t dim(int axis) const;  // negative axes count from the back
    std::int64_t numel() const;
    DType dtype() const;

    template <typename T>
    std::span<const T> data() const;
    template <typename T>
    std::span<T> mutable_data();

    std::vector<double> to_vector() const;
    double item() const;
    double at(std::initializer_list<std::int64_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);

    // Same storage, no tape participation.
    Tensor detach() const;
    // Fresh storage, no tape participation.
    Tensor clone() const;
    Tensor to(DType dtype) const;
    // Same storage under a new shape of equal element count, no tape participation.
    Tensor with_shape(Shape shape) const;

    bool same_storage(const Tensor& other) const;
    const void* identity() const { return impl_.get(); }

   private:
    friend class Tape;
    struct Impl;
    std::shared_ptr<Impl> impl_;
    Impl& impl() const;
};

int normalize_axis(int axis, int rank);
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace rdst
