#include "rdst/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <sstream>

#include "rdst/detail/dispatch.hpp"
#include "tensor_impl.hpp"

namespace rdst {

namespace {
std::atomic<bool> g_finite_checks{true};
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled, std::memory_order_relaxed); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::string to_string(DType dtype) { return dtype == DType::kF64 ? "f64" : "f32"; }

std::size_t dtype_size(DType dtype) { return dtype == DType::kF64 ? sizeof(double) : sizeof(float); }

int normalize_axis(int axis, int rank) {
    int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return a;
}

Tensor::Tensor(Shape shape, DType dtype) : impl_(std::make_shared<Impl>()) {
    for (auto e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
    const auto n = static_cast<std::size_t>(rdst::numel(shape));
    impl_->shape = std::move(shape);
    impl_->dtype = dtype;
    if (dtype == DType::kF64) {
        impl_->storage = std::make_shared<Storage>(std::vector<double>(n, 0.0));
    } else {
        impl_->storage = std::make_shared<Storage>(std::vector<float>(n, 0.0f));
    }
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::ones(Shape shape, DType dtype) { return full(std::move(shape), 1.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t(std::move(shape), dtype);
    detail::visit_dtype(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        std::fill(d.begin(), d.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full(Shape{}, value, dtype); }

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
    Tensor t(std::move(shape), dtype);
    if (static_cast<std::int64_t>(values.size()) != t.numel()) {
        throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " + to_string(t.shape()));
    }
    detail::visit_dtype(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        std::transform(values.begin(), values.end(), d.begin(), [](double v) { return static_cast<T>(v); });
    });
    return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
    return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
int Tensor::rank() const { return static_cast<int>(impl().shape.size()); }
std::int64_t Tensor::dim(int axis) const { return impl().shape[normalize_axis(axis, rank())]; }
std::int64_t Tensor::numel() const { return rdst::numel(impl().shape); }
DType Tensor::dtype() const { return impl().dtype; }

template <typename T>
std::span<const T> Tensor::data() const {
    auto* v = std::get_if<std::vector<T>>(impl().storage.get());
    if (!v) throw std::invalid_argument("tensor dtype is " + to_string(dtype()));
    return {v->data(), v->size()};
}

template <typename T>
std::span<T> Tensor::mutable_data() {
    auto* v = std::get_if<std::vector<T>>(impl().storage.get());
    if (!v) throw std::invalid_argument("tensor dtype is " + to_string(dtype()));
    return {v->data(), v->size()};
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

std::vector<double> Tensor::to_vector() const {
    return detail::visit_dtype(dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = data<T>();
        return std::vector<double>(d.begin(), d.end());
    });
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return to_vector()[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
    if (static_cast<int>(index.size()) != rank()) throw ShapeError("at(): index rank mismatch");
    std::int64_t flat = 0;
    int axis = 0;
    for (auto i : index) {
        const auto extent = shape()[axis++];
        if (i < 0 || i >= extent) throw ShapeError("at(): index out of range");
        flat = flat * extent + i;
    }
    return detail::visit_dtype(dtype(), [&](auto tag) {
        using T = decltype(tag);
        return static_cast<double>(data<T>()[flat]);
    });
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    impl().requires_grad = value;
    return *this;
}

Tensor Tensor::detach() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl().shape;
    t.impl_->dtype = impl().dtype;
    t.impl_->storage = impl().storage;
    return t;
}

Tensor Tensor::with_shape(Shape new_shape) const {
    if (rdst::numel(new_shape) != numel()) {
        throw ShapeError("cannot reshape " + to_string(shape()) + " to " + to_string(new_shape));
    }
    for (auto e : new_shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(new_shape));
    }
    Tensor t = detach();
    t.impl_->shape = std::move(new_shape);
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl().shape;
    t.impl_->dtype = impl().dtype;
    t.impl_->storage = std::make_shared<Storage>(*impl().storage);
    return t;
}

Tensor Tensor::to(DType target) const {
    if (target == dtype()) return clone();
    Tensor out(shape(), target);
    detail::visit_dtype(dtype(), [&](auto src_tag) {
        using S = decltype(src_tag);
        detail::visit_dtype(target, [&](auto dst_tag) {
            using D = decltype(dst_tag);
            auto s = data<S>();
            auto d = out.mutable_data<D>();
            std::transform(s.begin(), s.end(), d.begin(), [](S v) { return static_cast<D>(v); });
        });
    });
    return out;
}

bool Tensor::same_storage(const Tensor& other) const {
    return impl_ && other.impl_ && impl_->storage == other.impl_->storage;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
    return detail::visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.data<T>();
        auto y = b.data<T>();
        return std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
    });
}

namespace detail {
void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw std::invalid_argument(std::string(op) + ": dtype mismatch (" + to_string(a.dtype()) + " vs " +
                                    to_string(b.dtype()) + ")");
    }
}
}  // namespace detail

}  // namespace rdst
