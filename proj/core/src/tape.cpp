#include "rdst/tape.hpp"

#include <atomic>
#include <stdexcept>

#include "rdst/detail/dispatch.hpp"
#include "tensor_impl.hpp"

namespace rdst {

namespace {
std::atomic<std::uint64_t> g_next_uid{1};
thread_local Tape* t_active = nullptr;

void add_into(Tensor& acc, const Tensor& g) {
    detail::visit_dtype(acc.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto a = acc.mutable_data<T>();
        auto b = g.data<T>();
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    });
}
}  // namespace

Tape::Tape() : uid_(g_next_uid.fetch_add(1)) {}
Tape::~Tape() = default;

Tape::Scope::Scope(Tape& tape) : previous_(t_active) { t_active = &tape; }
Tape::Scope::~Scope() { t_active = previous_; }

Tape* Tape::active() { return t_active; }

NoGradGuard::NoGradGuard() : previous_(t_active) { t_active = nullptr; }
NoGradGuard::~NoGradGuard() { t_active = previous_; }

int Tape::node_of(const Tensor& t) const {
    if (!t.defined()) return -1;
    const auto& impl = t.impl();
    if (impl.tape_uid != uid_) return -1;
    return impl.node;
}

bool Tape::tracks(const Tensor& t) const {
    if (!t.defined()) return false;
    return node_of(t) >= 0 || t.requires_grad();
}

int Tape::ensure_leaf(const Tensor& t) {
    int id = node_of(t);
    if (id >= 0) return id;
    if (!t.requires_grad()) return -1;
    Node n;
    n.shape = t.shape();
    n.dtype = t.dtype();
    n.leaf = true;
    nodes_.push_back(std::move(n));
    auto& impl = t.impl();
    impl.tape_uid = uid_;
    impl.node = static_cast<int>(nodes_.size()) - 1;
    return impl.node;
}

void Tape::record(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn backward) {
    if (consumed_) throw std::logic_error("recording onto a consumed tape; call reset() first");
    Node n;
    n.inputs.reserve(inputs.size());
    bool any = false;
    for (const auto& in : inputs) {
        int id = ensure_leaf(in);
        any = any || id >= 0;
        n.inputs.push_back(id);
    }
    if (!any) return;
    n.shape = output.shape();
    n.dtype = output.dtype();
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    auto& impl = output.impl();
    impl.tape_uid = uid_;
    impl.node = static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int node, const Tensor& g) {
    auto& n = nodes_[node];
    if (g.shape() != n.shape) {
        throw ShapeError("gradient shape " + to_string(g.shape()) + " does not match node shape " + to_string(n.shape));
    }
    if (!n.grad.defined()) {
        n.grad = g.clone();
    } else {
        add_into(n.grad, g);
    }
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw std::logic_error("backward() called twice without reset()");
    if (loss.numel() != 1) throw ShapeError("backward() root must be a scalar, got " + to_string(loss.shape()));
    const int root = node_of(loss);
    if (root < 0 || nodes_[root].leaf) throw std::logic_error("backward() root is not recorded on this tape");
    consumed_ = true;
    NoGradGuard no_grad;
    nodes_[root].grad = Tensor::ones(loss.shape(), loss.dtype());
    for (int i = root; i >= 0; --i) {
        auto& n = nodes_[i];
        if (n.leaf || !n.grad.defined() || !n.backward) continue;
        std::vector<bool> needs(n.inputs.size());
        for (std::size_t k = 0; k < n.inputs.size(); ++k) needs[k] = n.inputs[k] >= 0;
        GradSlots slots(std::move(needs));
        n.backward(n.grad, slots);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const int in = n.inputs[k];
            if (in < 0) continue;
            const auto& g = slots.grads()[k];
            if (!g.defined()) continue;
            accumulate(in, g);
        }
        // Intermediate gradients and saved activations are no longer needed.
        n.grad = Tensor();
        n.backward = nullptr;
    }
}

Tensor Tape::grad(const Tensor& leaf) const {
    const int id = node_of(leaf);
    if (id < 0) return {};
    return nodes_[id].grad;
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
    // Tensors still pointing at this tape must not alias new nodes.
    uid_ = g_next_uid.fetch_add(1);
}

bool any_tracked(const std::vector<Tensor>& inputs) {
    Tape* tape = Tape::active();
    if (!tape) return false;
    for (const auto& t : inputs) {
        if (tape->tracks(t)) return true;
    }
    return false;
}

void record_op(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn backward) {
    Tape* tape = Tape::active();
    if (!tape || !any_tracked(inputs)) return;
    tape->record(output, inputs, std::move(backward));
}

}  // namespace rdst
