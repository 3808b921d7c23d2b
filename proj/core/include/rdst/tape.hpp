#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rdst/tensor.hpp"

namespace rdst {

/// Input-gradient slots handed to a backward rule. `needs(i)` is false for
/// inputs that are not on the tape; rules skip that work.
class GradSlots {
   public:
    explicit GradSlots(std::vector<bool> needs) : needs_(std::move(needs)), grads_(needs_.size()) {}
    bool needs(std::size_t i) const { return needs_[i]; }
    void set(std::size_t i, Tensor grad) { grads_[i] = std::move(grad); }
    std::vector<Tensor>& grads() { return grads_; }

   private:
    std::vector<bool> needs_;
    std::vector<Tensor> grads_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSlots& slots)>;

/// Dynamic reverse-mode tape. Ops record onto the thread's active tape
/// whenever one of their inputs participates (a requires-grad leaf or an
/// output recorded earlier). Nodes are appended in execution order, so the
/// list is topologically sorted by construction.
class Tape {
   public:
    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    /// Makes `tape` the active tape of the calling thread for its lifetime.
    class Scope {
       public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

       private:
        Tape* previous_;
    };

    static Tape* active();

    bool tracks(const Tensor& t) const;
    void record(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn backward);

    /// Propagates d(loss)/d(node) to every leaf. Errors on a non-scalar or
    /// detached root, and on a second call before reset().
    void backward(const Tensor& loss);

    /// Gradient of a leaf after backward(); undefined tensor when the leaf
    /// never took part.
    Tensor grad(const Tensor& leaf) const;

    void reset();
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

   private:
    struct Node {
        std::vector<int> inputs;
        Shape shape;
        DType dtype = DType::kF32;
        BackwardFn backward;
        Tensor grad;
        bool leaf = false;
    };

    int node_of(const Tensor& t) const;
    int ensure_leaf(const Tensor& t);
    void accumulate(int node, const Tensor& g);

    std::uint64_t uid_;
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

/// Suspends recording on the calling thread (inference, backward rules).
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    Tape* previous_;
};

/// Records `backward` on the active tape if any input participates.
void record_op(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn backward);

/// True when there is an active tape that tracks any of `inputs`.
bool any_tracked(const std::vector<Tensor>& inputs);

}  // namespace rdst
