#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "rdst/ops.hpp"
#include "rdst/tape.hpp"

using namespace rdst;
using rdst::testing::gradcheck;
using rdst::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return t.to_vector(); }

Tensor f64(Shape s, std::initializer_list<double> v) { return Tensor::from_values(std::move(s), v, DType::kF64); }

}  // namespace

TEST(Elementwise, AddComponentwise) {
    auto r = add(f64({2}, {1, 2}), f64({2}, {3, 4}));
    EXPECT_EQ(values(r), (std::vector<double>{4, 6}));
}

TEST(Elementwise, MulByScalarZero) {
    auto r = mul(f64({2}, {2, 3}), 0.0);
    EXPECT_EQ(values(r), (std::vector<double>{0, 0}));
}

TEST(Elementwise, BroadcastRowVector) {
    auto a = Tensor::zeros({2, 3}, DType::kF64);
    auto b = f64({3}, {1, 2, 3});
    auto r = add(a, b);
    EXPECT_EQ(r.shape(), (Shape{2, 3}));
    EXPECT_EQ(values(r), (std::vector<double>{1, 2, 3, 1, 2, 3}));
}

TEST(Elementwise, IncompatibleShapesThrow) {
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
}

TEST(Elementwise, NonFiniteResultThrows) {
    auto a = f64({1}, {1.0});
    auto z = f64({1}, {0.0});
    EXPECT_THROW(div(a, z), NonFiniteError);
    FiniteCheckGuard off(false);
    EXPECT_TRUE(std::isinf(div(a, z).item()));
}

// Broadcast result must equal explicit tiling of both operands to the output
// shape, for every pair of shapes up to rank 3 with extents in {1..4}.
TEST(Elementwise, BroadcastMatchesExplicitTiling) {
    std::vector<Shape> shapes;
    for (int rank = 0; rank <= 3; ++rank) {
        Shape s(rank, 1);
        std::function<void(int)> rec = [&](int d) {
            if (d == rank) {
                shapes.push_back(s);
                return;
            }
            for (int e = 1; e <= 4; ++e) {
                s[d] = e;
                rec(d + 1);
            }
        };
        rec(0);
    }
    std::mt19937_64 rng(11);
    int checked = 0;
    for (const auto& sa : shapes) {
        for (const auto& sb : shapes) {
            Shape out;
            try {
                out = broadcast_shapes(sa, sb);
            } catch (const ShapeError&) {
                continue;
            }
            auto a = random_tensor(sa, rng);
            auto b = random_tensor(sb, rng);
            auto r = mul(a, b);
            ASSERT_EQ(r.shape(), out);
            const int rank = static_cast<int>(out.size());
            auto lookup = [&](const Tensor& t, const std::vector<std::int64_t>& idx) {
                const int off = rank - t.rank();
                std::int64_t flat = 0;
                for (int d = 0; d < t.rank(); ++d) {
                    const auto e = t.shape()[d];
                    flat = flat * e + (e == 1 ? 0 : idx[d + off]);
                }
                return t.data<double>()[flat];
            };
            std::vector<std::int64_t> idx(rank, 0);
            for (std::int64_t i = 0; i < r.numel(); ++i) {
                std::int64_t rem = i;
                for (int d = rank - 1; d >= 0; --d) {
                    idx[d] = rem % out[d];
                    rem /= out[d];
                }
                ASSERT_EQ(r.data<double>()[i], lookup(a, idx) * lookup(b, idx));
            }
            ++checked;
        }
    }
    EXPECT_GT(checked, 1000);
}

TEST(Matmul, IdentityLeft) {
    auto r = matmul(f64({2, 2}, {1, 0, 0, 1}), f64({2, 2}, {1, 2, 3, 4}));
    EXPECT_EQ(values(r), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandContraction) {
    auto r = matmul(f64({1, 2}, {1, 2}), f64({2, 1}, {3, 4}));
    EXPECT_EQ(r.shape(), (Shape{1, 1}));
    EXPECT_EQ(r.item(), 11.0);
}

TEST(Matmul, BatchedShape) {
    auto r = matmul(Tensor::zeros({2, 3, 4}), Tensor::zeros({2, 4, 5}));
    EXPECT_EQ(r.shape(), (Shape{2, 3, 5}));
}

TEST(Matmul, InnerMismatchThrows) { EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError); }

TEST(Matmul, AssociativityRandom) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({4, 5}, rng);
        auto c = random_tensor({5, 2}, rng);
        auto l = values(matmul(matmul(a, b), c));
        auto r = values(matmul(a, matmul(b, c)));
        for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(l[i], r[i], 1e-10);
    }
}

TEST(Matmul, BroadcastBatchMatchesLoop) {
    std::mt19937_64 rng(5);
    auto a = random_tensor({3, 2, 4}, rng);
    auto b = random_tensor({4, 3}, rng);
    auto r = matmul(a, b);
    for (int i = 0; i < 3; ++i) {
        auto ai = reshape(slice(a, 0, i, 1), {2, 4});
        auto ri = values(matmul(ai, b));
        auto got = values(reshape(slice(r, 0, i, 1), {2, 3}));
        for (std::size_t k = 0; k < ri.size(); ++k) EXPECT_NEAR(got[k], ri[k], 1e-12);
    }
}

TEST(Softmax, Symmetric) {
    auto r = values(softmax(f64({2}, {0, 0}), 0));
    EXPECT_DOUBLE_EQ(r[0], 0.5);
    EXPECT_DOUBLE_EQ(r[1], 0.5);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
    auto r = values(softmax(f64({2}, {1000, 1000}), 0));
    EXPECT_DOUBLE_EQ(r[0], 0.5);
    EXPECT_DOUBLE_EQ(r[1], 0.5);
}

TEST(Softmax, ClosedForm) {
    auto r = values(softmax(f64({2}, {0, std::log(3.0)}), 0));
    EXPECT_NEAR(r[0], 0.25, 1e-15);
    EXPECT_NEAR(r[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneAndPermutationEquivariant) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = random_tensor({3, 7}, rng, -20, 20, DType::kF32);
        auto y = softmax(x, 1);
        for (int r = 0; r < 3; ++r) {
            double s = 0;
            for (int c = 0; c < 7; ++c) s += y.at({r, c});
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
        std::vector<int> perm(7);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Tensor> cols;
        auto x64 = x.to(DType::kF64);
        auto y64 = softmax(x64, 1);
        for (int c : perm) cols.push_back(slice(x64, 1, c, 1));
        auto yp = softmax(concat(cols, 1), 1);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 7; ++c) EXPECT_NEAR(yp.at({r, c}), y64.at({r, perm[c]}), 1e-15);
        }
    }
}

TEST(Backward, SumOfSquares) {
    auto x = f64({2}, {1, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    auto loss = sum(square(x));
    tape.backward(loss);
    EXPECT_EQ(values(tape.grad(x)), (std::vector<double>{2, 4}));
}

TEST(Backward, ProductRule) {
    auto x = Tensor::scalar(3, DType::kF64).set_requires_grad(true);
    auto y = Tensor::scalar(5, DType::kF64).set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(mul(x, y));
    EXPECT_EQ(tape.grad(x).item(), 5.0);
    EXPECT_EQ(tape.grad(y).item(), 3.0);
}

TEST(Backward, SecondCallWithoutResetThrows) {
    auto x = f64({2}, {1, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    auto loss = sum(x);
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), std::logic_error);
    tape.reset();
    auto loss2 = sum(x);
    EXPECT_NO_THROW(tape.backward(loss2));
}

TEST(Backward, NonScalarRootThrows) {
    auto x = f64({2}, {1, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    EXPECT_THROW(tape.backward(square(x)), ShapeError);
}

TEST(Backward, DetachedRootThrows) {
    auto x = f64({2}, {1, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    auto loss = sum(x).detach();
    EXPECT_THROW(tape.backward(loss), std::logic_error);
}

TEST(Backward, UntrackedTensorGetsNoGradient) {
    auto x = f64({2}, {1, 2}).set_requires_grad(true);
    auto c = f64({2}, {3, 4});
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(sum(mul(x, c)));
    EXPECT_FALSE(tape.grad(c).defined());
    EXPECT_EQ(values(tape.grad(x)), (std::vector<double>{3, 4}));
}

TEST(Backward, EveryLeafGetsGradientOfSameShape) {
    std::mt19937_64 rng(2);
    auto a = random_tensor({2, 3}, rng).set_requires_grad(true);
    auto b = random_tensor({3}, rng).set_requires_grad(true);
    auto w = random_tensor({3, 4}, rng).set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(sum(matmul(add(a, b), w)));
    for (const auto* t : {&a, &b, &w}) {
        ASSERT_TRUE(tape.grad(*t).defined());
        EXPECT_EQ(tape.grad(*t).shape(), t->shape());
    }
}

TEST(ShapeOps, RollMatchesDefinition) {
    auto x = f64({5}, {0, 1, 2, 3, 4});
    EXPECT_EQ(values(roll(x, 0, 2)), (std::vector<double>{3, 4, 0, 1, 2}));
    EXPECT_EQ(values(roll(x, 0, -1)), (std::vector<double>{1, 2, 3, 4, 0}));
}

TEST(ShapeOps, PadReflectMirrorsWithoutEdgeRepeat) {
    auto x = f64({3}, {1, 2, 3});
    EXPECT_EQ(values(pad_reflect(x, 0, 2, 3)), (std::vector<double>{3, 2, 1, 2, 3, 2, 1, 2}));
}

TEST(ShapeOps, PermuteTransposes) {
    auto x = f64({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(values(transpose(x, 0, 1)), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

// Finite-difference checks: every differentiable op, >= 100 random trials,
// random 64-bit inputs of rank <= 4. The loss is a random weighting of the
// op's output so every output element contributes a distinct direction.
class OpGradient : public ::testing::TestWithParam<std::string> {};

Shape random_shape(std::mt19937_64& rng, int max_rank = 4, int max_extent = 3) {
    std::uniform_int_distribution<int> rank_d(1, max_rank), ext_d(1, max_extent);
    Shape s(rank_d(rng));
    for (auto& e : s) e = ext_d(rng);
    return s;
}

Tensor weighted(const Tensor& y, std::mt19937_64& rng) {
    auto w = random_tensor(y.shape(), rng);
    return sum(mul(y, w));
}

TEST_P(OpGradient, MatchesFiniteDifferences) {
    const std::string op = GetParam();
    std::mt19937_64 rng(std::hash<std::string>{}(op));
    for (int trial = 0; trial < 100; ++trial) {
        Shape s = random_shape(rng);
        std::vector<Tensor> inputs;
        std::function<Tensor(const std::vector<Tensor>&)> f;
        const std::uint64_t wseed = rng();
        auto with_weights = [wseed](Tensor y) {
            std::mt19937_64 r(wseed);
            return weighted(y, r);
        };
        if (op == "add" || op == "sub" || op == "mul" || op == "div") {
            // Broadcast the second operand along a random subset of axes.
            Shape sb = s;
            for (auto& e : sb) {
                if (rng() % 2) e = 1;
            }
            if (rng() % 3 == 0) sb.erase(sb.begin());
            if (sb.empty()) sb = {1};
            inputs = {random_tensor(s, rng), random_tensor(sb, rng, op == "div" ? 0.5 : -1, op == "div" ? 2.0 : 1)};
            BinaryOp k = op == "add" ? BinaryOp::kAdd : op == "sub" ? BinaryOp::kSub : op == "mul" ? BinaryOp::kMul : BinaryOp::kDiv;
            f = [k, with_weights](const auto& in) { return with_weights(elementwise(k, in[0], in[1])); };
        } else if (op == "scalar") {
            inputs = {random_tensor(s, rng)};
            f = [with_weights](const auto& in) { return with_weights(div(add(mul(in[0], 3.0), 1.0), 2.0)); };
        } else if (op == "abs" || op == "square" || op == "exp" || op == "relu" || op == "sigmoid") {
            inputs = {random_tensor(s, rng)};
            f = [op, with_weights](const auto& in) {
                Tensor y = op == "abs" ? abs(in[0])
                           : op == "square" ? square(in[0])
                           : op == "exp"    ? exp(in[0])
                           : op == "relu"   ? relu(in[0])
                                            : sigmoid(in[0]);
                return with_weights(y);
            };
        } else if (op == "sqrt" || op == "log") {
            inputs = {random_tensor(s, rng, 0.2, 2.0)};
            f = [op, with_weights](const auto& in) { return with_weights(op == "sqrt" ? sqrt(in[0]) : log(in[0])); };
        } else if (op == "sum_axis" || op == "mean_axis") {
            inputs = {random_tensor(s, rng)};
            const int axis = static_cast<int>(rng() % s.size());
            const bool keep = rng() % 2;
            f = [op, axis, keep, with_weights](const auto& in) {
                return with_weights(op == "sum_axis" ? sum(in[0], axis, keep) : mean(in[0], axis, keep));
            };
        } else if (op == "mean") {
            inputs = {random_tensor(s, rng)};
            f = [](const auto& in) { return mean(square(in[0])); };
        } else if (op == "matmul") {
            std::uniform_int_distribution<int> e(1, 4);
            const int m = e(rng), k = e(rng), n = e(rng), batch = e(rng);
            const bool bcast = rng() % 2;
            inputs = {random_tensor({batch, m, k}, rng), bcast ? random_tensor({k, n}, rng) : random_tensor({batch, k, n}, rng)};
            f = [with_weights](const auto& in) { return with_weights(matmul(in[0], in[1])); };
        } else if (op == "softmax") {
            inputs = {random_tensor(s, rng, -3, 3)};
            const int axis = static_cast<int>(rng() % s.size());
            f = [axis, with_weights](const auto& in) { return with_weights(softmax(in[0], axis)); };
        } else if (op == "permute") {
            inputs = {random_tensor(s, rng)};
            std::vector<int> dims(s.size());
            std::iota(dims.begin(), dims.end(), 0);
            std::shuffle(dims.begin(), dims.end(), rng);
            f = [dims, with_weights](const auto& in) { return with_weights(permute(in[0], dims)); };
        } else if (op == "concat_slice") {
            const int axis = static_cast<int>(rng() % s.size());
            Shape s2 = s;
            s2[axis] += 1;
            inputs = {random_tensor(s, rng), random_tensor(s2, rng)};
            f = [axis, with_weights](const auto& in) {
                auto c = concat({in[0], in[1]}, axis);
                return with_weights(slice(c, axis, 1, c.shape()[axis] - 1));
            };
        } else if (op == "roll_pad") {
            const int axis = static_cast<int>(rng() % s.size());
            const auto shift = static_cast<std::int64_t>(rng() % 5) - 2;
            const auto before = static_cast<std::int64_t>(rng() % 4), after = static_cast<std::int64_t>(rng() % 4);
            inputs = {random_tensor(s, rng)};
            f = [axis, shift, before, after, with_weights](const auto& in) {
                return with_weights(pad_reflect(roll(in[0], axis, shift), axis, before, after));
            };
        } else if (op == "reshape") {
            inputs = {random_tensor(s, rng)};
            f = [with_weights](const auto& in) { return with_weights(square(reshape(in[0], {in[0].numel()}))); };
        } else {
            FAIL() << "unknown op " << op;
        }
        auto r = gradcheck(f, inputs);
        ASSERT_LT(r.rel_error, 1e-4) << op << " trial " << trial;
    }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient,
                         ::testing::Values("add", "sub", "mul", "div", "scalar", "abs", "square", "sqrt", "exp", "log",
                                           "relu", "sigmoid", "sum_axis", "mean_axis", "mean", "matmul", "softmax",
                                           "permute", "concat_slice", "roll_pad", "reshape"));
