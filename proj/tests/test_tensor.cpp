// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "moemoe/optim.hpp"
#include "moemoe/tensor.hpp"
#include "test_util.hpp"

namespace moemoe {
namespace {

using testing::max_fd_error;
using testing::random_tensor;
using testing::weighted_sum;

TEST(Matmul, OneByOne) {
  Tensor a = Tensor::from({1, 1}, {2});
  Tensor b = Tensor::from({1, 1}, {3});
  EXPECT_EQ(matmul(a, b).item(), 6.0);
}

TEST(Matmul, IdentityIsNeutral) {
  Rng rng(1);
  Tensor a = random_tensor({4, 4}, rng);
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.mutable_data()[i * 4 + i] = 1.0;
  const Tensor out = matmul(a, eye);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(out.data()[i], a.data()[i]);
}

TEST(Matmul, HandComputed) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(matmul(a, b).to_vector(), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(shape_str({2, 3})), std::string::npos) << msg;
    EXPECT_NE(msg.find(shape_str({4, 5})), std::string::npos) << msg;
  }
}

TEST(Softmax, Uniform) {
  const Tensor s = softmax(Tensor::from({3}, {1, 1, 1}), 0);
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, AnalyticExponentials) {
  const Tensor s = softmax(Tensor::from({2}, {0, std::log(2.0)}), 0);
  EXPECT_NEAR(s.at(0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.at(1), 2.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Tensor s = softmax(Tensor::from({2}, {1000, 0}), 0);
  EXPECT_NEAR(s.at(0), 1.0, 1e-12);
  EXPECT_NEAR(s.at(1), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(s.at(0)) && std::isfinite(s.at(1)));
}

TEST(Softmax, RowsAreSimplexPointsAlongEitherAxis) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({5, 6}, rng, -30.0, 30.0, false);
    for (std::size_t axis : {0u, 1u}) {
      const Tensor s = softmax(x, axis);
      const std::size_t outer = axis == 1 ? 5 : 6, inner = axis == 1 ? 6 : 5;
      for (std::size_t o = 0; o < outer; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
          const double v = axis == 1 ? s.at(o, i) : s.at(i, o);
          EXPECT_GE(v, 0.0);
          acc += v;
        }
        EXPECT_LT(std::fabs(1.0 - acc), 1e-12);
      }
    }
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor y = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), Tensor::full({3}, 1.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowIsFixed) {
  const Tensor y = layer_norm(Tensor::from({1, 2}, {1, -1}), Tensor::full({2}, 1.0));
  EXPECT_NEAR(y.at(0), 1.0, 1e-6);
  EXPECT_NEAR(y.at(1), -1.0, 1e-6);
}

TEST(LayerNorm, RandomRowStatistics) {
  Rng rng(3);
  const Tensor y = layer_norm(random_tensor({1, 16}, rng, -5.0, 5.0, false), Tensor::full({16}, 1.0));
  double mean = 0.0, var = 0.0;
  for (double v : y.data()) mean += v;
  mean /= 16.0;
  for (double v : y.data()) var += (v - mean) * (v - mean);
  var /= 16.0;
  EXPECT_LT(std::fabs(mean), 1e-9);
  EXPECT_LT(std::fabs(var - 1.0), 1e-6);
}

TEST(CrossEntropy, UniformLogits) {
  const Tensor loss = cross_entropy(Tensor::zeros({3, 8}), {1, 4, 7}, -1);
  EXPECT_NEAR(loss.item(), std::log(8.0), 1e-12);
}

TEST(CrossEntropy, PadPositionsContributeNothing) {
  Tensor logits = Tensor::from({3, 3}, {10, 0, 0, 3, 1, 4, 0, 9, 2});
  const Tensor loss = cross_entropy(logits, {0, -1, -1}, -1);
  const double expected = std::log(1.0 + 2.0 * std::exp(-10.0));
  EXPECT_NEAR(loss.item(), expected, 1e-15);
  EXPECT_NEAR(loss.item(), 9.08e-5, 1e-7);
}

TEST(CrossEntropy, NonNegativeAndAllPadThrows) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    EXPECT_GE(cross_entropy(random_tensor({4, 5}, rng, -10, 10, false), {0, 1, 2, 3}, -1).item(), 0.0);
  }
  EXPECT_THROW(cross_entropy(Tensor::zeros({2, 3}), {0, 0}, 0), std::invalid_argument);
}

TEST(Backward, Square) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(square(x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, DetachedConstantGivesZeroGrad) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  backward(sum(square(x)).detach());
  if (x.has_grad()) {
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
  }
}

TEST(Backward, NonScalarThrows) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(square(x)), DimensionError);
}

TEST(Backward, RepeatedCallsAccumulateOnLeaves) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(square(x));
  backward(square(x));
  EXPECT_EQ(x.grad()[0], 12.0);
}

TEST(Backward, ThreeLayerChainMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w1 = random_tensor({4, 5}, rng);
  Tensor w2 = random_tensor({5, 6}, rng);
  Tensor w3 = random_tensor({6, 2}, rng);
  auto f = [&] { return weighted_sum(matmul(relu(matmul(relu(matmul(x, w1)), w2)), w3)); };
  EXPECT_LT(max_fd_error({x, w1, w2, w3}, f), 1e-4);
}

// Every differentiable op against central differences on small random tensors.
class OpGradient : public ::testing::Test {
 protected:
  Rng rng{6};
  static constexpr double kTol = 1e-4;
};

TEST_F(OpGradient, ElementwiseBinary) {
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng, 0.5, 2.0);
  EXPECT_LT(max_fd_error({a, b}, [&] { return weighted_sum(add(a, b)); }), kTol);
  EXPECT_LT(max_fd_error({a, b}, [&] { return weighted_sum(sub(a, b)); }), kTol);
  EXPECT_LT(max_fd_error({a, b}, [&] { return weighted_sum(mul(a, b)); }), kTol);
  EXPECT_LT(max_fd_error({a, b}, [&] { return weighted_sum(div(a, b)); }), kTol);
}

TEST_F(OpGradient, ElementwiseUnary) {
  Tensor a = random_tensor({2, 5}, rng);
  Tensor p = random_tensor({2, 5}, rng, 0.3, 3.0);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(scale(a, -2.5)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(add_scalar(a, 0.7)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(relu(a)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(abs(a)); }), kTol);
  EXPECT_LT(max_fd_error({p}, [&] { return weighted_sum(sqrt(p)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(square(a)); }), kTol);
}

TEST_F(OpGradient, Broadcasts) {
  Tensor x = random_tensor({4, 3}, rng);
  Tensor bias = random_tensor({3}, rng);
  Tensor w = random_tensor({4}, rng);
  EXPECT_LT(max_fd_error({x, bias}, [&] { return weighted_sum(add_bias(x, bias)); }), kTol);
  EXPECT_LT(max_fd_error({x, w}, [&] { return weighted_sum(mul_rows(x, w)); }), kTol);
}

TEST_F(OpGradient, Reductions) {
  Tensor a = random_tensor({3, 3}, rng);
  Tensor u = random_tensor({6}, rng);
  Tensor v = random_tensor({6}, rng);
  EXPECT_LT(max_fd_error({a}, [&] { return square(sum(a)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return square(mean(a)); }), kTol);
  EXPECT_LT(max_fd_error({u, v}, [&] { return dot(u, v); }), kTol);
}

TEST_F(OpGradient, MatmulTransposeReshape) {
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  EXPECT_LT(max_fd_error({a, b}, [&] { return weighted_sum(matmul(a, b)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(transpose(a)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(reshape(a, {2, 6})); }), kTol);
}

TEST_F(OpGradient, SlicesAndConcats) {
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor c = random_tensor({3, 5}, rng);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(slice_cols(a, 1, 3)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(slice_rows(a, 1, 2)); }), kTol);
  EXPECT_LT(max_fd_error({a, b}, [&] { return weighted_sum(concat_cols({a, b})); }), kTol);
  EXPECT_LT(max_fd_error({a, c}, [&] { return weighted_sum(concat_rows({a, c})); }), kTol);
}

TEST_F(OpGradient, GatherScatterColumn) {
  Tensor a = random_tensor({4, 3}, rng);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(gather_rows(a, {3, 0, 3, 1, 2, 0})); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(scatter_rows(a, {5, 0, 2, 4}, 6)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(gather(a, {0, 11, 5, 5, 7})); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(column(a, 2)); }), kTol);
}

TEST_F(OpGradient, SoftmaxFamily) {
  Tensor a = random_tensor({3, 5}, rng, -3, 3);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(softmax(a, 0)); }), kTol);
  EXPECT_LT(max_fd_error({a}, [&] { return weighted_sum(softmax(a, 1)); }), kTol);
  Mask m = Mask::causal(3);
  Tensor sq = random_tensor({3, 3}, rng, -3, 3);
  EXPECT_LT(max_fd_error({sq}, [&] { return weighted_sum(masked_softmax(sq, m)); }), kTol);
}

TEST_F(OpGradient, LayerNormAndCrossEntropy) {
  Tensor x = random_tensor({3, 6}, rng, -2, 2);
  Tensor g = random_tensor({6}, rng, 0.5, 1.5);
  EXPECT_LT(max_fd_error({x, g}, [&] { return weighted_sum(layer_norm(x, g)); }), kTol);
  Tensor logits = random_tensor({4, 5}, rng, -3, 3);
  EXPECT_LT(max_fd_error({logits}, [&] { return cross_entropy(logits, {1, 0, 9, 4}, 9); }), kTol);
}

TEST(MaskedSoftmax, FullyMaskedRowThrows) {
  Mask m = Mask::all(2, 2);
  m.allowed[2] = m.allowed[3] = 0;
  EXPECT_THROW(masked_softmax(Tensor::zeros({2, 2}), m), std::invalid_argument);
}

TEST(Determinism, ForwardAndBackwardRepeat) {
  auto run = [] {
    Rng rng(8);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor loss = weighted_sum(softmax(matmul(a, b), 1));
    backward(loss);
    std::vector<double> out = a.grad().empty() ? std::vector<double>{} : std::vector<double>(a.grad().begin(), a.grad().end());
    out.push_back(loss.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Schedule, StepDecay) {
  StepSchedule s;
  EXPECT_DOUBLE_EQ(s.lr_at(1), 1e-3);
  EXPECT_DOUBLE_EQ(s.lr_at(5), 1e-3);
  EXPECT_NEAR(s.lr_at(6), 2e-4, 1e-18);
  EXPECT_NEAR(s.lr_at(8), 2e-4, 1e-18);
  EXPECT_NEAR(s.lr_at(9), 4e-5, 1e-18);
  EXPECT_NEAR(s.lr_at(10), 4e-5, 1e-18);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterStore store;
  Rng rng(9);
  Tensor w = store.create("w", {3}, 1.0, rng);
  const auto before = w.to_vector();
  w.zero_grad();
  Adam opt;
  opt.step(store, 1);
  EXPECT_EQ(w.to_vector(), before);
}

TEST(Adam, SingleStepMatchesHandRecurrence) {
  ParameterStore store;
  Tensor w = store.create_constant("w", {1}, 0.5);
  w.mutable_grad();
  w.zero_grad();
  w.mutable_grad()[0] = 1.0;
  Adam opt;
  opt.step(store, 1);
  const double m = 0.1 * 1.0, v = 0.001 * 1.0;
  const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
  EXPECT_DOUBLE_EQ(w.item(), 0.5 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8));
  EXPECT_FALSE(w.has_grad() && w.grad()[0] != 0.0) << "grads are cleared after the step";
}

TEST(Adam, MissingGradientOnTrainableThrows) {
  ParameterStore store;
  store.create_constant("w", {2}, 0.0);
  Adam opt;
  EXPECT_THROW(opt.step(store, 1), std::logic_error);
}

TEST(Adam, FrozenParameterIsBitIdentical) {
  ParameterStore store;
  Rng rng(10);
  Tensor a = store.create("a", {4}, 1.0, rng);
  Tensor b = store.create("b", {4}, 1.0, rng);
  store.get("b").trainable = false;
  const auto before = b.to_vector();
  Adam opt;
  for (int step = 0; step < 30; ++step) {
    backward(add(sum(square(a)), sum(mul(b, b))));
    opt.step(store, 1 + step / 10);
  }
  EXPECT_EQ(b.to_vector(), before);
  EXPECT_NE(a.to_vector(), before);
}

}  // namespace
}  // namespace moemoe
