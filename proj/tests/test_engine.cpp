#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "cohar/adam.hpp"
#include "cohar/ops.hpp"
#include "cohar/sampling.hpp"

using namespace cohar;

namespace {

Tensor random_tensor(SeededRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Direct transcription of the convolution sum, used as the reference.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2), Cout = w.dim(0), K = w.dim(2);
  const std::size_t To = (T + 2 * pad - K) / stride + 1;
  std::vector<double> y(B * Cout * To);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t o = 0; o < Cout; ++o)
      for (std::size_t t = 0; t < To; ++t) {
        double s = b[o];
        for (std::size_t c = 0; c < Cin; ++c)
          for (std::size_t j = 0; j < K; ++j) {
            const long pos = static_cast<long>(t * stride + j) - static_cast<long>(pad);
            if (pos < 0 || pos >= static_cast<long>(T)) continue;
            s += x[(bi * Cin + c) * T + static_cast<std::size_t>(pos)] * w[(o * Cin + c) * K + j];
          }
        y[(bi * Cout + o) * To + t] = s;
      }
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Tensor, DataLengthMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), DimensionError);
}

TEST(Tensor, CopiesShareStorageClonesDoNot) {
  Tensor a({3}, 1.0);
  Tensor b = a;
  Tensor c = a.clone();
  b[0] = 5.0;
  EXPECT_EQ(a[0], 5.0);
  EXPECT_EQ(c[0], 1.0);
}

TEST(Conv1d, IdentityKernel) {
  Tensor x({1, 1, 3}, {1, 2, 3});
  const Tensor y = ops::conv1d(x, Tensor({1, 1, 1}, {1.0}), Tensor({1}, {0.0}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 2, 3}));
}

TEST(Conv1d, TwoTapSum) {
  Tensor x({1, 1, 4}, {1, 2, 3, 4});
  const Tensor y = ops::conv1d(x, Tensor({1, 1, 2}, {1, 1}), Tensor({1}, {0.0}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{3, 5, 7}));
}

TEST(Conv1d, SamePaddingShape) {
  const Tensor y = ops::conv1d(Tensor({2, 3, 16}), Tensor({8, 3, 3}), Tensor({8}), 1, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 16}));
}

TEST(Conv1d, Errors) {
  EXPECT_THROW(ops::conv1d(Tensor({1, 2, 8}), Tensor({4, 3, 3}), Tensor({4})), DimensionError);
  EXPECT_THROW(ops::conv1d(Tensor({1, 1, 2}), Tensor({1, 1, 5}), Tensor({1})), GeometryError);
}

TEST(Conv1d, MatchesNestedLoopOracle) {
  SeededRng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + rng.below(3), Cin = 1 + rng.below(5), Cout = 1 + rng.below(5);
    const std::size_t K = 1 + rng.below(4), stride = 1 + rng.below(3), pad = rng.below(3);
    const std::size_t T = K + rng.below(12);
    const Tensor x = random_tensor(rng, {B, Cin, T}), w = random_tensor(rng, {Cout, Cin, K}), b = random_tensor(rng, {Cout});
    const Tensor y = ops::conv1d(x, w, b, stride, pad);
    const auto ref = naive_conv(x, w, b, stride, pad);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(ConvTranspose1d, RepeatsWithUnitKernel) {
  const double a = 1.5, b = -2.0;
  const Tensor y = ops::conv_transpose1d(Tensor({1, 1, 2}, {a, b}), Tensor({1, 1, 2}, {1, 1}), Tensor({1}, {0.0}), 2);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{a, a, b, b}));
}

TEST(ConvTranspose1d, Shape) {
  const Tensor y = ops::conv_transpose1d(Tensor({4, 32, 8}), Tensor({32, 16, 2}), Tensor({16}), 2);
  EXPECT_EQ(y.shape(), (Shape{4, 16, 16}));
  EXPECT_THROW(ops::conv_transpose1d(Tensor({4, 31, 8}), Tensor({32, 16, 2}), Tensor({16}), 2), DimensionError);
}

TEST(ConvTranspose1d, DotProductAdjointSmall) {
  SeededRng rng(3);
  const Tensor x = random_tensor(rng, {1, 1, 8}), y = random_tensor(rng, {1, 1, 4}), w = random_tensor(rng, {1, 1, 2});
  const Tensor zero({1}, 0.0);
  const double lhs = dot(ops::conv1d(x, w, zero, 2, 0).data(), y.data());
  const double rhs = dot(x.data(), ops::conv_transpose1d(y, w, zero, 2).data());
  EXPECT_LT(std::abs(lhs - rhs), 1e-12);
}

TEST(ConvTranspose1d, AdjointPropertyRandomShapes) {
  SeededRng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng.below(3), Cin = 1 + rng.below(6), Cout = 1 + rng.below(6);
    const std::size_t K = 1 + rng.below(4), stride = 1 + rng.below(3), To = 1 + rng.below(9);
    const std::size_t T = (To - 1) * stride + K;
    const Tensor x = random_tensor(rng, {B, Cin, T}), y = random_tensor(rng, {B, Cout, To});
    const Tensor w = random_tensor(rng, {Cout, Cin, K});
    const double lhs = dot(ops::conv1d(x, w, Tensor({Cout}), stride, 0).data(), y.data());
    const double rhs = dot(x.data(), ops::conv_transpose1d(y, w, Tensor({Cin}), stride).data());
    EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(Maxpool1d, Examples) {
  const Tensor y = ops::maxpool1d(Tensor({1, 1, 4}, {1, 3, 2, 2}), 2);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{3, 2}));
  EXPECT_EQ(ops::maxpool1d(Tensor({2, 4, 16}), 2).shape(), (Shape{2, 4, 8}));
  EXPECT_THROW(ops::maxpool1d(Tensor({1, 1, 5}), 2), GeometryError);
}

TEST(Maxpool1d, TieRoutesGradientToLowestIndex) {
  Tape tape;
  Tensor x = tape.watch(Tensor({1, 1, 2}, {5, 5}));
  const Tensor y = ops::maxpool1d(x, 2);
  EXPECT_EQ(y[0], 5.0);
  tape.backward(ops::sum(y));
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(EmbeddingLookup, RowSelection) {
  Tensor onehot({1, 2, 3});
  for (std::size_t t = 0; t < 3; ++t) onehot[t] = 1.0;  // class 0 everywhere
  const Tensor y = ops::embedding_lookup(Tensor({2, 1}, {0.5, -0.5}), onehot);
  for (double v : y.data()) EXPECT_EQ(v, 0.5);
}

TEST(EmbeddingLookup, MatchesRowGatherOracle) {
  SeededRng rng(9);
  const std::size_t B = 3, C = 7, E = 4, T = 10;
  const Tensor W = random_tensor(rng, {C, E});
  Tensor onehot({B, C, T});
  std::vector<std::size_t> cls(B * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      cls[b * T + t] = rng.below(C);
      onehot[(b * C + cls[b * T + t]) * T + t] = 1.0;
    }
  const Tensor y = ops::embedding_lookup(W, onehot);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t t = 0; t < T; ++t) EXPECT_EQ(y[(b * E + e) * T + t], W[cls[b * T + t] * E + e]);
}

TEST(EmbeddingLookup, ShapeAndErrors) {
  EXPECT_EQ(ops::embedding_lookup(Tensor({9, 4}), Tensor({2, 9, 64})).shape(), (Shape{2, 4, 64}));
  EXPECT_THROW(ops::embedding_lookup(Tensor({9, 4}), Tensor({2, 8, 64})), DimensionError);
}

TEST(CrossEntropy, UniformLogits) {
  const std::vector<int> targets = {0, 3, 1, 2, 2, 1};
  EXPECT_NEAR(ops::cross_entropy_dense(Tensor({2, 4, 3}, 0.7), targets).item(), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, SaturatedTarget) {
  Tensor logits({1, 3, 1});
  logits[1] = 1000.0;
  const std::vector<int> targets = {1};
  EXPECT_LT(ops::cross_entropy_dense(logits, targets).item(), 1e-9);
}

TEST(CrossEntropy, HandEvaluatedTwoClass) {
  const std::vector<int> targets = {1};
  // -log(e^2 / (e^1 + e^2)) = log(1 + e^-1)
  const double expected = std::log1p(std::exp(-1.0));
  const double loss = ops::cross_entropy_dense(Tensor({1, 2, 1}, {1.0, 2.0}), targets).item();
  EXPECT_NEAR(loss, expected, 1e-12);
  EXPECT_NEAR(loss, 0.313262, 1e-6);
}

TEST(CrossEntropy, TargetOutOfRange) {
  const std::vector<int> targets = {2};
  EXPECT_THROW(ops::cross_entropy_dense(Tensor({1, 2, 1}), targets), LabelError);
  const std::vector<int> negative = {-1};
  EXPECT_THROW(ops::cross_entropy_dense(Tensor({1, 2, 1}), negative), LabelError);
}

TEST(CrossEntropy, ShiftInvariance) {
  SeededRng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + rng.below(3), C = 2 + rng.below(8), T = 1 + rng.below(10);
    Tensor logits = random_tensor(rng, {B, C, T}, -5.0, 5.0);
    std::vector<int> targets(B * T);
    for (int& t : targets) t = static_cast<int>(rng.below(C));
    Tensor shifted = logits.clone();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        const double c = rng.uniform(-50.0, 50.0);
        for (std::size_t k = 0; k < C; ++k) shifted[(b * C + k) * T + t] += c;
      }
    EXPECT_NEAR(ops::cross_entropy_dense(logits, targets).item(), ops::cross_entropy_dense(shifted, targets).item(), 1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Tensor x = tape.watch(Tensor({2, 3, 4}, 0.3));
  tape.backward(ops::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ConvCrossEntropyMatchesFiniteDifferences) {
  SeededRng rng(17);
  const Tensor x0 = random_tensor(rng, {2, 3, 8}), w0 = random_tensor(rng, {4, 3, 3}), b0 = random_tensor(rng, {4});
  std::vector<int> targets(16);
  for (int& t : targets) t = static_cast<int>(rng.below(4));
  auto loss_of = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
    return ops::cross_entropy_dense(ops::conv1d(x, w, b, 1, 1), targets);
  };
  Tape tape;
  Tensor x = tape.watch(x0), w = tape.watch(w0), b = tape.watch(b0);
  tape.backward(loss_of(x, w, b));
  const double eps = 1e-5;
  double worst = 0.0;
  for (Tensor* p : {&x, &w, &b}) {
    Tensor target = p->detached();
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double saved = target[i];
      target[i] = saved + eps;
      const double up = loss_of(x0, w0, b0).item();
      target[i] = saved - eps;
      const double down = loss_of(x0, w0, b0).item();
      target[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = p->grad()[i];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3}));
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Backward, DisconnectedParameterHasZeroGradient) {
  Tape tape;
  Tensor used = tape.watch(Tensor({3}, 1.0));
  Tensor unused = tape.watch(Tensor({3}, 2.0));
  (void)ops::sum(unused);  // recorded, but does not reach the loss
  tape.backward(ops::sum(used));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
  for (double g : used.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, LossMustBeScalar) {
  Tape tape;
  Tensor x = tape.watch(Tensor({1, 1, 2}, 1.0));
  EXPECT_THROW(tape.backward(ops::relu(x)), ContractError);
  EXPECT_THROW(tape.backward(Tensor({1}, 1.0)), ContractError);
}

TEST(Tape, RecordsAreTopological) {
  SeededRng rng(4);
  Tape tape;
  Tensor x = tape.watch(random_tensor(rng, {1, 2, 8}));
  Tensor w = tape.watch(random_tensor(rng, {2, 2, 3}));
  Tensor b = tape.watch(random_tensor(rng, {2}));
  Tensor h = ops::relu(ops::conv1d(x, w, b, 1, 1));
  h = ops::concat_channels({h, x});
  h = ops::maxpool1d(h, 2);
  const Tensor loss = ops::sum(h);
  for (const auto& r : tape.records()) {
    for (auto in : r.inputs) EXPECT_LT(in, r.output);
  }
  EXPECT_EQ(tape.records().back().output, loss.node());
}

TEST(Tape, MixingTapesIsAnError) {
  Tape t1, t2;
  Tensor a = t1.watch(Tensor({2}, 1.0));
  Tensor b = t2.watch(Tensor({2}, 1.0));
  EXPECT_THROW(ops::add(a, b), ContractError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tape tape;
  Tensor p = tape.watch(Tensor({3}, {1.0, -2.0, 3.0}));
  std::vector<Tensor> params{p};
  AdamState state;
  adam_step(params, state);
  EXPECT_EQ(state.t, 1u);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(p[2], 3.0);
}

TEST(Adam, BiasCorrectedFirstStep) {
  Tape tape;
  Tensor p = tape.watch(Tensor({1}, {0.0}));
  p.grad()[0] = 1.0;
  std::vector<Tensor> params{p};
  AdamState state;
  state.options.lr = 0.1;
  adam_step(params, state);
  // m_hat = 1, v_hat = 1 after bias correction
  EXPECT_NEAR(p[0], -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(state.t, 1u);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    SeededRng rng(8);
    Tape tape;
    Tensor p = tape.watch(random_tensor(rng, {5}));
    for (double& g : p.grad()) g = rng.normal();
    std::vector<Tensor> params{p};
    AdamState state;
    for (int i = 0; i < 3; ++i) adam_step(params, state);
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatch) {
  std::vector<Tensor> params{Tensor({3})};
  AdamState state;
  adam_step(params, state);
  std::vector<Tensor> other{Tensor({4})};
  EXPECT_THROW(adam_step(other, state), DimensionError);
  std::vector<Tensor> more{Tensor({3}), Tensor({1})};
  EXPECT_THROW(adam_step(more, state), DimensionError);
}

TEST(Rng, GoldenXoshiroValues) {
  // Independent reference: splitmix64 state fill + xoshiro256** step.
  SeededRng r(42);
  EXPECT_EQ(r.next_u64(), 0x15780b2e0c2ec716ULL);
  EXPECT_EQ(r.next_u64(), 0x6104d9866d113a7eULL);
  EXPECT_EQ(r.next_u64(), 0xae17533239e499a1ULL);
  SeededRng z(0);
  EXPECT_EQ(z.next_u64(), 0x99ec5f36cb75f2b4ULL);
}

TEST(Rng, StreamsDependOnSeedAndNameOnly) {
  SeededRng a(5);
  for (int i = 0; i < 10; ++i) a.next_u64();
  SeededRng s1 = a.stream("init"), s2 = SeededRng(5).stream("init"), s3 = SeededRng(5).stream("gumbel");
  const auto v1 = s1.next_u64();
  EXPECT_EQ(v1, s2.next_u64());
  EXPECT_NE(v1, s3.next_u64());
}

TEST(Rng, UniformOpenAndBelowRanges) {
  SeededRng r(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform_open();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
}

TEST(GumbelSample, Moments) {
  SeededRng rng(2024);
  const Tensor g = gumbel_sample(rng, {1000000});
  double mean = 0.0;
  for (double v : g.data()) mean += v;
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.size() - 1);
  EXPECT_NEAR(mean, std::numbers::egamma, 0.01);
  EXPECT_NEAR(var, std::numbers::pi * std::numbers::pi / 6.0, 0.02);
}

TEST(GumbelSample, SameSeedSameTensor) {
  SeededRng a(77), b(77);
  const Tensor x = gumbel_sample(a, {3, 4, 5}), y = gumbel_sample(b, {3, 4, 5});
  EXPECT_EQ(std::vector<double>(x.data().begin(), x.data().end()), std::vector<double>(y.data().begin(), y.data().end()));
}

TEST(Determinism, OperationSequenceIsBitIdentical) {
  auto run = [] {
    SeededRng rng(13);
    Tape tape;
    Tensor x = tape.watch(random_tensor(rng, {2, 3, 8}));
    Tensor w = tape.watch(random_tensor(rng, {4, 3, 3}));
    Tensor b = tape.watch(random_tensor(rng, {4}));
    Tensor h = ops::maxpool1d(ops::relu(ops::conv1d(x, w, b, 1, 1)), 2);
    Tensor u = tape.watch(random_tensor(rng, {4, 2, 2}));
    Tensor ub = tape.watch(random_tensor(rng, {2}));
    h = ops::conv_transpose1d(h, u, ub, 2);
    tape.backward(ops::sum(h));
    std::vector<double> out(h.data().begin(), h.data().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Values, ForwardOutputsFiniteOnFiniteInputs) {
  SeededRng rng(6);
  const Tensor x = random_tensor(rng, {2, 3, 8}, -100.0, 100.0);
  const Tensor y = ops::conv1d(x, random_tensor(rng, {4, 3, 3}), random_tensor(rng, {4}), 1, 1);
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  const std::vector<int> targets(16, 1);
  EXPECT_TRUE(std::isfinite(ops::cross_entropy_dense(ops::slice_channels(y, 0, 3), targets).item()));
}
