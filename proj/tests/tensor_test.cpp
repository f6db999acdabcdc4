#include <gtest/gtest.h>

#include "iscf/autodiff.hpp"
#include "iscf/errors.hpp"
#include "iscf/gradcheck.hpp"
#include "iscf/ops.hpp"
#include "iscf/rng.hpp"

using namespace iscf;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), CountMismatch);
  EXPECT_THROW(Tensor({0, 3}, std::vector<double>{}), ShapeMismatch);
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(-1), 3);
  EXPECT_EQ(t[4], 5.0);
  EXPECT_THROW(t.dim(2), AxisError);
}

TEST(Tensor, ScalarHasEmptyShape) {
  const Tensor s = Tensor::scalar(2.5);
  EXPECT_TRUE(s.shape().empty());
  EXPECT_EQ(s.item(), 2.5);
  EXPECT_THROW(Tensor::ones({2}).item(), NotScalar);
}

TEST(Tensor, AllocationCounterSeesTensorBuffers) {
  reset_allocation_stats();
  const Tensor t = Tensor::zeros({100, 10});
  const auto stats = allocation_stats();
  EXPECT_GE(stats.largest_bytes, 1000 * sizeof(double));
  EXPECT_GE(stats.allocations, 1u);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor({3}, std::vector<double>{1, -2, 5}));
  const Gradients g = tape.backward(ops::sum(x));
  const Tensor gx = g.of(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(gx[i], 1.0);
}

TEST(Backward, SquareGivesTwoX) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor({4}, std::vector<double>{1, -2, 0.5, 3}));
  const Gradients g = tape.backward(ops::sum(ops::mul(x, x)));
  const Tensor gx = g.of(x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(gx[i], 2.0 * x[i]);
}

TEST(Backward, FanOutAccumulatesBothPaths) {
  Rng rng(3);
  const Tensor x0 = rng.normal_tensor({5});
  auto gradient_of = [&](int which) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = tape.watch(x0);
    const Tensor a = ops::sum(ops::gelu(x));
    const Tensor b = ops::sum(ops::mul(ops::sigmoid(x), x));
    const Tensor loss = which == 0 ? a : which == 1 ? b : ops::add(a, b);
    return tape.backward(loss).of(x);
  };
  const Tensor ga = gradient_of(0), gb = gradient_of(1), gab = gradient_of(2);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(gab[i], ga[i] + gb[i], 1e-15);

  const auto check = grad_check(
      [](const std::vector<Tensor>& in) {
        return ops::add(ops::sum(ops::gelu(in[0])), ops::sum(ops::mul(ops::sigmoid(in[0]), in[0])));
      },
      {x0});
  EXPECT_LT(check.max_rel_error, 1e-6);
}

TEST(Backward, RejectsNonScalarAndDetachedLoss) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::ones({2}));
  EXPECT_THROW(tape.backward(ops::scale(x, 2.0)), NotScalar);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), DetachedFromTape);
  Tape other;
  EXPECT_THROW(other.backward(ops::sum(x)), DetachedFromTape);
}

TEST(Backward, UntrackedWhenNoTapeIsActive) {
  const Tensor y = ops::sum(Tensor::ones({3}));
  EXPECT_FALSE(y.tracked());
  EXPECT_THROW(track(y), DetachedFromTape);
}

TEST(Backward, UnreachedParameterGetsZeroGradientOfItsShape) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::ones({2, 2}));
  const Tensor unused = tape.watch(Tensor::ones({3}));
  const Gradients g = tape.backward(ops::sum(x));
  EXPECT_FALSE(g.has(unused));
  EXPECT_EQ(g.of(unused).shape(), Shape({3}));
}

TEST(GradCheck, SumIsExactUpToRounding) {
  Rng rng(1);
  const auto r = grad_check([](const std::vector<Tensor>& in) { return ops::sum(in[0]); },
                            {rng.normal_tensor({3, 4})});
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.probes, 12u);
}

TEST(GradCheck, DetectsCorruptedBackwardRule) {
  Rng rng(2);
  const Tensor x = rng.normal_tensor({6});
  auto f = [](const std::vector<Tensor>& in) { return ops::sum(ops::gelu(in[0])); };
  Tape::set_corrupted_op("gelu");
  const auto bad = grad_check(f, {x});
  Tape::set_corrupted_op("");
  const auto good = grad_check(f, {x});
  EXPECT_GT(bad.max_rel_error, 0.1);
  EXPECT_LT(good.max_rel_error, 1e-6);
}
