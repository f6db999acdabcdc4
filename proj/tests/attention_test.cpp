#include <gtest/gtest.h>

#include <cmath>

#include "iscf/attention.hpp"
#include "iscf/errors.hpp"
#include "iscf/gradcheck.hpp"
#include "iscf/ops.hpp"
#include "iscf/params.hpp"
#include "iscf/rng.hpp"
#include "test_util.hpp"

using namespace iscf;
using iscf::testing::max_rel_diff;
using iscf::testing::weighted_sum;

namespace {

// Plain double-loop evaluation of softmax(q·kᵀ·scale)·v for [n,d] inputs.
std::vector<double> loop_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  const auto n = q.dim(0), dk = q.dim(1), dv = v.dim(1);
  std::vector<double> out(n * dv, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double mx = -1e300;
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::int64_t p = 0; p < dk; ++p) acc += q[i * dk + p] * k[j * dk + p];
      s[j] = acc * scale;
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t c = 0; c < dv; ++c) out[i * dv + c] += s[j] / z * v[j * dv + c];
  }
  return out;
}

Tensor permute_tokens(const Tensor& x, const std::vector<std::int64_t>& perm) {
  const auto n = x.dim(-2), d = x.dim(-1);
  Buffer b(x.numel());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < d; ++c) b[i * d + c] = x[perm[i] * d + c];
  return Tensor(x.shape(), std::move(b));
}

}  // namespace

TEST(AttentionConfig, DefaultsAndValidation) {
  const auto cfg = AttentionConfig::for_width(32);
  EXPECT_EQ(cfg.d_k, 16);
  EXPECT_EQ(cfg.d_v, 32);
  EXPECT_THROW(AttentionConfig::for_width(12, 5), InvalidConfig);
}

TEST(StandardAttention, SingleTokenReturnsValue) {
  Rng rng(1);
  const Tensor v = rng.normal_tensor({1, 5});
  const Tensor out = standard_attention(rng.normal_tensor({1, 3}), rng.normal_tensor({1, 3}), v, 0.5);
  EXPECT_LT(iscf::testing::max_abs_diff(out, v), 1e-15);
}

TEST(StandardAttention, EqualLogitsAverageValues) {
  Rng rng(2);
  const Tensor v = rng.normal_tensor({4, 3});
  // q orthogonal to every key row → all logits zero
  const Tensor q = Tensor({4, 2}, std::vector<double>{0, 1, 0, 2, 0, -1, 0, 3});
  const Tensor k = Tensor({4, 2}, std::vector<double>{1, 0, -2, 0, 0.5, 0, 3, 0});
  const Tensor out = standard_attention(q, k, v, 1.0);
  for (int c = 0; c < 3; ++c) {
    const double m = (v[c] + v[3 + c] + v[6 + c] + v[9 + c]) / 4.0;
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(out[i * 3 + c], m, 1e-15);
  }
}

TEST(StandardAttention, MatchesLoopOracle) {
  Rng rng(3);
  const Tensor q = rng.normal_tensor({4, 6}), k = rng.normal_tensor({4, 6}), v = rng.normal_tensor({4, 5});
  const double scale = 1.0 / std::sqrt(6.0);
  const Tensor out = standard_attention(q, k, v, scale);
  EXPECT_LT(max_rel_diff(out, Tensor({4, 5}, loop_attention(q, k, v, scale))), 1e-12);
}

TEST(StandardAttention, ShapeErrors) {
  EXPECT_THROW(standard_attention(Tensor::ones({3, 4}), Tensor::ones({3, 5}), Tensor::ones({3, 2}), 1),
               ShapeMismatch);
  EXPECT_THROW(standard_attention(Tensor::ones({3, 4}), Tensor::ones({3, 4}), Tensor::ones({2, 2}), 1),
               ShapeMismatch);
}

TEST(EfficientAttention, AssociativityMatchesExplicitContext) {
  Rng rng(4);
  const Tensor q = rng.normal_tensor({16, 8}), k = rng.normal_tensor({16, 8}), v = rng.normal_tensor({16, 8});
  const auto eff = efficient_attention(q, k, v);
  EXPECT_LT(max_rel_diff(eff.out, explicit_context_attention(q, k, v)), 1e-9);
}

TEST(EfficientAttention, SingleTokenDegeneracy) {
  Rng rng(5);
  const Tensor v = rng.normal_tensor({1, 4});
  const auto r = efficient_attention(rng.normal_tensor({1, 3}), rng.normal_tensor({1, 3}), v);
  for (std::size_t i = 0; i < r.tap.key_map.numel(); ++i) EXPECT_EQ(r.tap.key_map[i], 1.0);
  EXPECT_LT(iscf::testing::max_abs_diff(r.out, v), 1e-15);
}

TEST(EfficientAttention, NormalizersSumToOne) {
  Rng rng(6);
  const Tensor q = rng.normal_tensor({2, 10, 4}, 3.0), k = rng.normal_tensor({2, 10, 4}, 3.0);
  const auto r = efficient_attention(q, k, rng.normal_tensor({2, 10, 6}));
  EXPECT_EQ(r.tap.token_count, 10);
  const Tensor cols = ops::sum(r.tap.key_map, {1});
  for (std::size_t i = 0; i < cols.numel(); ++i) EXPECT_NEAR(cols[i], 1.0, 1e-9);
  const Tensor rows = ops::sum(ops::softmax(q, -1), {2});
  for (std::size_t i = 0; i < rows.numel(); ++i) EXPECT_NEAR(rows[i], 1.0, 1e-9);
}

TEST(EfficientAttention, ColumnShiftLeavesKeyMapUnchanged) {
  Rng rng(7);
  const Tensor k = rng.normal_tensor({6, 3});
  const Tensor shifted = ops::add(k, Tensor({3}, std::vector<double>{5.0, -2.0, 100.0}));
  const Tensor q = rng.normal_tensor({6, 3}), v = rng.normal_tensor({6, 2});
  const auto a = efficient_attention(q, k, v), b = efficient_attention(q, shifted, v);
  EXPECT_LT(iscf::testing::max_abs_diff(a.tap.key_map, b.tap.key_map), 1e-12);
}

TEST(EfficientAttention, TokenPermutationEquivariance) {
  Rng rng(8);
  const Tensor q = rng.normal_tensor({7, 4}), k = rng.normal_tensor({7, 4}), v = rng.normal_tensor({7, 5});
  std::vector<std::int64_t> perm = {3, 0, 6, 1, 5, 2, 4};
  const auto plain = efficient_attention(q, k, v);
  const auto permuted = efficient_attention(permute_tokens(q, perm), permute_tokens(k, perm), permute_tokens(v, perm));
  EXPECT_LT(iscf::testing::max_abs_diff(permuted.out, permute_tokens(plain.out, perm)), 1e-12);
}

TEST(EfficientAttention, NoQuadraticBuffer) {
  Rng rng(9);
  const std::int64_t n = 1024, d = 16;
  const Tensor q = rng.normal_tensor({n, d}), k = rng.normal_tensor({n, d}), v = rng.normal_tensor({n, d});
  reset_allocation_stats();
  const auto before = allocation_stats();
  const auto r = efficient_attention(q, k, v);
  const auto stats = allocation_stats();
  EXPECT_LE(stats.largest_bytes, static_cast<std::size_t>(n * d) * sizeof(double));
  EXPECT_LE(stats.peak_live_bytes - before.live_bytes,
            static_cast<std::size_t>(6 * (n * d + d * d)) * sizeof(double));

  reset_allocation_stats();
  const Tensor s = standard_attention(q, k, v, 0.25);
  EXPECT_GE(allocation_stats().largest_bytes, static_cast<std::size_t>(n * n) * sizeof(double));
}

TEST(EfficientAttention, MultiHeadShapesAndTap) {
  Rng rng(10);
  ParamStore params;
  const auto cfg = AttentionConfig::for_width(8, 2);
  add_attention_params(params, "attn", cfg, rng);
  const Tensor x = rng.normal_tensor({2, 9, 8});
  const Qkv qkv = make_qkv(x, params, "attn");
  const auto r = efficient_attention(qkv.q, qkv.k, qkv.v, cfg, params, "attn");
  EXPECT_EQ(r.out.shape(), Shape({2, 9, 8}));
  EXPECT_EQ(r.tap.key_map.shape(), Shape({2, 9, 4}));
  const Tensor cols = ops::sum(r.tap.key_map, {1});
  for (std::size_t i = 0; i < cols.numel(); ++i) EXPECT_NEAR(cols[i], 1.0, 1e-9);
}

TEST(MakeQkv, IdentityAndZeroProjections) {
  Rng rng(11);
  const Tensor x = rng.normal_tensor({5, 4});
  ParamStore eye;
  Buffer wq(8, 0.0), wv(16, 0.0);
  wq[0] = 1.0;  // (0,0)
  wq[3] = 1.0;  // (1,1)
  for (int i = 0; i < 4; ++i) wv[i * 5] = 1.0;
  eye.add("a.q.weight", Tensor({4, 2}, wq));
  eye.add("a.k.weight", Tensor({4, 2}, wq));
  eye.add("a.v.weight", Tensor({4, 4}, wv));
  const Qkv id = make_qkv(x, eye, "a");
  EXPECT_TRUE(bitwise_equal(id.v, x));
  EXPECT_TRUE(bitwise_equal(id.q, ops::slice(x, 1, 0, 2)));

  ParamStore zero;
  zero.add("a.q.weight", Tensor::zeros({4, 2}));
  zero.add("a.k.weight", Tensor::zeros({4, 2}));
  zero.add("a.v.weight", Tensor::zeros({4, 4}));
  const Qkv z = make_qkv(x, zero, "a");
  for (const Tensor* t : {&z.q, &z.k, &z.v})
    for (std::size_t i = 0; i < t->numel(); ++i) EXPECT_EQ((*t)[i], 0.0);
}

TEST(EfficientAttention, GradientThroughProjections) {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(50 + seed);
    const auto r = grad_check(
        [](const std::vector<Tensor>& in) {
          ParamStore p;
          p.add("a.q.weight", in[1]);
          p.add("a.k.weight", in[2]);
          p.add("a.v.weight", in[3]);
          const Qkv qkv = make_qkv(in[0], p, "a");
          const auto e = efficient_attention(qkv.q, qkv.k, qkv.v);
          return ops::add(weighted_sum(e.out), weighted_sum(e.tap.key_map, 7));
        },
        {rng.normal_tensor({2, 6, 4}), rng.normal_tensor({4, 2}), rng.normal_tensor({4, 2}),
         rng.normal_tensor({4, 4})});
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(StandardAttention, GradientCheck) {
  Rng rng(12);
  const auto r = grad_check(
      [](const std::vector<Tensor>& in) {
        return weighted_sum(standard_attention(in[0], in[1], in[2], 0.5));
      },
      {rng.normal_tensor({5, 3}), rng.normal_tensor({5, 3}), rng.normal_tensor({5, 4})});
  EXPECT_LT(r.max_rel_error, 1e-5);
}
