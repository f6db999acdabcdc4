#include <gtest/gtest.h>

#include "iscf/errors.hpp"
#include "iscf/gradcheck.hpp"
#include "iscf/ops.hpp"
#include "iscf/params.hpp"
#include "iscf/patch_block.hpp"
#include "iscf/rng.hpp"
#include "test_util.hpp"

using namespace iscf;
using iscf::testing::weighted_sum;

namespace {

// Replaces every parameter under `prefix` with zeros.
ParamStore zeroed(const ParamStore& src, const std::string& prefix) {
  ParamStore out;
  for (const auto& p : src.entries()) {
    const bool hit = p.name.rfind(prefix, 0) == 0;
    out.add(p.name, hit ? Tensor::zeros(p.value.shape()) : p.value, p.trainable);
  }
  return out;
}

// Gradient check of `f` with respect to the input and every parameter.
double check_with_params(const ParamStore& params, const Tensor& x,
                         const std::function<Tensor(const Tensor&, const ParamStore&)>& f) {
  std::vector<Tensor> inputs = {x};
  for (const auto& p : params.entries()) inputs.push_back(p.value);
  const auto r = grad_check(
      [&](const std::vector<Tensor>& in) {
        ParamStore local;
        for (std::size_t i = 0; i < params.size(); ++i) local.add(params.entries()[i].name, in[i + 1]);
        return weighted_sum(f(in[0], local));
      },
      inputs, {.max_coords = 24, .seed = 5});
  return r.max_rel_error;
}

ParamStore randomized(const ParamStore& src, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  ParamStore out;
  for (const auto& p : src.entries()) out.add(p.name, rng.normal_tensor(p.value.shape(), scale));
  return out;
}

}  // namespace

TEST(PatchEmbed, TokenCounts) {
  Rng rng(1);
  ParamStore p;
  add_embed_params(p, "embed", 3, 8, {}, rng);
  EXPECT_EQ(patch_embed(Tensor::zeros({1, 3, 64, 64}), p, "embed").shape(), Shape({1, 256, 8}));
  EXPECT_EQ(patch_embed(Tensor::zeros({1, 3, 224, 224}), p, "embed").shape(), Shape({1, 3136, 8}));
  EXPECT_THROW(patch_embed(Tensor::zeros({1, 3, 48, 64}), p, "embed"), BadInputExtent);
}

TEST(PatchEmbed, ZeroImageZeroBiasGivesZeroTokensBeforeNorm) {
  Rng rng(2);
  ParamStore p;
  EmbedConfig cfg;
  cfg.normalize = false;
  add_embed_params(p, "embed", 3, 4, cfg, rng);
  const Tensor t = patch_embed(Tensor::zeros({2, 3, 32, 32}), p, "embed", cfg);
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(t[i], 0.0);
}

TEST(PatchEmbed, GradientCheck) {
  Rng rng(3);
  ParamStore p;
  add_embed_params(p, "embed", 3, 4, {}, rng);
  const double err = check_with_params(randomized(p, 4), rng.normal_tensor({1, 3, 32, 32}),
                                       [](const Tensor& x, const ParamStore& ps) {
                                         return patch_embed(x, ps, "embed");
                                       });
  EXPECT_LT(err, 1e-5);
}

TEST(PatchMerge, ShapeArithmetic) {
  Rng rng(5);
  ParamStore p;
  add_merge_params(p, "m", 32, rng);
  const Tensor y = patch_merge(rng.normal_tensor({1, 56 * 56, 32}), {56, 56}, p, "m");
  EXPECT_EQ(y.shape(), Shape({1, 28 * 28, 64}));
  EXPECT_THROW(patch_merge(Tensor::ones({1, 15, 32}), {3, 5}, p, "m"), OddGrid);
  EXPECT_THROW(patch_merge(Tensor::ones({1, 15, 32}), {4, 4}, p, "m"), ShapeMismatch);
}

TEST(PatchMerge, RasterOrderOfNeighbourhood) {
  // 2x2 grid with distinct token values: tl=1, tr=2, bl=3, br=4 (c=1).
  const Tensor x({1, 4, 1}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(merge_gather(x, {2, 2}).to_vector(), (std::vector<double>{1, 2, 3, 4}));
  // 2x4 grid: the left block is tokens (0,0),(0,1),(1,0),(1,1) = 0,1,4,5.
  std::vector<double> v(8);
  for (int i = 0; i < 8; ++i) v[i] = i;
  EXPECT_EQ(merge_gather(Tensor({1, 8, 1}, v), {2, 4}).to_vector(),
            (std::vector<double>{0, 1, 4, 5, 2, 3, 6, 7}));
}

TEST(PatchMerge, ConstantFieldRepeatsToken) {
  const Tensor token({1, 1, 3}, std::vector<double>{0.5, -1, 2});
  const Tensor x = ops::concat({token, token, token, token}, 1);
  const Tensor g = merge_gather(x, {2, 2});
  ASSERT_EQ(g.shape(), Shape({1, 1, 12}));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(g[r * 3 + c], token[c]);
}

TEST(PatchMerge, GradientCheck) {
  Rng rng(6);
  ParamStore p;
  add_merge_params(p, "m", 3, rng);
  const double err = check_with_params(randomized(p, 7), rng.normal_tensor({2, 16, 3}),
                                       [](const Tensor& x, const ParamStore& ps) {
                                         return patch_merge(x, {4, 4}, ps, "m");
                                       });
  EXPECT_LT(err, 1e-5);
}

TEST(PatchExpand, ShapeArithmeticAndRoundTrip) {
  Rng rng(8);
  ParamStore p;
  add_expand_params(p, "e", 64, rng);
  add_merge_params(p, "m", 32, rng);
  const Tensor x = rng.normal_tensor({1, 28 * 28, 64});
  const Tensor up = patch_expand(x, {28, 28}, p, "e");
  EXPECT_EQ(up.shape(), Shape({1, 56 * 56, 32}));
  EXPECT_EQ(patch_merge(up, {56, 56}, p, "m").shape(), x.shape());
  EXPECT_THROW(patch_expand(Tensor::ones({1, 4, 3}), {2, 2}, p, "e"), OddChannels);
}

TEST(PatchExpand, ScatterInvertsGather) {
  Rng rng(9);
  const Tensor x = rng.normal_tensor({2, 6 * 4, 5});
  EXPECT_TRUE(bitwise_equal(expand_scatter(merge_gather(x, {6, 4}), {3, 2}, 2), x));
}

TEST(PatchExpand, GradientCheck) {
  Rng rng(10);
  ParamStore p;
  add_expand_params(p, "e", 4, rng);
  const double err = check_with_params(randomized(p, 11), rng.normal_tensor({1, 6, 4}),
                                       [](const Tensor& x, const ParamStore& ps) {
                                         return patch_expand(x, {2, 3}, ps, "e");
                                       });
  EXPECT_LT(err, 1e-5);
}

TEST(FinalExpand4, ShapeAndZeroWeights) {
  Rng rng(12);
  ParamStore p;
  add_final_expand_params(p, "f", 32, rng);
  EXPECT_EQ(final_expand4(rng.normal_tensor({1, 56 * 56, 32}), {56, 56}, p, "f").shape(),
            Shape({1, 224 * 224, 32}));
  const Tensor z = final_expand4(rng.normal_tensor({1, 4, 32}), {2, 2}, zeroed(p, "f"), "f");
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(z[i], 0.0);
}

TEST(FinalExpand4, GradientCheck) {
  Rng rng(13);
  ParamStore p;
  add_final_expand_params(p, "f", 2, rng);
  const double err = check_with_params(randomized(p, 14), rng.normal_tensor({1, 4, 2}),
                                       [](const Tensor& x, const ParamStore& ps) {
                                         return final_expand4(x, {2, 2}, ps, "f");
                                       });
  EXPECT_LT(err, 1e-5);
}

TEST(MixFfn, ZeroWeightsGiveZero) {
  Rng rng(15);
  ParamStore p;
  add_mix_ffn_params(p, "ffn", 4, 4, rng);
  const Tensor y = mix_ffn(rng.normal_tensor({2, 9, 4}), {3, 3}, zeroed(p, "ffn"), "ffn");
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(MixFfn, NotTokenPermutationInvariant) {
  Rng rng(16);
  ParamStore p;
  add_mix_ffn_params(p, "ffn", 4, 2, rng);
  p = randomized(p, 17);
  const Tensor x = rng.normal_tensor({1, 16, 4});
  // shift the 4x4 grid one column (cyclic) and shift back after the FFN
  auto roll = [](const Tensor& t, int dir) {
    Buffer b(t.numel());
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx)
        for (int c = 0; c < 4; ++c) b[(y * 4 + (xx + dir + 4) % 4) * 4 + c] = t[(y * 4 + xx) * 4 + c];
    return Tensor(t.shape(), std::move(b));
  };
  const Tensor direct = mix_ffn(x, {4, 4}, p, "ffn");
  const Tensor via_shift = roll(mix_ffn(roll(x, 1), {4, 4}, p, "ffn"), -1);
  EXPECT_GT(iscf::testing::max_abs_diff(direct, via_shift), 1e-6);
}

TEST(MixFfn, GradientCheck) {
  Rng rng(18);
  ParamStore p;
  add_mix_ffn_params(p, "ffn", 4, 2, rng);
  const double err = check_with_params(randomized(p, 19), rng.normal_tensor({2, 12, 4}),
                                       [](const Tensor& x, const ParamStore& ps) {
                                         return mix_ffn(x, {3, 4}, ps, "ffn");
                                       });
  EXPECT_LT(err, 1e-4);
}

TEST(TransformerBlock, ZeroBranchesAreExactIdentity) {
  Rng rng(20);
  StageConfig cfg{.d_model = 8, .grid = {4, 4}};
  ParamStore p;
  add_block_params(p, "blk", cfg, rng);
  ParamStore z = zeroed(zeroed(p, "blk.attn"), "blk.ffn");
  const Tensor x = rng.normal_tensor({2, 16, 8});
  const auto out = transformer_block(x, cfg, z, "blk");
  EXPECT_TRUE(bitwise_equal(out.y, x));
}

TEST(TransformerBlock, ShapePreservedAndTapExported) {
  Rng rng(21);
  for (const auto& [width, grid] : std::vector<std::pair<std::int64_t, Grid>>{
           {8, {4, 4}}, {16, {2, 4}}, {32, {2, 2}}, {64, {1, 1}}}) {
    StageConfig cfg{.d_model = width, .grid = grid};
    ParamStore p;
    add_block_params(p, "blk", cfg, rng);
    const Tensor x = rng.normal_tensor({2, grid.tokens(), width});
    const auto out = transformer_block(x, cfg, p, "blk");
    EXPECT_EQ(out.y.shape(), x.shape());
    EXPECT_EQ(out.tap.key_map.shape(), Shape({2, grid.tokens(), width / 2}));
  }
}

TEST(TransformerBlock, PrenormVariantAddsNormParams) {
  Rng rng(22);
  StageConfig cfg{.d_model = 8, .grid = {2, 2}, .attn_prenorm = true};
  ParamStore p;
  add_block_params(p, "blk", cfg, rng);
  EXPECT_TRUE(p.contains("blk.norm0.weight"));
  EXPECT_EQ(transformer_block(rng.normal_tensor({1, 4, 8}), cfg, p, "blk").y.shape(), Shape({1, 4, 8}));
}

TEST(TransformerBlock, EndToEndGradientCheck) {
  for (int seed = 0; seed < 3; ++seed) {
    Rng rng(23 + seed);
    StageConfig cfg{.d_model = 4, .grid = {2, 3}, .ffn_expansion = 2};
    ParamStore p;
    add_block_params(p, "blk", cfg, rng);
    const double err = check_with_params(randomized(p, 30 + seed), rng.normal_tensor({2, 6, 4}),
                                         [&](const Tensor& x, const ParamStore& ps) {
                                           const auto out = transformer_block(x, cfg, ps, "blk");
                                           return ops::add(weighted_sum(out.y), weighted_sum(out.tap.key_map, 3));
                                         });
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}
