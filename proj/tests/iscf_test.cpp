#include <gtest/gtest.h>

#include "iscf/errors.hpp"
#include "iscf/gradcheck.hpp"
#include "iscf/iscf.hpp"
#include "iscf/ops.hpp"
#include "iscf/params.hpp"
#include "iscf/rng.hpp"
#include "test_util.hpp"

using namespace iscf;
using iscf::testing::weighted_sum;

namespace {

const IscfGeometry kGeo{{16, 4, 4}, {2, 4, 8}, {4, 8, 16}};

IscfGeometry small_geometry() { return IscfGeometry{{16, 8, 4}, {2, 4, 8}, {4, 8, 16}}; }

ScaleMapSet random_taps(const IscfGeometry& geo, std::int64_t batch, Rng& rng) {
  ScaleMapSet set;
  for (int s = 0; s < 3; ++s) {
    const Tensor logits = rng.normal_tensor({batch, geo.tokens[s], geo.key_dims[s]});
    set.maps[s] = {s + 1, ops::softmax(logits, 1), geo.tokens[s]};
  }
  return set;
}

std::array<Tensor, 3> random_skips(const IscfGeometry& geo, std::int64_t batch, Rng& rng) {
  return {rng.normal_tensor({batch, geo.tokens[0], geo.widths[0]}),
          rng.normal_tensor({batch, geo.tokens[1], geo.widths[1]}),
          rng.normal_tensor({batch, geo.tokens[2], geo.widths[2]})};
}

ParamStore with_nonzero(const ParamStore& src, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore out;
  for (const auto& p : src.entries()) out.add(p.name, rng.normal_tensor(p.value.shape(), 0.3));
  return out;
}

ParamStore rebuild(const ParamStore& like, const std::vector<Tensor>& values, std::size_t offset) {
  ParamStore out;
  for (std::size_t i = 0; i < like.size(); ++i) out.add(like.entries()[i].name, values[offset + i]);
  return out;
}

std::vector<Tensor> values_of(const ParamStore& p) {
  std::vector<Tensor> v;
  for (const auto& e : p.entries()) v.push_back(e.value);
  return v;
}

}  // namespace

TEST(IscfStages, Normalization) {
  EXPECT_EQ(normalize_stages({3, 1}), (StageSet{1, 3}));
  EXPECT_THROW(normalize_stages({1, 1}), InvalidConfig);
  EXPECT_THROW(normalize_stages({4}), InvalidConfig);
}

TEST(Remap, StageThreePassesThrough) {
  const auto geo = small_geometry();
  Rng rng(1);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1, 2, 3}, rng);
  const auto taps = random_taps(geo, 2, rng);
  EXPECT_TRUE(bitwise_equal(remap_to_reference(taps.maps[2], geo, p, "iscf"), taps.maps[2].key_map));
}

TEST(Remap, ZeroTapGivesZeroAndReferenceShape) {
  const auto geo = small_geometry();
  Rng rng(2);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1, 2, 3}, rng);
  for (int s : {1, 2}) {
    const AttentionTap tap{s, Tensor::zeros({3, geo.tokens[s - 1], geo.key_dims[s - 1]}), geo.tokens[s - 1]};
    const Tensor out = remap_to_reference(tap, geo, p, "iscf");
    EXPECT_EQ(out.shape(), Shape({3, geo.n_ref(), geo.d_ref()}));
    for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out[i], 0.0);
  }
  const AttentionTap wrong{1, Tensor::zeros({1, 5, 2}), 5};
  EXPECT_THROW(remap_to_reference(wrong, geo, p, "iscf"), ShapeMismatch);
}

TEST(Remap, GradientCheck) {
  const auto geo = small_geometry();
  Rng rng(3);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1}, rng);
  ParamStore remap;
  for (const auto& e : p.entries())
    if (e.name.rfind("iscf.remap1", 0) == 0) remap.add(e.name, e.value);
  remap = with_nonzero(remap, 4);
  std::vector<Tensor> in = {rng.normal_tensor({2, geo.tokens[0], geo.key_dims[0]})};
  for (const auto& v : values_of(remap)) in.push_back(v);
  const auto r = grad_check(
      [&](const std::vector<Tensor>& x) {
        return weighted_sum(remap_to_reference({1, x[0], geo.tokens[0]}, geo, rebuild(remap, x, 1), "iscf"));
      },
      in);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(GlobalDescriptor, ConstantZeroAndLoopOracle) {
  const Tensor c = global_descriptor({Tensor::full({1, 4, 3}, 0.7), Tensor::zeros({1, 4, 3})});
  EXPECT_EQ(c.shape(), Shape({1, 2}));
  EXPECT_NEAR(c[0], 0.7, 1e-15);
  EXPECT_EQ(c[1], 0.0);

  const Tensor z = global_descriptor({Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 2})});
  EXPECT_EQ(z.to_vector(), (std::vector<double>{0, 0, 0}));

  Rng rng(5);
  const Tensor m = rng.normal_tensor({2, 5, 3});
  const Tensor d = global_descriptor({m});
  for (int b = 0; b < 2; ++b) {
    double acc = 0;
    for (int i = 0; i < 15; ++i) acc += m[b * 15 + i];
    EXPECT_NEAR(d[b], acc / 15.0, 1e-15);
  }
}

TEST(FusionWeights, ZeroInputZeroFfnGivesHalf) {
  ParamStore p;
  p.add("f.ffn.fc1.weight", Tensor::zeros({3, 12}));
  p.add("f.ffn.fc1.bias", Tensor::zeros({12}));
  p.add("f.ffn.fc2.weight", Tensor::zeros({12, 3}));
  p.add("f.ffn.fc2.bias", Tensor::zeros({3}));
  const auto w = fusion_weights(Tensor::zeros({1, 3}), p, "f");
  EXPECT_EQ(w.w.to_vector(), (std::vector<double>{0.5, 0.5, 0.5}));
}

TEST(FusionWeights, BoundedForLargeInputs) {
  const auto geo = small_geometry();
  Rng rng(6);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1, 2, 3}, rng);
  p = with_nonzero(p, 7);
  for (double mag : {1.0, 10.0, 30.0}) {
    const auto w = fusion_weights(rng.normal_tensor({4, 3}, mag), p, "iscf");
    for (std::size_t i = 0; i < w.w.numel(); ++i) {
      EXPECT_GT(w.w[i], 0.0);
      EXPECT_LT(w.w[i], 1.0);
    }
  }
}

TEST(FusionWeights, GradientCheck) {
  Rng rng(8);
  std::vector<Tensor> in = {rng.normal_tensor({2, 3}), rng.normal_tensor({3, 12}, 0.5), rng.normal_tensor({12}, 0.5),
                            rng.normal_tensor({12, 3}, 0.5), rng.normal_tensor({3}, 0.5)};
  const auto r = grad_check(
      [](const std::vector<Tensor>& x) {
        ParamStore p;
        p.add("f.ffn.fc1.weight", x[1]);
        p.add("f.ffn.fc1.bias", x[2]);
        p.add("f.ffn.fc2.weight", x[3]);
        p.add("f.ffn.fc2.bias", x[4]);
        return weighted_sum(fusion_weights(x[0], p, "f").w);
      },
      in);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Fuse, ZeroConvGivesZero) {
  Rng rng(9);
  ParamStore p;
  p.add("f.fuse.weight", Tensor::zeros({1, 3, 1, 1}));
  p.add("f.fuse.bias", Tensor::zeros({1}));
  const std::vector<Tensor> maps = {rng.normal_tensor({2, 4, 3}), rng.normal_tensor({2, 4, 3}),
                                    rng.normal_tensor({2, 4, 3})};
  const Tensor out = fuse(maps, rng.uniform_tensor({2, 3}, 0.1, 0.9), p, "f");
  EXPECT_EQ(out.shape(), Shape({2, 4, 3}));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Fuse, SelectingFirstMapWithUnitKernel) {
  Rng rng(10);
  ParamStore p;
  p.add("f.fuse.weight", Tensor::ones({1, 3, 1, 1}));
  p.add("f.fuse.bias", Tensor::zeros({1}));
  const std::vector<Tensor> maps = {rng.normal_tensor({1, 4, 3}), rng.normal_tensor({1, 4, 3}),
                                    rng.normal_tensor({1, 4, 3})};
  const Tensor out = fuse(maps, Tensor({1, 3}, std::vector<double>{1, 0, 0}), p, "f");
  EXPECT_LT(iscf::testing::max_abs_diff(out, maps[0]), 1e-15);
  EXPECT_THROW(fuse(maps, Tensor::ones({1, 2}), p, "f"), ShapeMismatch);
}

TEST(Fuse, GradientCheck) {
  Rng rng(11);
  std::vector<Tensor> in = {rng.normal_tensor({2, 4, 3}), rng.normal_tensor({2, 4, 3}), rng.normal_tensor({2, 4, 3}),
                            rng.uniform_tensor({2, 3}, 0.1, 0.9), rng.normal_tensor({1, 3, 1, 1}),
                            rng.normal_tensor({1})};
  const auto r = grad_check(
      [](const std::vector<Tensor>& x) {
        ParamStore p;
        p.add("f.fuse.weight", x[4]);
        p.add("f.fuse.bias", x[5]);
        return weighted_sum(fuse({x[0], x[1], x[2]}, x[3], p, "f"));
      },
      in);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Redistribute, ZeroInputGivesZeroCorrection) {
  const auto geo = small_geometry();
  Rng rng(12);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1, 2, 3}, rng);
  for (int s = 1; s <= 3; ++s) {
    const Tensor c = redistribute(Tensor::zeros({2, geo.n_ref(), geo.d_ref()}), s, geo, p, "iscf");
    EXPECT_EQ(c.shape(), Shape({2, geo.tokens[s - 1], geo.widths[s - 1]}));
    for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_EQ(c[i], 0.0);
  }
  // stage 3: token count unchanged (n_ref = n_3), only channels grow
  EXPECT_EQ(geo.n_ref(), geo.tokens[2]);
}

TEST(Redistribute, GradientCheck) {
  const auto geo = small_geometry();
  Rng rng(13);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {2}, rng);
  ParamStore redist;
  for (const auto& e : p.entries())
    if (e.name.rfind("iscf.redist2", 0) == 0) redist.add(e.name, e.value);
  redist = with_nonzero(redist, 14);
  std::vector<Tensor> in = {rng.normal_tensor({2, geo.n_ref(), geo.d_ref()})};
  for (const auto& v : values_of(redist)) in.push_back(v);
  const auto r = grad_check(
      [&](const std::vector<Tensor>& x) {
        return weighted_sum(redistribute(x[0], 2, geo, rebuild(redist, x, 1), "iscf"));
      },
      in);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(IscfForward, ZeroInitIsExactIdentity) {
  const auto geo = small_geometry();
  for (const StageSet& stages : std::vector<StageSet>{{1}, {1, 2}, {1, 2, 3}, {2, 3}}) {
    Rng rng(15);
    ParamStore p;
    add_iscf_params(p, "iscf", geo, stages, rng);
    const auto taps = random_taps(geo, 2, rng);
    const auto skips = random_skips(geo, 2, rng);
    const auto out = iscf_forward(taps, skips, stages, geo, p, "iscf");
    for (int s = 0; s < 3; ++s) EXPECT_TRUE(bitwise_equal(out.skips[s], skips[s]));
  }
}

TEST(IscfForward, DisabledStagesPassThroughUntouched) {
  const auto geo = small_geometry();
  Rng rng(16);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1}, rng, /*zero_init_fusion=*/false);
  const auto taps = random_taps(geo, 2, rng);
  const auto skips = random_skips(geo, 2, rng);
  const auto out = iscf_forward(taps, skips, {1}, geo, p, "iscf");
  EXPECT_FALSE(bitwise_equal(out.skips[0], skips[0]));
  EXPECT_TRUE(bitwise_equal(out.skips[1], skips[1]));
  EXPECT_TRUE(bitwise_equal(out.skips[2], skips[2]));
  EXPECT_EQ(out.descriptor.shape(), Shape({2, 1}));
}

TEST(IscfForward, ShapesAndWeightRangeUnderScaling) {
  const auto geo = small_geometry();
  Rng rng(17);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1, 2, 3}, rng, false);
  auto taps = random_taps(geo, 2, rng);
  const auto skips = random_skips(geo, 2, rng);
  const auto a = iscf_forward(taps, skips, {1, 2, 3}, geo, p, "iscf");
  for (auto& t : taps.maps) t.key_map = ops::scale(t.key_map, 2.0);
  const auto b = iscf_forward(taps, skips, {1, 2, 3}, geo, p, "iscf");
  for (int s = 0; s < 3; ++s) EXPECT_EQ(a.skips[s].shape(), skips[s].shape());
  EXPECT_GT(iscf::testing::max_abs_diff(a.descriptor, b.descriptor), 0.0);
  for (const Tensor* w : {&a.weights, &b.weights})
    for (std::size_t i = 0; i < w->numel(); ++i) {
      EXPECT_GT((*w)[i], 0.0);
      EXPECT_LT((*w)[i], 1.0);
    }
}

TEST(IscfForward, FullPipelineGradientCheck) {
  const auto geo = small_geometry();
  Rng rng(18);
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1, 2, 3}, rng);
  p = with_nonzero(p, 19);
  const auto taps = random_taps(geo, 2, rng);
  const auto skips = random_skips(geo, 2, rng);
  std::vector<Tensor> in = {taps.maps[0].key_map, taps.maps[1].key_map, taps.maps[2].key_map,
                            skips[0], skips[1], skips[2]};
  for (const auto& v : values_of(p)) in.push_back(v);
  const auto r = grad_check(
      [&](const std::vector<Tensor>& x) {
        ScaleMapSet t;
        for (int s = 0; s < 3; ++s) t.maps[s] = {s + 1, x[s], geo.tokens[s]};
        const auto out = iscf_forward(t, {x[3], x[4], x[5]}, {1, 2, 3}, geo, rebuild(p, x, 6), "iscf");
        return ops::add(ops::add(weighted_sum(out.skips[0], 1), weighted_sum(out.skips[1], 2)),
                        weighted_sum(out.skips[2], 3));
      },
      in, {.max_coords = 20, .seed = 3});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(IscfParams, ClosedFormMatchesStoreForEverySubset) {
  for (const auto& geo : {small_geometry(), kGeo}) {
    for (const StageSet& stages :
         std::vector<StageSet>{{}, {1}, {2}, {3}, {1, 2}, {1, 3}, {2, 3}, {1, 2, 3}}) {
      Rng rng(20);
      ParamStore p;
      add_iscf_params(p, "iscf", geo, stages, rng);
      EXPECT_EQ(p.total_count(), iscf_param_count(geo, stages));
    }
  }
}
