#include "iscf/iscf.hpp"

#include <algorithm>

#include "iscf/errors.hpp"
#include "iscf/ops.hpp"
#include "iscf/params.hpp"
#include "iscf/rng.hpp"

namespace iscf {

namespace {

std::string stage_tag(int s) { return std::to_string(s); }

// Linear over the token axis of [b, n, d]: → [b, n_out, d].
Tensor token_linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const Tensor transposed = ops::permute(x, {0, 2, 1});
  return ops::permute(ops::linear(transposed, w, bias), {0, 2, 1});
}

void check_stage(int s) {
  if (s < 1 || s > 3) throw InvalidConfig("ISCF stage must be 1, 2 or 3, got " + std::to_string(s));
}

}  // namespace

StageSet normalize_stages(StageSet stages) {
  for (int s : stages) check_stage(s);
  std::sort(stages.begin(), stages.end());
  if (std::adjacent_find(stages.begin(), stages.end()) != stages.end()) {
    throw InvalidConfig("ISCF stage list repeats a stage");
  }
  return stages;
}

void ScaleMapSet::validate() const {
  for (int s = 0; s < 3; ++s) {
    const auto& tap = maps[s];
    if (tap.stage != s + 1) {
      throw ShapeMismatch("ScaleMapSet slot " + std::to_string(s + 1) + " holds stage " +
                          std::to_string(tap.stage));
    }
    if (tap.key_map.rank() != 3 || tap.key_map.dim(1) != tap.token_count) {
      throw ShapeMismatch("stage " + std::to_string(s + 1) + " key map " +
                          shape_to_string(tap.key_map.shape()) + " does not match token count " +
                          std::to_string(tap.token_count));
    }
  }
}

Tensor remap_to_reference(const AttentionTap& tap, const IscfGeometry& geo, const ParamStore& params,
                          const std::string& prefix) {
  check_stage(tap.stage);
  const Tensor& m = tap.key_map;
  const std::size_t i = tap.stage - 1;
  if (m.rank() != 3 || m.dim(1) != geo.tokens[i] || m.dim(2) != geo.key_dims[i]) {
    throw ShapeMismatch("stage " + std::to_string(tap.stage) + " map " + shape_to_string(m.shape()) +
                        " does not match geometry [b," + std::to_string(geo.tokens[i]) + "," +
                        std::to_string(geo.key_dims[i]) + "]");
  }
  if (tap.stage == 3) return m;
  const std::string p = prefix + ".remap" + stage_tag(tap.stage);
  const Tensor tokens = token_linear(m, params.at(p + ".token.weight"), params.at(p + ".token.bias"));
  return ops::linear(tokens, params.at(p + ".channel.weight"), params.at(p + ".channel.bias"));
}

Tensor global_descriptor(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw ShapeMismatch("global_descriptor needs at least one map");
  std::vector<Tensor> pooled;
  for (const auto& m : maps) {
    if (m.rank() != 3 || m.shape() != maps.front().shape()) {
      throw ShapeMismatch("descriptor maps must share one [b,n,d] shape, got " + shape_to_string(m.shape()));
    }
    pooled.push_back(ops::reshape(ops::mean(m, {1, 2}), {m.dim(0), 1}));
  }
  return ops::concat(pooled, 1);
}

FusionWeights fusion_weights(const Tensor& descriptor, const ParamStore& params, const std::string& prefix) {
  const Tensor hidden = ops::gelu(
      ops::linear(descriptor, params.at(prefix + ".ffn.fc1.weight"), params.at(prefix + ".ffn.fc1.bias")));
  const Tensor logits =
      ops::linear(hidden, params.at(prefix + ".ffn.fc2.weight"), params.at(prefix + ".ffn.fc2.bias"));
  return {ops::sigmoid(logits)};
}

Tensor fuse(const std::vector<Tensor>& maps, const Tensor& weights, const ParamStore& params,
            const std::string& prefix) {
  if (maps.empty()) throw ShapeMismatch("fuse needs at least one map");
  const Shape& ref = maps.front().shape();
  const std::int64_t b = ref[0], m = static_cast<std::int64_t>(maps.size());
  if (weights.shape() != Shape{b, m}) {
    throw ShapeMismatch("fusion weights " + shape_to_string(weights.shape()) + " vs [" +
                        std::to_string(b) + "," + std::to_string(m) + "]");
  }
  std::vector<Tensor> scaled;
  for (std::int64_t s = 0; s < m; ++s) {
    if (maps[s].shape() != ref) throw ShapeMismatch("fuse maps must share a shape");
    const Tensor w = ops::reshape(ops::slice(weights, 1, s, 1), {b, 1, 1});
    scaled.push_back(ops::reshape(ops::mul(maps[s], w), {b, 1, ref[1], ref[2]}));
  }
  const Tensor stacked = ops::concat(scaled, 1);
  const Tensor out = ops::conv2d(stacked, params.at(prefix + ".fuse.weight"), params.at(prefix + ".fuse.bias"));
  return ops::reshape(out, {b, ref[1], ref[2]});
}

Tensor redistribute(const Tensor& fused, int stage, const IscfGeometry& geo, const ParamStore& params,
                    const std::string& prefix) {
  check_stage(stage);
  if (fused.rank() != 3 || fused.dim(1) != geo.n_ref() || fused.dim(2) != geo.d_ref()) {
    throw ShapeMismatch("fused context " + shape_to_string(fused.shape()) + " is not [b," +
                        std::to_string(geo.n_ref()) + "," + std::to_string(geo.d_ref()) + "]");
  }
  const std::string p = prefix + ".redist" + stage_tag(stage);
  const Tensor tokens = token_linear(fused, params.at(p + ".token.weight"), params.at(p + ".token.bias"));
  return ops::linear(tokens, params.at(p + ".channel.weight"), params.at(p + ".channel.bias"));
}

IscfOutput iscf_forward(const ScaleMapSet& taps, const std::array<Tensor, 3>& skips,
                        const StageSet& stages, const IscfGeometry& geo, const ParamStore& params,
                        const std::string& prefix) {
  const StageSet enabled = normalize_stages(stages);
  IscfOutput out;
  out.skips = skips;
  if (enabled.empty()) return out;
  taps.validate();
  for (int s = 0; s < 3; ++s) {
    if (skips[s].rank() != 3 || skips[s].dim(1) != geo.tokens[s] || skips[s].dim(2) != geo.widths[s]) {
      throw ShapeMismatch("skip " + std::to_string(s + 1) + " " + shape_to_string(skips[s].shape()) +
                          " does not match geometry");
    }
  }

  std::vector<Tensor> maps;
  for (int s : enabled) maps.push_back(remap_to_reference(taps.maps[s - 1], geo, params, prefix));
  out.descriptor = global_descriptor(maps);
  out.weights = fusion_weights(out.descriptor, params, prefix).w;
  out.fused = fuse(maps, out.weights, params, prefix);
  for (int s : enabled) {
    out.skips[s - 1] = ops::add(skips[s - 1], redistribute(out.fused, s, geo, params, prefix));
  }
  return out;
}

void add_iscf_params(ParamStore& params, const std::string& prefix, const IscfGeometry& geo,
                     const StageSet& stages, Rng& rng, bool zero_init_fusion) {
  const StageSet enabled = normalize_stages(stages);
  if (enabled.empty()) return;
  const std::int64_t n_ref = geo.n_ref(), d_ref = geo.d_ref();
  for (int s : enabled) {
    if (s == 3) continue;
    const std::string p = prefix + ".remap" + stage_tag(s);
    params.add(p + ".token.weight", trunc_normal(rng, {geo.tokens[s - 1], n_ref}));
    params.add(p + ".token.bias", Tensor::zeros({n_ref}));
    params.add(p + ".channel.weight", trunc_normal(rng, {geo.key_dims[s - 1], d_ref}));
    params.add(p + ".channel.bias", Tensor::zeros({d_ref}));
  }
  const std::int64_t m = static_cast<std::int64_t>(enabled.size());
  params.add(prefix + ".ffn.fc1.weight", trunc_normal(rng, {m, 4 * m}));
  params.add(prefix + ".ffn.fc1.bias", Tensor::zeros({4 * m}));
  params.add(prefix + ".ffn.fc2.weight", trunc_normal(rng, {4 * m, m}));
  params.add(prefix + ".ffn.fc2.bias", Tensor::zeros({m}));
  params.add(prefix + ".fuse.weight",
             zero_init_fusion ? Tensor::zeros({1, m, 1, 1}) : trunc_normal(rng, {1, m, 1, 1}, 0.5));
  params.add(prefix + ".fuse.bias", Tensor::zeros({1}));
  for (int s : enabled) {
    const std::string p = prefix + ".redist" + stage_tag(s);
    params.add(p + ".token.weight", trunc_normal(rng, {n_ref, geo.tokens[s - 1]}));
    params.add(p + ".token.bias", Tensor::zeros({geo.tokens[s - 1]}));
    params.add(p + ".channel.weight", trunc_normal(rng, {d_ref, geo.widths[s - 1]}));
    params.add(p + ".channel.bias", Tensor::zeros({geo.widths[s - 1]}));
  }
}

std::int64_t iscf_param_count(const IscfGeometry& geo, const StageSet& stages) {
  const StageSet enabled = normalize_stages(stages);
  if (enabled.empty()) return 0;
  const std::int64_t n_ref = geo.n_ref(), d_ref = geo.d_ref();
  const std::int64_t m = static_cast<std::int64_t>(enabled.size());
  std::int64_t total = 0;
  for (int s : enabled) {
    const std::int64_t n = geo.tokens[s - 1], d = geo.key_dims[s - 1], c = geo.widths[s - 1];
    if (s != 3) total += (n + 1) * n_ref + (d + 1) * d_ref;
    total += (n_ref + 1) * n + (d_ref + 1) * c;
  }
  total += 8 * m * m + 5 * m;  // FFN m→4m→m with biases
  total += m + 1;              // 1×1 fusion convolution
  return total;
}

}  // namespace iscf
