#include "iscf/gradcheck_suite.hpp"

#include <functional>

#include "iscf/attention.hpp"
#include "iscf/errors.hpp"
#include "iscf/gradcheck.hpp"
#include "iscf/iscf.hpp"
#include "iscf/model.hpp"
#include "iscf/ops.hpp"
#include "iscf/params.hpp"
#include "iscf/patch_block.hpp"
#include "iscf/rng.hpp"

namespace iscf {

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
using StoreFn = std::function<Tensor(const Tensor&, const ParamStore&)>;

// Random projection to a scalar: every output coordinate gets its own weight.
Tensor project(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, rng.normal_tensor(y.shape())));
}

class Suite {
 public:
  explicit Suite(std::string scope) : scope_(std::move(scope)), threshold_(gradcheck_threshold(scope_)) {}

  void check(const std::string& name, const Fn& f, const std::vector<Tensor>& inputs, std::size_t max_coords = 0) {
    GradCheckOptions opts;
    opts.max_coords = max_coords;
    opts.seed = results_.size() + 1;
    const GradCheckResult r = grad_check([&](const std::vector<Tensor>& x) { return project(f(x)); }, inputs, opts);
    results_.push_back({scope_, name, r.max_rel_error, threshold_, r.probes});
  }

  /// Checks f with respect to x and every parameter of the store.
  void check_store(const std::string& name, const ParamStore& params, const Tensor& x, const StoreFn& f,
                   std::size_t max_coords = 24) {
    std::vector<Tensor> inputs = {x};
    for (const auto& p : params.entries()) inputs.push_back(p.value);
    check(
        name,
        [&](const std::vector<Tensor>& in) {
          ParamStore local;
          for (std::size_t i = 0; i < params.size(); ++i) local.add(params.entries()[i].name, in[i + 1]);
          return f(in[0], local);
        },
        inputs, max_coords);
  }

  std::vector<GradTarget> take() { return std::move(results_); }

 private:
  std::string scope_;
  double threshold_;
  std::vector<GradTarget> results_;
};

ParamStore randomized(const ParamStore& src, Rng& rng, double scale = 0.3) {
  ParamStore out;
  for (const auto& p : src.entries()) out.add(p.name, rng.normal_tensor(p.value.shape(), scale));
  return out;
}

void primitives(Suite& s) {
  Rng rng(1);
  s.check("matmul", [](const auto& x) { return ops::matmul(x[0], x[1]); },
          {rng.normal_tensor({2, 3, 4}), rng.normal_tensor({4, 5})});
  s.check("softmax", [](const auto& x) { return ops::softmax(x[0], -1); }, {rng.normal_tensor({3, 5})});
  s.check("softmax(axis=-2)", [](const auto& x) { return ops::softmax(x[0], -2); }, {rng.normal_tensor({2, 6, 3})});
  s.check("layer_norm", [](const auto& x) { return ops::layer_norm(x[0], x[1], x[2]); },
          {rng.normal_tensor({3, 4, 6}), rng.normal_tensor({6}), rng.normal_tensor({6})});
  s.check("conv2d", [](const auto& x) { return ops::conv2d(x[0], x[1], x[2], {2, 1, 2}); },
          {rng.normal_tensor({1, 4, 6, 6}), rng.normal_tensor({4, 2, 3, 3}), rng.normal_tensor({4})});
  s.check("conv2d(depthwise)", [](const auto& x) { return ops::conv2d(x[0], x[1], x[2], {1, 1, 3}); },
          {rng.normal_tensor({2, 3, 4, 5}), rng.normal_tensor({3, 1, 3, 3}), rng.normal_tensor({3})});
  s.check("linear", [](const auto& x) { return ops::linear(x[0], x[1], x[2]); },
          {rng.normal_tensor({2, 5, 3}), rng.normal_tensor({3, 4}), rng.normal_tensor({4})});
  s.check("add", [](const auto& x) { return ops::add(x[0], x[1]); },
          {rng.normal_tensor({2, 3, 4}), rng.normal_tensor({3, 1})});
  s.check("sub", [](const auto& x) { return ops::sub(x[0], x[1]); },
          {rng.normal_tensor({2, 1, 4}), rng.normal_tensor({3, 4})});
  s.check("mul", [](const auto& x) { return ops::mul(x[0], x[1]); },
          {rng.normal_tensor({2, 3, 4}), rng.normal_tensor({4})});
  s.check("scale", [](const auto& x) { return ops::scale(x[0], -1.7); }, {rng.normal_tensor({5})});
  s.check("gelu", [](const auto& x) { return ops::gelu(x[0]); }, {rng.normal_tensor({4, 4}, 2.0)});
  s.check("sigmoid", [](const auto& x) { return ops::sigmoid(x[0]); }, {rng.normal_tensor({4, 4}, 2.0)});
  s.check("sum", [](const auto& x) { return ops::sum(x[0], {0, 2}); }, {rng.normal_tensor({2, 3, 4})});
  s.check("mean", [](const auto& x) { return ops::mean(x[0], {1}); }, {rng.normal_tensor({2, 3, 4})});
  s.check("reshape", [](const auto& x) { return ops::mul(ops::reshape(x[0], {4, 3}), x[1]); },
          {rng.normal_tensor({2, 6}), rng.normal_tensor({4, 3})});
  s.check("permute", [](const auto& x) { return ops::mul(ops::permute(x[0], {2, 0, 1}), x[1]); },
          {rng.normal_tensor({2, 3, 4}), rng.normal_tensor({4, 2, 3})});
  s.check("concat", [](const auto& x) { return ops::mul(ops::concat({x[0], x[1]}, 1), x[2]); },
          {rng.normal_tensor({2, 3}), rng.normal_tensor({2, 2}), rng.normal_tensor({2, 5})});
  s.check("slice", [](const auto& x) { return ops::mul(ops::slice(x[0], 1, 1, 2), x[1]); },
          {rng.normal_tensor({3, 4}), rng.normal_tensor({3, 2})});
  const Tensor target = rng.uniform_tensor({3, 4}, 0.0, 1.0);
  s.check("bce_with_logits", [&](const auto& x) { return ops::bce_with_logits(x[0], target); },
          {rng.normal_tensor({3, 4}, 3.0)});
}

void blocks(Suite& s) {
  Rng rng(2);
  s.check("efficient_attention", [](const auto& x) { return efficient_attention(x[0], x[1], x[2]).out; },
          {rng.normal_tensor({2, 6, 3}), rng.normal_tensor({2, 6, 3}), rng.normal_tensor({2, 6, 4})});
  s.check("efficient_attention.tap", [](const auto& x) { return efficient_attention(x[0], x[1], x[2]).tap.key_map; },
          {rng.normal_tensor({5, 3}), rng.normal_tensor({5, 3}), rng.normal_tensor({5, 2})});
  {
    ParamStore p;
    const AttentionConfig cfg = AttentionConfig::for_width(8, 2);
    add_attention_params(p, "attn", cfg, rng);
    s.check_store("multi_head_attention", randomized(p, rng), rng.normal_tensor({1, 6, 8}),
                  [cfg](const Tensor& x, const ParamStore& ps) {
                    const Qkv qkv = make_qkv(x, ps, "attn");
                    return efficient_attention(qkv.q, qkv.k, qkv.v, cfg, ps, "attn").out;
                  });
  }
  {
    ParamStore p;
    add_embed_params(p, "embed", 3, 4, {}, rng);
    s.check_store("patch_embed", randomized(p, rng), rng.normal_tensor({1, 3, 32, 32}),
                  [](const Tensor& x, const ParamStore& ps) { return patch_embed(x, ps, "embed"); });
  }
  {
    ParamStore p;
    add_merge_params(p, "merge", 3, rng);
    s.check_store("patch_merge", randomized(p, rng), rng.normal_tensor({2, 16, 3}),
                  [](const Tensor& x, const ParamStore& ps) { return patch_merge(x, {4, 4}, ps, "merge"); });
  }
  {
    ParamStore p;
    add_expand_params(p, "dec", 4, rng);
    s.check_store("patch_expand", randomized(p, rng), rng.normal_tensor({1, 4, 4}),
                  [](const Tensor& x, const ParamStore& ps) { return patch_expand(x, {2, 2}, ps, "dec"); });
  }
  {
    ParamStore p;
    add_final_expand_params(p, "head", 2, rng);
    s.check_store("final_expand4", randomized(p, rng), rng.normal_tensor({1, 4, 2}),
                  [](const Tensor& x, const ParamStore& ps) { return final_expand4(x, {2, 2}, ps, "head"); });
  }
  {
    ParamStore p;
    add_mix_ffn_params(p, "ffn", 4, 2, rng);
    s.check_store("mix_ffn", randomized(p, rng), rng.normal_tensor({1, 12, 4}),
                  [](const Tensor& x, const ParamStore& ps) { return mix_ffn(x, {3, 4}, ps, "ffn"); });
  }
  for (bool prenorm : {false, true}) {
    StageConfig cfg;
    cfg.d_model = 4;
    cfg.grid = {3, 3};
    cfg.ffn_expansion = 2;
    cfg.attn_prenorm = prenorm;
    ParamStore p;
    add_block_params(p, "blk", cfg, rng);
    s.check_store(prenorm ? "transformer_block(prenorm)" : "transformer_block", randomized(p, rng),
                  rng.normal_tensor({2, 9, 4}),
                  [cfg](const Tensor& x, const ParamStore& ps) { return transformer_block(x, cfg, ps, "blk").y; });
  }
}

IscfGeometry small_geometry() { return IscfGeometry{{16, 8, 4}, {2, 4, 8}, {4, 8, 16}}; }

void iscf_targets(Suite& s) {
  Rng rng(3);
  const IscfGeometry geo = small_geometry();
  ParamStore p;
  add_iscf_params(p, "iscf", geo, {1, 2, 3}, rng, false);
  p = randomized(p, rng);

  for (int stage : {1, 2}) {
    ParamStore sub;
    for (const auto& e : p.entries()) {
      if (e.name.rfind("iscf.remap" + std::to_string(stage), 0) == 0) sub.add(e.name, e.value);
    }
    s.check_store("remap" + std::to_string(stage), sub,
                  ops::softmax(rng.normal_tensor({2, geo.tokens[stage - 1], geo.key_dims[stage - 1]}), 1),
                  [&geo, stage](const Tensor& x, const ParamStore& ps) {
                    return remap_to_reference({stage, x, geo.tokens[stage - 1]}, geo, ps, "iscf");
                  });
  }
  s.check("global_descriptor", [](const auto& x) { return global_descriptor({x[0], x[1], x[2]}); },
          {rng.normal_tensor({2, 4, 8}), rng.normal_tensor({2, 4, 8}), rng.normal_tensor({2, 4, 8})});
  {
    ParamStore ffn;
    for (const auto& e : p.entries()) {
      if (e.name.rfind("iscf.ffn", 0) == 0) ffn.add(e.name, e.value);
    }
    s.check_store("fusion_weights", ffn, rng.normal_tensor({2, 3}),
                  [](const Tensor& x, const ParamStore& ps) { return fusion_weights(x, ps, "iscf").w; });
  }
  s.check(
      "fuse",
      [](const auto& x) {
        ParamStore ps;
        ps.add("f.fuse.weight", x[4]);
        ps.add("f.fuse.bias", x[5]);
        return fuse({x[0], x[1], x[2]}, x[3], ps, "f");
      },
      {rng.normal_tensor({2, 4, 8}), rng.normal_tensor({2, 4, 8}), rng.normal_tensor({2, 4, 8}),
       rng.uniform_tensor({2, 3}, 0.1, 0.9), rng.normal_tensor({1, 3, 1, 1}), rng.normal_tensor({1})});
  for (int stage : {1, 2, 3}) {
    ParamStore sub;
    for (const auto& e : p.entries()) {
      if (e.name.rfind("iscf.redist" + std::to_string(stage), 0) == 0) sub.add(e.name, e.value);
    }
    s.check_store("redistribute" + std::to_string(stage), sub, rng.normal_tensor({2, geo.n_ref(), geo.d_ref()}),
                  [&geo, stage](const Tensor& x, const ParamStore& ps) {
                    return redistribute(x, stage, geo, ps, "iscf");
                  });
  }

  std::vector<Tensor> inputs;
  for (int st = 0; st < 3; ++st) inputs.push_back(ops::softmax(rng.normal_tensor({2, geo.tokens[st], geo.key_dims[st]}), 1));
  for (int st = 0; st < 3; ++st) inputs.push_back(rng.normal_tensor({2, geo.tokens[st], geo.widths[st]}));
  for (const auto& e : p.entries()) inputs.push_back(e.value);
  s.check(
      "iscf_forward",
      [&](const auto& x) {
        ScaleMapSet taps;
        for (int st = 0; st < 3; ++st) taps.maps[st] = {st + 1, x[st], geo.tokens[st]};
        ParamStore ps;
        for (std::size_t i = 0; i < p.size(); ++i) ps.add(p.entries()[i].name, x[6 + i]);
        const auto out = iscf_forward(taps, {x[3], x[4], x[5]}, {1, 2, 3}, geo, ps, "iscf");
        return ops::concat({ops::reshape(out.skips[0], {2 * 16 * 4}),
                            ops::reshape(out.skips[1], {2 * 8 * 8}), ops::reshape(out.skips[2], {2 * 4 * 16})},
                           0);
      },
      inputs, 20);
}

void model(Suite& s) {
  ModelConfig cfg;
  cfg.input_h = cfg.input_w = 32;
  cfg.base_width = 8;
  cfg.seed = 5;
  cfg.zero_init_fusion = false;
  const ParamStore p = build(cfg);
  const Tensor img = Rng(7).normal_tensor({1, 3, 32, 32});
  std::vector<Tensor> inputs;
  for (const auto& e : p.entries()) inputs.push_back(e.value);
  s.check(
      "model(32x32,d1=8)",
      [&](const auto& x) {
        ParamStore q = p;
        for (std::size_t i = 0; i < x.size(); ++i) q.set_value(i, x[i]);
        return forward(img, q, cfg).logits;
      },
      inputs, 5);
}

}  // namespace

const std::vector<std::string>& gradcheck_scopes() {
  static const std::vector<std::string> scopes = {"primitives", "blocks", "iscf", "model"};
  return scopes;
}

double gradcheck_threshold(const std::string& scope) {
  if (scope == "model") return 1e-3;
  if (scope == "primitives" || scope == "blocks" || scope == "iscf") return 1e-4;
  throw InvalidConfig("unknown gradcheck scope '" + scope + "' (primitives|blocks|iscf|model)");
}

std::vector<GradTarget> run_gradcheck(const std::string& scope) {
  Suite s(scope);
  if (scope == "primitives") primitives(s);
  else if (scope == "blocks") blocks(s);
  else if (scope == "iscf") iscf_targets(s);
  else model(s);
  return s.take();
}

}  // namespace iscf
