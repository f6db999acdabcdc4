#include "iscf/patch_block.hpp"

#include "iscf/errors.hpp"
#include "iscf/ops.hpp"
#include "iscf/params.hpp"

namespace iscf {

void StageConfig::validate() const {
  if (d_model <= 0 || d_model % 2 != 0) {
    throw InvalidConfig("stage width must be positive and even, got " + std::to_string(d_model));
  }
  if (grid.h <= 0 || grid.w <= 0) throw InvalidConfig("token grid extents must be positive");
  if (blocks_per_stage <= 0 || ffn_expansion <= 0) {
    throw InvalidConfig("blocks_per_stage and ffn_expansion must be positive");
  }
  attention().validate();
}

namespace {

void check_tokens(const Tensor& x, Grid grid, const char* what) {
  if (x.rank() != 3 || x.dim(1) != grid.tokens()) {
    throw ShapeMismatch(std::string(what) + ": expected [b, " + std::to_string(grid.tokens()) +
                        ", c] for a " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                        " grid, got " + shape_to_string(x.shape()));
  }
}

}  // namespace

Tensor tokens_to_image(const Tensor& x, Grid grid) {
  check_tokens(x, grid, "tokens_to_image");
  const Tensor spatial = ops::reshape(x, {x.dim(0), grid.h, grid.w, x.dim(2)});
  return ops::permute(spatial, {0, 3, 1, 2});
}

Tensor image_to_tokens(const Tensor& x) {
  if (x.rank() != 4) throw ShapeMismatch("image_to_tokens expects [b,c,h,w]");
  const Tensor channels_last = ops::permute(x, {0, 2, 3, 1});
  return ops::reshape(channels_last, {x.dim(0), x.dim(2) * x.dim(3), x.dim(1)});
}

Tensor patch_embed(const Tensor& img, const ParamStore& params, const std::string& prefix,
                   const EmbedConfig& cfg) {
  if (img.rank() != 4) throw BadInputExtent("patch_embed expects [b,c,H,W], got " + shape_to_string(img.shape()));
  if (img.dim(2) % 32 != 0 || img.dim(3) % 32 != 0) {
    throw BadInputExtent("input extents " + std::to_string(img.dim(2)) + "x" +
                         std::to_string(img.dim(3)) + " must be multiples of 32");
  }
  const Tensor features = ops::conv2d(img, params.at(prefix + ".proj.weight"),
                                      params.at(prefix + ".proj.bias"),
                                      {.stride = cfg.stride, .pad = cfg.pad});
  const Tensor tokens = image_to_tokens(features);
  if (!cfg.normalize) return tokens;
  return ops::layer_norm(tokens, params.at(prefix + ".norm.weight"), params.at(prefix + ".norm.bias"));
}

Tensor merge_gather(const Tensor& x, Grid grid) {
  check_tokens(x, grid, "patch_merge");
  if (grid.h % 2 != 0 || grid.w % 2 != 0) {
    throw OddGrid("cannot merge 2x2 tokens on a " + std::to_string(grid.h) + "x" +
                  std::to_string(grid.w) + " grid");
  }
  const std::int64_t b = x.dim(0), c = x.dim(2);
  // [b, h/2, 2, w/2, 2, c] → [b, h/2, w/2, 2(dy), 2(dx), c]
  const Tensor split = ops::reshape(x, {b, grid.h / 2, 2, grid.w / 2, 2, c});
  const Tensor grouped = ops::permute(split, {0, 1, 3, 2, 4, 5});
  return ops::reshape(grouped, {b, grid.tokens() / 4, 4 * c});
}

Tensor expand_scatter(const Tensor& x, Grid grid, int factor) {
  check_tokens(x, grid, "expand");
  const std::int64_t f = factor;
  if (x.dim(2) % (f * f) != 0) {
    throw OddChannels("cannot spread " + std::to_string(x.dim(2)) + " channels over a " +
                      std::to_string(f) + "x" + std::to_string(f) + " neighbourhood");
  }
  const std::int64_t b = x.dim(0), c = x.dim(2) / (f * f);
  // [b, h, w, f(dy), f(dx), c] → [b, h, f, w, f, c]
  const Tensor split = ops::reshape(x, {b, grid.h, grid.w, f, f, c});
  const Tensor spread = ops::permute(split, {0, 1, 3, 2, 4, 5});
  return ops::reshape(spread, {b, grid.tokens() * f * f, c});
}

Tensor patch_merge(const Tensor& x, Grid grid, const ParamStore& params, const std::string& prefix) {
  const Tensor gathered = merge_gather(x, grid);
  const Tensor normed = ops::layer_norm(gathered, params.at(prefix + ".norm.weight"),
                                        params.at(prefix + ".norm.bias"));
  return ops::linear(normed, params.at(prefix + ".reduction.weight"));
}

Tensor patch_expand(const Tensor& x, Grid grid, const ParamStore& params, const std::string& prefix) {
  check_tokens(x, grid, "patch_expand");
  if (x.dim(2) % 2 != 0) {
    throw OddChannels("patch_expand needs an even channel count, got " + std::to_string(x.dim(2)));
  }
  return expand_scatter(ops::linear(x, params.at(prefix + ".expand.weight")), grid, 2);
}

Tensor final_expand4(const Tensor& x, Grid grid, const ParamStore& params, const std::string& prefix) {
  check_tokens(x, grid, "final_expand4");
  return expand_scatter(ops::linear(x, params.at(prefix + ".expand.weight")), grid, 4);
}

Tensor mix_ffn(const Tensor& x, Grid grid, const ParamStore& params, const std::string& prefix) {
  check_tokens(x, grid, "mix_ffn");
  const Tensor hidden = ops::linear(x, params.at(prefix + ".fc1.weight"), params.at(prefix + ".fc1.bias"));
  const std::int64_t width = hidden.dim(2);
  const Tensor mixed = ops::conv2d(tokens_to_image(hidden, grid), params.at(prefix + ".dwconv.weight"),
                                   params.at(prefix + ".dwconv.bias"),
                                   {.stride = 1, .pad = 1, .groups = static_cast<int>(width)});
  const Tensor activated = ops::gelu(image_to_tokens(mixed));
  return ops::linear(activated, params.at(prefix + ".fc2.weight"), params.at(prefix + ".fc2.bias"));
}

BlockOutput transformer_block(const Tensor& x, const StageConfig& cfg, const ParamStore& params,
                              const std::string& prefix) {
  check_tokens(x, cfg.grid, "transformer_block");
  if (x.dim(2) != cfg.d_model) {
    throw ShapeMismatch("transformer_block: width " + std::to_string(x.dim(2)) + " vs stage width " +
                        std::to_string(cfg.d_model));
  }
  Tensor attn_in = x;
  if (cfg.attn_prenorm) {
    attn_in = ops::layer_norm(x, params.at(prefix + ".norm0.weight"), params.at(prefix + ".norm0.bias"));
  }
  const Qkv qkv = make_qkv(attn_in, params, prefix + ".attn");
  auto attn = efficient_attention(qkv.q, qkv.k, qkv.v, cfg.attention(), params, prefix + ".attn");
  const Tensor x1 = ops::add(attn.out, x);
  const Tensor normed =
      ops::layer_norm(x1, params.at(prefix + ".norm1.weight"), params.at(prefix + ".norm1.bias"));
  BlockOutput out;
  out.y = ops::add(mix_ffn(normed, cfg.grid, params, prefix + ".ffn"), x1);
  out.tap = std::move(attn.tap);
  return out;
}

void add_embed_params(ParamStore& params, const std::string& prefix, std::int64_t in_channels,
                      std::int64_t width, const EmbedConfig& cfg, Rng& rng) {
  params.add(prefix + ".proj.weight", trunc_normal(rng, {width, in_channels, cfg.kernel, cfg.kernel}));
  params.add(prefix + ".proj.bias", Tensor::zeros({width}));
  if (cfg.normalize) {
    params.add(prefix + ".norm.weight", Tensor::ones({width}));
    params.add(prefix + ".norm.bias", Tensor::zeros({width}));
  }
}

void add_merge_params(ParamStore& params, const std::string& prefix, std::int64_t channels, Rng& rng) {
  params.add(prefix + ".norm.weight", Tensor::ones({4 * channels}));
  params.add(prefix + ".norm.bias", Tensor::zeros({4 * channels}));
  params.add(prefix + ".reduction.weight", trunc_normal(rng, {4 * channels, 2 * channels}));
}

void add_expand_params(ParamStore& params, const std::string& prefix, std::int64_t channels, Rng& rng) {
  params.add(prefix + ".expand.weight", trunc_normal(rng, {channels, 2 * channels}));
}

void add_final_expand_params(ParamStore& params, const std::string& prefix, std::int64_t channels,
                             Rng& rng) {
  params.add(prefix + ".expand.weight", trunc_normal(rng, {channels, 16 * channels}));
}

void add_mix_ffn_params(ParamStore& params, const std::string& prefix, std::int64_t channels,
                        int expansion, Rng& rng) {
  const std::int64_t hidden = channels * expansion;
  params.add(prefix + ".fc1.weight", trunc_normal(rng, {channels, hidden}));
  params.add(prefix + ".fc1.bias", Tensor::zeros({hidden}));
  params.add(prefix + ".dwconv.weight", trunc_normal(rng, {hidden, 1, 3, 3}));
  params.add(prefix + ".dwconv.bias", Tensor::zeros({hidden}));
  params.add(prefix + ".fc2.weight", trunc_normal(rng, {hidden, channels}));
  params.add(prefix + ".fc2.bias", Tensor::zeros({channels}));
}

void add_block_params(ParamStore& params, const std::string& prefix, const StageConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.attn_prenorm) {
    params.add(prefix + ".norm0.weight", Tensor::ones({cfg.d_model}));
    params.add(prefix + ".norm0.bias", Tensor::zeros({cfg.d_model}));
  }
  add_attention_params(params, prefix + ".attn", cfg.attention(), rng);
  params.add(prefix + ".norm1.weight", Tensor::ones({cfg.d_model}));
  params.add(prefix + ".norm1.bias", Tensor::zeros({cfg.d_model}));
  add_mix_ffn_params(params, prefix + ".ffn", cfg.d_model, cfg.ffn_expansion, rng);
}

}  // namespace iscf
