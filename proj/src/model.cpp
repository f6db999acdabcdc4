#include "iscf/model.hpp"

#include <set>

#include "iscf/errors.hpp"
#include "iscf/ops.hpp"
#include "iscf/rng.hpp"

namespace iscf {

namespace {

std::string block_prefix(const std::string& stage, int j) { return stage + ".block" + std::to_string(j); }
std::string enc(int s) { return "enc" + std::to_string(s); }
std::string dec(int s) { return "dec" + std::to_string(s); }

constexpr std::uint64_t kIscfStream = 0x9e3779b97f4a7c15ULL;

std::int64_t block_count(std::int64_t d, const ModelConfig& cfg) {
  const std::int64_t dk = d / 2, dv = d, hidden = cfg.ffn_expansion * d;
  std::int64_t n = 2 * d * dk + d * dv;           // q, k, v
  if (cfg.heads > 1) n += dv * d + d;             // output projection
  if (cfg.attn_prenorm) n += 2 * d;               // norm0
  n += 2 * d;                                     // norm1
  n += d * hidden + hidden;                       // fc1
  n += 9 * hidden + hidden;                       // depthwise 3×3
  n += hidden * d + d;                            // fc2
  return n;
}

}  // namespace

Grid ModelConfig::grid(int stage) const {
  if (stage < 1 || stage > 4) throw InvalidConfig("stage index must be 1..4");
  const std::int64_t f = std::int64_t{4} << (stage - 1);
  return {input_h / f, input_w / f};
}

StageConfig ModelConfig::stage_config(int stage) const {
  StageConfig sc;
  sc.d_model = stage == 4 ? bottleneck_width() : stage_widths()[stage - 1];
  sc.grid = grid(stage);
  sc.blocks_per_stage = blocks_per_stage;
  sc.ffn_expansion = ffn_expansion;
  sc.heads = heads;
  sc.attn_prenorm = attn_prenorm;
  return sc;
}

IscfGeometry ModelConfig::iscf_geometry() const {
  IscfGeometry g;
  for (int s = 1; s <= 3; ++s) {
    const auto att = stage_config(s).attention();
    g.tokens[s - 1] = grid(s).tokens();
    g.key_dims[s - 1] = att.d_k;
    g.widths[s - 1] = att.d_model;
  }
  return g;
}

void ModelConfig::validate() const {
  if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw InvalidConfig("input extents must be positive multiples of 32, got " + std::to_string(input_h) +
                        "x" + std::to_string(input_w));
  }
  if (base_width <= 0 || base_width % 2 != 0) throw InvalidConfig("base_width must be positive and even");
  if (blocks_per_stage < 1) throw InvalidConfig("blocks_per_stage must be >= 1");
  if (ffn_expansion < 1) throw InvalidConfig("ffn_expansion must be >= 1");
  normalize_stages(iscf_stages);
  for (int s = 1; s <= 4; ++s) stage_config(s).validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_h", c.input_h},
                     {"input_w", c.input_w},
                     {"base_width", c.base_width},
                     {"blocks_per_stage", c.blocks_per_stage},
                     {"iscf_stages", c.iscf_stages},
                     {"ffn_expansion", c.ffn_expansion},
                     {"heads", c.heads},
                     {"seed", c.seed},
                     {"attn_prenorm", c.attn_prenorm},
                     {"zero_init_fusion", c.zero_init_fusion}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw InvalidConfig("model config must be a JSON object");
  static const std::set<std::string> known = {"input_h",       "input_w", "base_width", "blocks_per_stage",
                                              "iscf_stages",   "ffn_expansion", "heads", "seed",
                                              "attn_prenorm", "zero_init_fusion"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidConfig("unknown model config key '" + key + "'");
  }
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig(std::string("model config key '") + key + "': " + e.what());
    }
  };
  read("input_h", c.input_h);
  read("input_w", c.input_w);
  read("base_width", c.base_width);
  read("blocks_per_stage", c.blocks_per_stage);
  read("iscf_stages", c.iscf_stages);
  read("ffn_expansion", c.ffn_expansion);
  read("heads", c.heads);
  read("seed", c.seed);
  read("attn_prenorm", c.attn_prenorm);
  read("zero_init_fusion", c.zero_init_fusion);
  c.iscf_stages = normalize_stages(c.iscf_stages);
}

void round_to_float(ParamStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& v = params.entries()[i].value;
    Buffer b(v.numel());
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = static_cast<double>(static_cast<float>(v[k]));
    params.set_value(i, Tensor(v.shape(), std::move(b)));
  }
}

ParamStore build(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ParamStore p;
  const auto widths = cfg.stage_widths();

  add_embed_params(p, "embed", 3, widths[0], EmbedConfig{}, rng);
  for (int s = 1; s <= 3; ++s) {
    const StageConfig sc = cfg.stage_config(s);
    for (int j = 0; j < cfg.blocks_per_stage; ++j) add_block_params(p, block_prefix(enc(s), j), sc, rng);
    add_merge_params(p, enc(s) + ".merge", sc.d_model, rng);
  }
  const StageConfig bottleneck = cfg.stage_config(4);
  for (int j = 0; j < cfg.blocks_per_stage; ++j) add_block_params(p, block_prefix("bottleneck", j), bottleneck, rng);

  for (int s = 3; s >= 1; --s) {
    const StageConfig sc = cfg.stage_config(s);
    const std::int64_t c = sc.d_model;
    add_expand_params(p, dec(s), 2 * c, rng);
    p.add(dec(s) + ".fuse.weight", trunc_normal(rng, {2 * c, c}));
    p.add(dec(s) + ".fuse.bias", Tensor::zeros({c}));
    for (int j = 0; j < cfg.blocks_per_stage; ++j) add_block_params(p, block_prefix(dec(s), j), sc, rng);
  }
  add_final_expand_params(p, "head", widths[0], rng);
  p.add("head.out.weight", trunc_normal(rng, {widths[0], 1}));
  p.add("head.out.bias", Tensor::zeros({1}));

  Rng fusion_rng(cfg.seed ^ kIscfStream);
  add_iscf_params(p, "iscf", cfg.iscf_geometry(), cfg.iscf_stages, fusion_rng, cfg.zero_init_fusion);
  round_to_float(p);
  return p;
}

std::int64_t closed_form_param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t d1 = cfg.base_width;
  const std::int64_t L = cfg.blocks_per_stage;
  std::int64_t n = 3 * 49 * d1 + d1 + 2 * d1;  // 7×7 embedding conv + LayerNorm
  for (std::int64_t c : cfg.stage_widths()) {
    n += 2 * L * block_count(c, cfg);           // encoder and decoder blocks
    n += 2 * 4 * c + 4 * c * 2 * c;             // merge: LN(4c) + 4c→2c
    n += 2 * c * 2 * (2 * c);                   // expand from 2c: 2c→4c
    n += 2 * c * c + c;                         // decoder concat projection
  }
  n += L * block_count(8 * d1, cfg);
  n += d1 * 16 * d1 + d1 + 1;                   // final ×4 expansion and 1-channel head
  return n + iscf_param_count(cfg.iscf_geometry(), cfg.iscf_stages);
}

ForwardArtifacts forward(const Tensor& img, const ParamStore& params, const ModelConfig& cfg) {
  if (img.rank() != 4 || img.dim(1) != 3 || img.dim(2) != cfg.input_h || img.dim(3) != cfg.input_w) {
    throw ShapeMismatch("model expects [b,3," + std::to_string(cfg.input_h) + "," +
                        std::to_string(cfg.input_w) + "], got " + shape_to_string(img.shape()));
  }
  ForwardArtifacts out;
  Tensor x = patch_embed(img, params, "embed");

  for (int s = 1; s <= 3; ++s) {
    const StageConfig sc = cfg.stage_config(s);
    AttentionTap tap;
    for (int j = 0; j < cfg.blocks_per_stage; ++j) {
      BlockOutput b = transformer_block(x, sc, params, block_prefix(enc(s), j));
      x = b.y;
      tap = b.tap;
    }
    tap.stage = s;
    out.taps.maps[s - 1] = tap;
    out.skips[s - 1] = x;
    out.stage_tokens[s - 1] = x.dim(1);
    x = patch_merge(x, sc.grid, params, enc(s) + ".merge");
  }

  const StageConfig bottleneck = cfg.stage_config(4);
  for (int j = 0; j < cfg.blocks_per_stage; ++j) {
    x = transformer_block(x, bottleneck, params, block_prefix("bottleneck", j)).y;
  }
  out.bottleneck_tokens = x.dim(1);

  if (cfg.iscf_stages.empty()) {
    out.enriched = out.skips;
  } else {
    out.enriched = iscf_forward(out.taps, out.skips, cfg.iscf_stages, cfg.iscf_geometry(), params, "iscf").skips;
  }

  for (int s = 3; s >= 1; --s) {
    const StageConfig sc = cfg.stage_config(s);
    x = patch_expand(x, cfg.grid(s + 1), params, dec(s));
    x = ops::concat({x, out.enriched[s - 1]}, -1);
    x = ops::linear(x, params.at(dec(s) + ".fuse.weight"), params.at(dec(s) + ".fuse.bias"));
    for (int j = 0; j < cfg.blocks_per_stage; ++j) {
      x = transformer_block(x, sc, params, block_prefix(dec(s), j)).y;
    }
  }

  x = final_expand4(x, cfg.grid(1), params, "head");
  x = ops::linear(x, params.at("head.out.weight"), params.at("head.out.bias"));
  out.logits = tokens_to_image(x, Grid{cfg.input_h, cfg.input_w});
  return out;
}

}  // namespace iscf
