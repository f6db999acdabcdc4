#pragma once

#include <cstdint>
#include <string>

#include "iscf/attention.hpp"
#include "iscf/tensor.hpp"

namespace iscf {

class ParamStore;
class Rng;

/// Token lattice extents. Tokens are stored row-major: index = y·w + x.
struct Grid {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t tokens() const { return h * w; }
  bool operator==(const Grid&) const = default;
};

struct StageConfig {
  std::int64_t d_model = 0;
  Grid grid;
  int blocks_per_stage = 2;
  int ffn_expansion = 4;
  int heads = 1;
  /// Adds a LayerNorm in front of attention. Off: attention sees x as is.
  bool attn_prenorm = false;

  AttentionConfig attention() const { return AttentionConfig::for_width(d_model, heads); }
  void validate() const;
};

/// Overlapping patch embedding geometry. Defaults: kernel 7, stride 4, pad 3.
struct EmbedConfig {
  int kernel = 7;
  int stride = 4;
  int pad = 3;
  bool normalize = true;
};

// Layout helpers between token sequences [b, h·w, c] and images [b, c, h, w].
Tensor tokens_to_image(const Tensor& x, Grid grid);
Tensor image_to_tokens(const Tensor& x);

/// img [b,3,H,W] → tokens [b, (H/4)·(W/4), d]. H and W must be multiples of 32.
Tensor patch_embed(const Tensor& img, const ParamStore& params, const std::string& prefix,
                   const EmbedConfig& cfg = {});

/// Gathers each 2×2 neighbourhood into one 4c vector ordered top-left,
/// top-right, bottom-left, bottom-right. [b,n,c] → [b,n/4,4c].
Tensor merge_gather(const Tensor& x, Grid grid);
/// Inverse layout of merge_gather generalized to f×f: [b,n,f²c] → [b,f²n,c].
Tensor expand_scatter(const Tensor& x, Grid grid, int factor);

/// merge_gather, LayerNorm(4c), bias-free linear 4c → 2c.
Tensor patch_merge(const Tensor& x, Grid grid, const ParamStore& params, const std::string& prefix);
/// Bias-free linear c → 2c, then expand_scatter(·, 2): [b,n,c] → [b,4n,c/2].
Tensor patch_expand(const Tensor& x, Grid grid, const ParamStore& params, const std::string& prefix);
/// Bias-free linear c → 16c, then expand_scatter(·, 4): [b,n,c] → [b,16n,c].
Tensor final_expand4(const Tensor& x, Grid grid, const ParamStore& params, const std::string& prefix);

/// linear c→rc, depthwise 3×3 conv on the grid, GELU, linear rc→c.
Tensor mix_ffn(const Tensor& x, Grid grid, const ParamStore& params, const std::string& prefix);

struct BlockOutput {
  Tensor y;
  AttentionTap tap;
};

/// X₁ = E(Q,K,V) + X;  X' = MixFFN(LN(X₁)) + X₁.
BlockOutput transformer_block(const Tensor& x, const StageConfig& cfg, const ParamStore& params,
                              const std::string& prefix);

void add_embed_params(ParamStore& params, const std::string& prefix, std::int64_t in_channels,
                      std::int64_t width, const EmbedConfig& cfg, Rng& rng);
void add_merge_params(ParamStore& params, const std::string& prefix, std::int64_t channels, Rng& rng);
void add_expand_params(ParamStore& params, const std::string& prefix, std::int64_t channels, Rng& rng);
void add_final_expand_params(ParamStore& params, const std::string& prefix, std::int64_t channels,
                             Rng& rng);
void add_mix_ffn_params(ParamStore& params, const std::string& prefix, std::int64_t channels,
                        int expansion, Rng& rng);
void add_block_params(ParamStore& params, const std::string& prefix, const StageConfig& cfg, Rng& rng);

}  // namespace iscf
