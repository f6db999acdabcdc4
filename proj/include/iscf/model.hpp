#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "iscf/iscf.hpp"
#include "iscf/params.hpp"
#include "iscf/patch_block.hpp"
#include "iscf/tensor.hpp"

namespace iscf {

/// Network hyper-parameters. Stage widths are [d1, 2d1, 4d1] with an 8d1
/// bottleneck; token grids are H/4, H/8, H/16 and H/32 of the input.
struct ModelConfig {
  std::int64_t input_h = 64;
  std::int64_t input_w = 64;
  std::int64_t base_width = 16;
  int blocks_per_stage = 2;
  StageSet iscf_stages = {1, 2, 3};
  int ffn_expansion = 4;
  int heads = 1;
  std::uint64_t seed = 0;
  bool attn_prenorm = false;
  bool zero_init_fusion = true;

  void validate() const;

  std::array<std::int64_t, 3> stage_widths() const { return {base_width, 2 * base_width, 4 * base_width}; }
  std::int64_t bottleneck_width() const { return 8 * base_width; }
  /// Encoder grid of stage s ∈ {1,2,3}; s = 4 is the bottleneck grid.
  Grid grid(int stage) const;
  StageConfig stage_config(int stage) const;
  IscfGeometry iscf_geometry() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
/// Strict: unknown keys and wrong types raise InvalidConfig.
void from_json(const nlohmann::json& j, ModelConfig& cfg);

/// Seeded parameter store. ISCF parameters are registered last from their
/// own generator stream, so every other parameter is independent of which
/// fusion stages are enabled. Values are rounded to float32 precision so a
/// checkpoint reproduces them exactly.
ParamStore build(const ModelConfig& cfg);

/// Parameter count derived from the configuration alone.
std::int64_t closed_form_param_count(const ModelConfig& cfg);

struct ForwardArtifacts {
  Tensor logits;  // [b, 1, H, W]
  ScaleMapSet taps;
  std::array<Tensor, 3> skips;     // encoder features before fusion
  std::array<Tensor, 3> enriched;  // after fusion (same tensors when disabled)
  std::array<std::int64_t, 3> stage_tokens{};
  std::int64_t bottleneck_tokens = 0;
};

ForwardArtifacts forward(const Tensor& img, const ParamStore& params, const ModelConfig& cfg);

/// Rounds every parameter to the nearest float32 value.
void round_to_float(ParamStore& params);

struct Checkpoint {
  ParamStore params;
  ModelConfig config;
};

void save_checkpoint(const ParamStore& params, const ModelConfig& cfg, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and checks every stored parameter against a store built from `cfg`.
ParamStore load_checkpoint_into(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace iscf
