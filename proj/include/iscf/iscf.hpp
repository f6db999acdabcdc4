#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "iscf/attention.hpp"
#include "iscf/tensor.hpp"

namespace iscf {

class ParamStore;
class Rng;

/// Per-stage extents that size the fusion module: token counts n_s, key
/// widths d_s (= c_s/2) and full stage widths c_s, for stages 1..3.
struct IscfGeometry {
  std::array<std::int64_t, 3> tokens{};
  std::array<std::int64_t, 3> key_dims{};
  std::array<std::int64_t, 3> widths{};

  std::int64_t n_ref() const { return tokens[2]; }
  std::int64_t d_ref() const { return key_dims[2]; }
};

/// Sorted, duplicate-free subset of {1,2,3}. Throws InvalidConfig otherwise.
using StageSet = std::vector<int>;
StageSet normalize_stages(StageSet stages);

/// One tap per stage; reference extents come from stage 3.
struct ScaleMapSet {
  std::array<AttentionTap, 3> maps;

  std::int64_t n_ref() const { return maps[2].token_count; }
  std::int64_t d_ref() const { return maps[2].key_map.dim(-1); }
  void validate() const;
};

/// Three (or |stages|) scaling factors in (0, 1), shaped [b, m].
struct FusionWeights {
  Tensor w;
};

/// Stage 1/2: token-axis linear n_s → n_ref, then channel linear d_s → d_ref.
/// Stage 3: returned unchanged. Output [b, n_ref, d_ref].
Tensor remap_to_reference(const AttentionTap& tap, const IscfGeometry& geo, const ParamStore& params,
                          const std::string& prefix);

/// Global average of each map, concatenated: [b, m].
Tensor global_descriptor(const std::vector<Tensor>& maps);

/// linear m→4m, GELU, linear 4m→m, sigmoid.
FusionWeights fusion_weights(const Tensor& descriptor, const ParamStore& params, const std::string& prefix);

/// Scales map_s by w_s, stacks to [b, m, n_ref, d_ref] and applies the m→1
/// channel 1×1 convolution (plus bias). Output [b, n_ref, d_ref].
Tensor fuse(const std::vector<Tensor>& maps, const Tensor& weights, const ParamStore& params,
            const std::string& prefix);

/// Token-axis linear n_ref → n_s, then channel linear d_ref → c_s.
Tensor redistribute(const Tensor& fused, int stage, const IscfGeometry& geo, const ParamStore& params,
                    const std::string& prefix);

struct IscfOutput {
  std::array<Tensor, 3> skips;
  Tensor descriptor;
  Tensor weights;
  Tensor fused;
};

/// skip_s + redistribute(fuse(...), s) for each enabled stage; other skips
/// are returned as the same tensors.
IscfOutput iscf_forward(const ScaleMapSet& taps, const std::array<Tensor, 3>& skips,
                        const StageSet& stages, const IscfGeometry& geo, const ParamStore& params,
                        const std::string& prefix);

/// Registers every fusion parameter. The fusion convolution starts at zero
/// unless `zero_init_fusion` is false; all biases start at zero.
void add_iscf_params(ParamStore& params, const std::string& prefix, const IscfGeometry& geo,
                     const StageSet& stages, Rng& rng, bool zero_init_fusion = true);

/// Closed-form count of the parameters added by add_iscf_params.
std::int64_t iscf_param_count(const IscfGeometry& geo, const StageSet& stages);

}  // namespace iscf
