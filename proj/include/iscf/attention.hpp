#pragma once

#include <cstdint>
#include <string>

#include "iscf/tensor.hpp"

namespace iscf {

class ParamStore;
class Rng;

struct AttentionConfig {
  std::int64_t d_model = 0;
  std::int64_t d_k = 0;
  std::int64_t d_v = 0;
  int heads = 1;

  /// d_k = d_model/2 and d_v = d_model.
  static AttentionConfig for_width(std::int64_t d_model, int heads = 1);
  void validate() const;
};

/// Normalized keys ρk(K) of one stage, exported for inter-scale fusion.
/// key_map is [b, n, d_k] (or [n, d_k]); every column sums to one over n.
struct AttentionTap {
  int stage = 0;
  Tensor key_map;
  std::int64_t token_count = 0;
};

struct EfficientAttentionResult {
  Tensor out;
  AttentionTap tap;
};

/// softmax(q·kᵀ·scale)·v over the trailing two axes. Materializes the n×n
/// score matrix; kept as the reference path and benchmark baseline.
Tensor standard_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);

/// ρq(Q)·(ρk(K)ᵀ·V) with ρq a softmax over channels (per token) and ρk a
/// softmax over tokens (per channel). Never forms an n×n buffer.
EfficientAttentionResult efficient_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Multi-head form: each head runs on its channel slice; outputs are
/// concatenated and, when heads > 1, projected back to d_model with
/// `<prefix>.proj.{weight,bias}`.
EfficientAttentionResult efficient_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const AttentionConfig& cfg, const ParamStore& params,
                                             const std::string& prefix);

/// (ρq(Q)·ρk(K)ᵀ)·V through the explicit n×n context. Same value as the
/// efficient path by associativity; used as its oracle.
Tensor explicit_context_attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct Qkv {
  Tensor q, k, v;
};

/// Bias-free projections `<prefix>.{q,k,v}.weight` of widths d_k, d_k, d_v.
Qkv make_qkv(const Tensor& x, const ParamStore& params, const std::string& prefix);

void add_attention_params(ParamStore& params, const std::string& prefix, const AttentionConfig& cfg,
                          Rng& rng);

}  // namespace iscf
