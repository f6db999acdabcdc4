#include "iscf/attention.hpp"

#include <vector>

#include "iscf/errors.hpp"
#include "iscf/ops.hpp"
#include "iscf/params.hpp"

namespace iscf {

AttentionConfig AttentionConfig::for_width(std::int64_t d_model, int heads) {
  AttentionConfig cfg{d_model, d_model / 2, d_model, heads};
  cfg.validate();
  return cfg;
}

void AttentionConfig::validate() const {
  if (d_model <= 0 || d_k <= 0 || d_v <= 0 || heads <= 0) {
    throw InvalidConfig("attention dims must be positive");
  }
  if (d_k % heads != 0 || d_v % heads != 0) {
    throw InvalidConfig("d_k=" + std::to_string(d_k) + " and d_v=" + std::to_string(d_v) +
                        " must be divisible by heads=" + std::to_string(heads));
  }
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() < 2 || q.rank() != k.rank() || k.rank() != v.rank()) {
    throw ShapeMismatch("attention operands must share rank >= 2");
  }
  if (q.dim(-1) != k.dim(-1)) {
    throw ShapeMismatch("q and k key widths differ: " + shape_to_string(q.shape()) + " vs " +
                        shape_to_string(k.shape()));
  }
  if (k.dim(-2) != v.dim(-2)) {
    throw ShapeMismatch("k and v token counts differ: " + shape_to_string(k.shape()) + " vs " +
                        shape_to_string(v.shape()));
  }
}

std::vector<int> swap_last_two(int rank) {
  std::vector<int> order(rank);
  for (int i = 0; i < rank; ++i) order[i] = i;
  std::swap(order[rank - 1], order[rank - 2]);
  return order;
}

}  // namespace

Tensor standard_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  check_qkv(q, k, v);
  const Tensor kt = ops::permute(k, swap_last_two(k.rank()));
  const Tensor scores = ops::scale(ops::matmul(q, kt), scale);
  return ops::matmul(ops::softmax(scores, -1), v);
}

EfficientAttentionResult efficient_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  check_qkv(q, k, v);
  const Tensor rho_k = ops::softmax(k, -2);
  const Tensor rho_q = ops::softmax(q, -1);
  const Tensor context = ops::matmul(ops::permute(rho_k, swap_last_two(k.rank())), v);  // d_k × d_v
  EfficientAttentionResult r;
  r.out = ops::matmul(rho_q, context);
  r.tap.key_map = rho_k;
  r.tap.token_count = k.dim(-2);
  return r;
}

EfficientAttentionResult efficient_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const AttentionConfig& cfg, const ParamStore& params,
                                             const std::string& prefix) {
  cfg.validate();
  if (q.dim(-1) != cfg.d_k || v.dim(-1) != cfg.d_v) {
    throw ShapeMismatch("attention operands do not match d_k=" + std::to_string(cfg.d_k) +
                        ", d_v=" + std::to_string(cfg.d_v));
  }
  if (cfg.heads == 1) return efficient_attention(q, k, v);

  const std::int64_t hk = cfg.d_k / cfg.heads, hv = cfg.d_v / cfg.heads;
  std::vector<Tensor> outs, maps;
  for (int h = 0; h < cfg.heads; ++h) {
    auto r = efficient_attention(ops::slice(q, -1, h * hk, hk), ops::slice(k, -1, h * hk, hk),
                                 ops::slice(v, -1, h * hv, hv));
    outs.push_back(r.out);
    maps.push_back(r.tap.key_map);
  }
  EfficientAttentionResult r;
  r.out = ops::linear(ops::concat(outs, -1), params.at(prefix + ".proj.weight"),
                      params.at(prefix + ".proj.bias"));
  r.tap.key_map = ops::concat(maps, -1);
  r.tap.token_count = k.dim(-2);
  return r;
}

Tensor explicit_context_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  check_qkv(q, k, v);
  const Tensor rho_k = ops::softmax(k, -2);
  const Tensor rho_q = ops::softmax(q, -1);
  const Tensor affinity = ops::matmul(rho_q, ops::permute(rho_k, swap_last_two(k.rank())));  // n × n
  return ops::matmul(affinity, v);
}

Qkv make_qkv(const Tensor& x, const ParamStore& params, const std::string& prefix) {
  return {ops::linear(x, params.at(prefix + ".q.weight")),
          ops::linear(x, params.at(prefix + ".k.weight")),
          ops::linear(x, params.at(prefix + ".v.weight"))};
}

void add_attention_params(ParamStore& params, const std::string& prefix, const AttentionConfig& cfg,
                          Rng& rng) {
  cfg.validate();
  params.add(prefix + ".q.weight", trunc_normal(rng, {cfg.d_model, cfg.d_k}));
  params.add(prefix + ".k.weight", trunc_normal(rng, {cfg.d_model, cfg.d_k}));
  params.add(prefix + ".v.weight", trunc_normal(rng, {cfg.d_model, cfg.d_v}));
  if (cfg.heads > 1) {
    params.add(prefix + ".proj.weight", trunc_normal(rng, {cfg.d_v, cfg.d_model}));
    params.add(prefix + ".proj.bias", Tensor::zeros({cfg.d_model}));
  }
}

}  // namespace iscf
