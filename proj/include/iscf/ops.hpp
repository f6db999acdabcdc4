#pragma once

#include <optional>
#include <span>
#include <vector>

#include "iscf/tensor.hpp"

// Differentiable primitives. Every function returns a fresh tensor and, when
// an active tape tracks any input, records a backward rule on that tape.
namespace iscf::ops {

/// Batched matrix product over the trailing two axes. Leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Softmax along `axis`, computed after subtracting the per-slice maximum.
Tensor softmax(const Tensor& x, int axis);

/// Normalizes over the last axis, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

/// Direct cross-correlation. x: [b, c_in, h, w], w: [c_out, c_in/groups, kh, kw],
/// bias: [c_out] or an empty tensor. Output extents use floor division.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt = {});

/// x·w + bias over the trailing axis. w: [d_in, d_out]; bias may be empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

// Elementwise family. Binary kinds use numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// tanh approximation: 0.5·x·(1 + tanh(sqrt(2/pi)·(x + 0.044715·x³))).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Reductions remove the listed axes. Reducing every axis yields shape [].
Tensor sum(const Tensor& x, std::vector<int> axes);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x, std::vector<int> axes);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::vector<int> order);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Elements [start, start+length) along `axis`.
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);

/// Mean binary cross-entropy from logits: max(z,0) − z·t + log(1+exp(−|z|)).
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

/// Shape produced by broadcasting `a` against `b`; throws ShapeMismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace iscf::ops
