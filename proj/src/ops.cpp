#include "iscf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iscf/autodiff.hpp"
#include "iscf/errors.hpp"

namespace iscf::ops {

namespace {

using Index = std::int64_t;

std::vector<Index> strides_of(const Shape& shape) {
  std::vector<Index> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

Index prod(const Shape& shape, std::size_t from, std::size_t to) {
  Index n = 1;
  for (std::size_t i = from; i < to; ++i) n *= shape[i];
  return n;
}

// Strides for reading `in` while iterating over `out` (numpy broadcasting).
std::vector<Index> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<Index> result(out.size(), 0);
  const auto in_strides = strides_of(in);
  const std::size_t offset = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    result[offset + i] = in[i] == 1 ? 0 : in_strides[i];
  }
  return result;
}

// Odometer over `shape` calling fn(linear_out, off_a, off_b).
template <typename Fn>
void for_each_broadcast(const Shape& shape, const std::vector<Index>& sa,
                        const std::vector<Index>& sb, Fn&& fn) {
  const Index total = shape_numel(shape);
  const std::size_t r = shape.size();
  if (r == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<Index> idx(r, 0);
  Index oa = 0, ob = 0;
  const Index last = shape[r - 1];
  const Index la = sa[r - 1], lb = sb[r - 1];
  for (Index lin = 0; lin < total; lin += last) {
    Index a = oa, b = ob;
    for (Index j = 0; j < last; ++j, a += la, b += lb) fn(lin + j, a, b);
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < shape[d]) break;
      oa -= sa[d] * shape[d];
      ob -= sb[d] * shape[d];
      idx[d] = 0;
    }
  }
}

// C[m,n] += A[m,k]·B[k,n]
void gemm_nn(const double* A, const double* B, double* C, Index m, Index k, Index n) {
  for (Index i = 0; i < m; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (Index p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const double* b = B + p * n;
      for (Index j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,k] += G[m,n]·B[k,n]ᵀ
void gemm_nt(const double* G, const double* B, double* C, Index m, Index n, Index k) {
  for (Index i = 0; i < m; ++i) {
    const double* g = G + i * n;
    double* c = C + i * k;
    for (Index p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double acc = 0.0;
      for (Index j = 0; j < n; ++j) acc += g[j] * b[j];
      c[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]ᵀ·G[m,n]
void gemm_tn(const double* A, const double* G, double* C, Index m, Index k, Index n) {
  for (Index i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* g = G + i * n;
    for (Index p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      double* c = C + p * n;
      for (Index j = 0; j < n; ++j) c[j] += av * g[j];
    }
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeMismatch(msg);
}

Tensor from_buffer(Shape shape, Buffer data) { return Tensor(std::move(shape), std::move(data)); }

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Index da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const Index db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeMismatch("cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && b.rank() >= 2, "matmul needs rank >= 2 operands, got " +
                                              shape_to_string(a.shape()) + " and " +
                                              shape_to_string(b.shape()));
  const Index m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  require(k == k2, "matmul inner extents differ: " + shape_to_string(a.shape()) + " · " +
                       shape_to_string(b.shape()));
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shapes(batch_a, batch_b);
  const auto sa = broadcast_strides(batch_a, batch);
  const auto sb = broadcast_strides(batch_b, batch);

  // Offsets of each batch slice, in units of whole matrices.
  std::vector<Index> off_a, off_b;
  for_each_broadcast(batch, sa, sb, [&](Index, Index oa, Index ob) {
    off_a.push_back(oa);
    off_b.push_back(ob);
  });

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Buffer out(static_cast<std::size_t>(shape_numel(out_shape)), 0.0);
  const double* A = a.raw();
  const double* B = b.raw();
  for (std::size_t bi = 0; bi < off_a.size(); ++bi) {
    gemm_nn(A + off_a[bi] * m * k, B + off_b[bi] * k * n, out.data() + bi * m * n, m, k, n);
  }

  return make_result("matmul", from_buffer(out_shape, std::move(out)), {&a, &b},
                     [a = a.detach(), b = b.detach(), off_a, off_b, m, k, n](
                         const Buffer& g, std::vector<Buffer>& gin) {
                       for (std::size_t bi = 0; bi < off_a.size(); ++bi) {
                         const double* gb = g.data() + bi * m * n;
                         if (!gin[0].empty()) {
                           gemm_nt(gb, b.raw() + off_b[bi] * k * n, gin[0].data() + off_a[bi] * m * k,
                                   m, n, k);
                         }
                         if (!gin[1].empty()) {
                           gemm_tn(a.raw() + off_a[bi] * m * k, gb, gin[1].data() + off_b[bi] * k * n,
                                   m, k, n);
                         }
                       }
                     });
}

// ---------------------------------------------------------------- softmax

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank());
  const Index outer = prod(x.shape(), 0, ax);
  const Index len = x.shape()[ax];
  const Index inner = prod(x.shape(), ax + 1, x.shape().size());
  Buffer y(x.numel());
  const double* X = x.raw();
  std::vector<double> acc(inner);
  for (Index o = 0; o < outer; ++o) {
    const Index base = o * len * inner;
    std::fill(acc.begin(), acc.end(), -std::numeric_limits<double>::infinity());
    for (Index a = 0; a < len; ++a) {
      const double* row = X + base + a * inner;
      for (Index i = 0; i < inner; ++i) acc[i] = std::max(acc[i], row[i]);
    }
    std::vector<double> total(inner, 0.0);
    for (Index a = 0; a < len; ++a) {
      const double* row = X + base + a * inner;
      double* out = y.data() + base + a * inner;
      for (Index i = 0; i < inner; ++i) {
        out[i] = std::exp(row[i] - acc[i]);
        total[i] += out[i];
      }
    }
    for (Index a = 0; a < len; ++a) {
      double* out = y.data() + base + a * inner;
      for (Index i = 0; i < inner; ++i) out[i] /= total[i];
    }
  }
  Tensor result = from_buffer(x.shape(), std::move(y));
  return make_result("softmax", result, {&x},
                     [y = result, outer, len, inner](const Buffer& g, std::vector<Buffer>& gin) {
                       const double* Y = y.raw();
                       std::vector<double> dot(inner);
                       for (Index o = 0; o < outer; ++o) {
                         const Index base = o * len * inner;
                         std::fill(dot.begin(), dot.end(), 0.0);
                         for (Index a = 0; a < len; ++a) {
                           for (Index i = 0; i < inner; ++i) {
                             dot[i] += g[base + a * inner + i] * Y[base + a * inner + i];
                           }
                         }
                         for (Index a = 0; a < len; ++a) {
                           for (Index i = 0; i < inner; ++i) {
                             const Index at = base + a * inner + i;
                             gin[0][at] += Y[at] * (g[at] - dot[i]);
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------- layer_norm

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.rank() >= 1, "layer_norm needs rank >= 1");
  const Index d = x.dim(-1);
  require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
          "layer_norm gamma/beta must have extent " + std::to_string(d) + ", got " +
              shape_to_string(gamma.shape()) + " and " + shape_to_string(beta.shape()));
  const Index rows = static_cast<Index>(x.numel()) / d;
  Buffer y(x.numel());
  Buffer xhat(x.numel());
  Buffer rstd(rows);
  const double* X = x.raw();
  const double* G = gamma.raw();
  const double* B = beta.raw();
  for (Index r = 0; r < rows; ++r) {
    const double* row = X + r * d;
    double mu = 0.0;
    for (Index j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (Index j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (Index j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      xhat[r * d + j] = h;
      y[r * d + j] = h * G[j] + B[j];
    }
  }
  return make_result(
      "layer_norm", from_buffer(x.shape(), std::move(y)), {&x, &gamma, &beta},
      [xhat = std::move(xhat), rstd = std::move(rstd), gamma = gamma.detach(), rows, d](
          const Buffer& g, std::vector<Buffer>& gin) {
        const double* G = gamma.raw();
        std::vector<double> dh(d);
        for (Index r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* hr = xhat.data() + r * d;
          if (!gin[0].empty()) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (Index j = 0; j < d; ++j) {
              dh[j] = gr[j] * G[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * hr[j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (Index j = 0; j < d; ++j) {
              gin[0][r * d + j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
            }
          }
          if (!gin[1].empty()) {
            for (Index j = 0; j < d; ++j) gin[1][j] += gr[j] * hr[j];
          }
          if (!gin[2].empty()) {
            for (Index j = 0; j < d; ++j) gin[2][j] += gr[j];
          }
        }
      });
}

// ---------------------------------------------------------------- conv2d

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
  require(x.rank() == 4, "conv2d input must be [b,c,h,w], got " + shape_to_string(x.shape()));
  require(w.rank() == 4, "conv2d weight must be [c_out,c_in/groups,kh,kw], got " +
                             shape_to_string(w.shape()));
  require(opt.stride >= 1 && opt.pad >= 0 && opt.groups >= 1, "conv2d: invalid stride/pad/groups");
  const Index nb = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), cin_g = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const Index groups = opt.groups;
  require(cin % groups == 0 && cout % groups == 0,
          "conv2d: channels " + std::to_string(cin) + "->" + std::to_string(cout) +
              " not divisible by groups " + std::to_string(groups));
  require(cin_g == cin / groups, "conv2d weight " + shape_to_string(w.shape()) +
                                     " does not match input channels " + std::to_string(cin));
  const bool has_bias = !bias.empty();
  if (has_bias) {
    require(bias.rank() == 1 && bias.dim(0) == cout,
            "conv2d bias must be [" + std::to_string(cout) + "], got " + shape_to_string(bias.shape()));
  }
  if (h + 2 * opt.pad < kh || wd + 2 * opt.pad < kw) {
    throw NonIntegralOutputExtent("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                  " does not fit padded input " + shape_to_string(x.shape()));
  }
  const Index oh = (h + 2 * opt.pad - kh) / opt.stride + 1;
  const Index ow = (wd + 2 * opt.pad - kw) / opt.stride + 1;
  const Index cout_g = cout / groups;
  const Index s = opt.stride, pad = opt.pad;

  Buffer out(static_cast<std::size_t>(nb * cout * oh * ow), 0.0);
  const double* X = x.raw();
  const double* W = w.raw();
  for (Index b = 0; b < nb; ++b) {
    for (Index co = 0; co < cout; ++co) {
      const Index g = co / cout_g;
      double* o = out.data() + ((b * cout + co) * oh) * ow;
      if (has_bias) std::fill(o, o + oh * ow, bias[co]);
      for (Index ci = 0; ci < cin_g; ++ci) {
        const double* xp = X + ((b * cin + g * cin_g + ci) * h) * wd;
        for (Index ky = 0; ky < kh; ++ky) {
          for (Index kx = 0; kx < kw; ++kx) {
            const double wv = W[((co * cin_g + ci) * kh + ky) * kw + kx];
            for (Index oy = 0; oy < oh; ++oy) {
              const Index iy = oy * s - pad + ky;
              if (iy < 0 || iy >= h) continue;
              const double* xr = xp + iy * wd;
              double* orow = o + oy * ow;
              for (Index ox = 0; ox < ow; ++ox) {
                const Index ix = ox * s - pad + kx;
                if (ix < 0 || ix >= wd) continue;
                orow[ox] += wv * xr[ix];
              }
            }
          }
        }
      }
    }
  }

  return make_result(
      "conv2d", from_buffer({nb, cout, oh, ow}, std::move(out)), {&x, &w, &bias},
      [x = x.detach(), w = w.detach(), nb, cin, h, wd, cout, cin_g, cout_g, kh, kw, oh, ow, s,
       pad](const Buffer& g, std::vector<Buffer>& gin) {
        const double* X = x.raw();
        const double* W = w.raw();
        const bool want_x = !gin[0].empty();
        const bool want_w = !gin[1].empty();
        for (Index b = 0; b < nb; ++b) {
          for (Index co = 0; co < cout; ++co) {
            const Index grp = co / cout_g;
            const double* gp = g.data() + ((b * cout + co) * oh) * ow;
            if (!gin[2].empty()) {
              double acc = 0.0;
              for (Index i = 0; i < oh * ow; ++i) acc += gp[i];
              gin[2][co] += acc;
            }
            for (Index ci = 0; ci < cin_g; ++ci) {
              const Index plane = ((b * cin + grp * cin_g + ci) * h) * wd;
              for (Index ky = 0; ky < kh; ++ky) {
                for (Index kx = 0; kx < kw; ++kx) {
                  const Index widx = ((co * cin_g + ci) * kh + ky) * kw + kx;
                  const double wv = W[widx];
                  double dw = 0.0;
                  for (Index oy = 0; oy < oh; ++oy) {
                    const Index iy = oy * s - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* grow = gp + oy * ow;
                    for (Index ox = 0; ox < ow; ++ox) {
                      const Index ix = ox * s - pad + kx;
                      if (ix < 0 || ix >= wd) continue;
                      const Index at = plane + iy * wd + ix;
                      if (want_x) gin[0][at] += grow[ox] * wv;
                      dw += grow[ox] * X[at];
                    }
                  }
                  if (want_w) gin[1][widx] += dw;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------- linear

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require(x.rank() >= 1 && w.rank() == 2, "linear: bad ranks " + shape_to_string(x.shape()) +
                                              " and " + shape_to_string(w.shape()));
  const Index din = w.dim(0), dout = w.dim(1);
  require(x.dim(-1) == din, "linear: input " + shape_to_string(x.shape()) + " vs weight " +
                                shape_to_string(w.shape()));
  const bool has_bias = !bias.empty();
  if (has_bias) {
    require(bias.rank() == 1 && bias.dim(0) == dout,
            "linear: bias " + shape_to_string(bias.shape()) + " vs d_out " + std::to_string(dout));
  }
  const Index rows = static_cast<Index>(x.numel()) / din;
  Buffer out(static_cast<std::size_t>(rows * dout), 0.0);
  if (has_bias) {
    for (Index r = 0; r < rows; ++r) std::copy(bias.raw(), bias.raw() + dout, out.data() + r * dout);
  }
  gemm_nn(x.raw(), w.raw(), out.data(), rows, din, dout);
  Shape shape = x.shape();
  shape.back() = dout;
  return make_result("linear", from_buffer(shape, std::move(out)), {&x, &w, &bias},
                     [x = x.detach(), w = w.detach(), rows, din, dout](const Buffer& g,
                                                                      std::vector<Buffer>& gin) {
                       if (!gin[0].empty()) gemm_nt(g.data(), w.raw(), gin[0].data(), rows, dout, din);
                       if (!gin[1].empty()) gemm_tn(x.raw(), g.data(), gin[1].data(), rows, din, dout);
                       if (!gin[2].empty()) {
                         for (Index r = 0; r < rows; ++r) {
                           for (Index j = 0; j < dout; ++j) gin[2][j] += g[r * dout + j];
                         }
                       }
                     });
}

// ---------------------------------------------------------------- elementwise

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  Buffer out(static_cast<std::size_t>(shape_numel(out_shape)));
  const double* A = a.raw();
  const double* B = b.raw();
  const bool same = a.shape() == b.shape();
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      case BinaryKind::kMul: return x * y;
    }
    return 0.0;
  };
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(A[i], B[i]);
  } else {
    for_each_broadcast(out_shape, sa, sb,
                       [&](Index i, Index ia, Index ib) { out[i] = apply(A[ia], B[ib]); });
  }
  return make_result(
      name, from_buffer(out_shape, std::move(out)), {&a, &b},
      [a = a.detach(), b = b.detach(), out_shape, sa, sb, kind, same](const Buffer& g,
                                                                     std::vector<Buffer>& gin) {
        const double* A = a.raw();
        const double* B = b.raw();
        const double sign_b = kind == BinaryKind::kSub ? -1.0 : 1.0;
        auto step = [&](Index i, Index ia, Index ib) {
          if (kind == BinaryKind::kMul) {
            if (!gin[0].empty()) gin[0][ia] += g[i] * B[ib];
            if (!gin[1].empty()) gin[1][ib] += g[i] * A[ia];
          } else {
            if (!gin[0].empty()) gin[0][ia] += g[i];
            if (!gin[1].empty()) gin[1][ib] += sign_b * g[i];
          }
        };
        if (same) {
          for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
        } else {
          for_each_broadcast(out_shape, sa, sb, step);
        }
      });
}

template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F f, D dfdx) {
  Buffer out(x.numel());
  const double* X = x.raw();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(X[i]);
  Tensor y = from_buffer(x.shape(), std::move(out));
  return make_result(name, y, {&x},
                     [x = x.detach(), y, dfdx](const Buffer& g, std::vector<Buffer>& gin) {
                       const double* X = x.raw();
                       const double* Y = y.raw();
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * dfdx(X[i], Y[i]);
                     });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------- reductions

namespace {

Tensor reduce_sum(const Tensor& x, std::vector<int> axes, double factor, const char* name) {
  std::vector<bool> reduced(x.rank(), false);
  for (int& a : axes) {
    a = normalize_axis(a, x.rank());
    if (reduced[a]) throw AxisError(std::string(name) + ": duplicate axis " + std::to_string(a));
    reduced[a] = true;
  }
  Shape out_shape;
  for (int i = 0; i < x.rank(); ++i) {
    if (!reduced[i]) out_shape.push_back(x.shape()[i]);
  }
  // Iterate over the input; map each element to its output slot.
  const auto out_strides = strides_of(out_shape);
  std::vector<Index> map(x.rank(), 0);
  for (int i = 0, j = 0; i < x.rank(); ++i) {
    if (!reduced[i]) map[i] = out_strides[j++];
  }
  const std::vector<Index> zero(x.rank(), 0);
  Buffer out(static_cast<std::size_t>(shape_numel(out_shape)), 0.0);
  const double* X = x.raw();
  if (x.rank() == 0) {
    out[0] = X[0] * factor;
  } else {
    for_each_broadcast(x.shape(), map, zero, [&](Index i, Index o, Index) { out[o] += X[i]; });
    if (factor != 1.0) {
      for (auto& v : out) v *= factor;
    }
  }
  return make_result(name, from_buffer(out_shape, std::move(out)), {&x},
                     [shape = x.shape(), map, zero, factor](const Buffer& g, std::vector<Buffer>& gin) {
                       if (shape.empty()) {
                         gin[0][0] += g[0] * factor;
                         return;
                       }
                       for_each_broadcast(shape, map, zero,
                                          [&](Index i, Index o, Index) { gin[0][i] += g[o] * factor; });
                     });
}

std::vector<int> all_axes(const Tensor& x) {
  std::vector<int> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}

}  // namespace

Tensor sum(const Tensor& x, std::vector<int> axes) { return reduce_sum(x, std::move(axes), 1.0, "sum"); }
Tensor sum(const Tensor& x) { return sum(x, all_axes(x)); }

Tensor mean(const Tensor& x, std::vector<int> axes) {
  Index count = 1;
  for (int a : axes) count *= x.shape()[normalize_axis(a, x.rank())];
  return reduce_sum(x, std::move(axes), 1.0 / static_cast<double>(count), "mean");
}
Tensor mean(const Tensor& x) { return mean(x, all_axes(x)); }

// ---------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor view = x.detach().reshaped(std::move(shape));
  return make_result("reshape", view, {&x}, [](const Buffer& g, std::vector<Buffer>& gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  });
}

Tensor permute(const Tensor& x, std::vector<int> order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) {
    throw InvalidPermutation("permutation of length " + std::to_string(order.size()) +
                             " for rank " + std::to_string(r));
  }
  std::vector<bool> seen(r, false);
  for (int& o : order) {
    if (o < -r || o >= r) throw InvalidPermutation("permutation entry out of range");
    if (o < 0) o += r;
    if (seen[o]) throw InvalidPermutation("permutation repeats axis " + std::to_string(o));
    seen[o] = true;
  }
  const auto in_strides = strides_of(x.shape());
  Shape out_shape(r);
  std::vector<Index> gather(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[order[i]];
    gather[i] = in_strides[order[i]];
  }
  const std::vector<Index> zero(r, 0);
  Buffer out(x.numel());
  const double* X = x.raw();
  if (r == 0) {
    out[0] = X[0];
  } else {
    for_each_broadcast(out_shape, gather, zero, [&](Index i, Index src, Index) { out[i] = X[src]; });
  }
  return make_result("permute", from_buffer(out_shape, std::move(out)), {&x},
                     [out_shape, gather, zero](const Buffer& g, std::vector<Buffer>& gin) {
                       if (out_shape.empty()) {
                         gin[0][0] += g[0];
                         return;
                       }
                       for_each_broadcast(out_shape, gather, zero,
                                          [&](Index i, Index src, Index) { gin[0][src] += g[i]; });
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  const int ax = normalize_axis(axis, static_cast<int>(ref.size()));
  Index along = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == static_cast<int>(ref.size());
    for (int i = 0; ok && i < p.rank(); ++i) ok = i == ax || p.shape()[i] == ref[i];
    if (!ok) {
      throw ShapeMismatch("concat: " + shape_to_string(p.shape()) + " incompatible with " +
                          shape_to_string(ref) + " along axis " + std::to_string(ax));
    }
    along += p.shape()[ax];
  }
  Shape out_shape = ref;
  out_shape[ax] = along;
  const Index outer = prod(ref, 0, ax);
  const Index inner = prod(ref, ax + 1, ref.size());
  Buffer out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<Index> chunk;  // per-part block length (extent·inner)
  for (const auto& p : parts) chunk.push_back(p.shape()[ax] * inner);
  const Index row = along * inner;
  for (Index o = 0; o < outer; ++o) {
    Index at = o * row;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].raw() + o * chunk[k];
      std::copy(src, src + chunk[k], out.data() + at);
      at += chunk[k];
    }
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return make_result("concat", from_buffer(out_shape, std::move(out)), inputs,
                     [chunk, outer, row](const Buffer& g, std::vector<Buffer>& gin) {
                       for (Index o = 0; o < outer; ++o) {
                         Index at = o * row;
                         for (std::size_t k = 0; k < chunk.size(); ++k) {
                           if (!gin[k].empty()) {
                             double* dst = gin[k].data() + o * chunk[k];
                             for (Index j = 0; j < chunk[k]; ++j) dst[j] += g[at + j];
                           }
                           at += chunk[k];
                         }
                       }
                     });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int ax = normalize_axis(axis, x.rank());
  const Index extent = x.shape()[ax];
  if (start < 0 || length <= 0 || start + length > extent) {
    throw ShapeMismatch("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                        ") out of range for extent " + std::to_string(extent));
  }
  const Index outer = prod(x.shape(), 0, ax);
  const Index inner = prod(x.shape(), ax + 1, x.shape().size());
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  Buffer out(static_cast<std::size_t>(shape_numel(out_shape)));
  const Index src_row = extent * inner, dst_row = length * inner, skip = start * inner;
  for (Index o = 0; o < outer; ++o) {
    const double* src = x.raw() + o * src_row + skip;
    std::copy(src, src + dst_row, out.data() + o * dst_row);
  }
  return make_result("slice", from_buffer(out_shape, std::move(out)), {&x},
                     [outer, src_row, dst_row, skip](const Buffer& g, std::vector<Buffer>& gin) {
                       for (Index o = 0; o < outer; ++o) {
                         double* dst = gin[0].data() + o * src_row + skip;
                         for (Index j = 0; j < dst_row; ++j) dst[j] += g[o * dst_row + j];
                       }
                     });
}

// ---------------------------------------------------------------- loss

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  require(logits.shape() == target.shape(), "bce: logits " + shape_to_string(logits.shape()) +
                                                " vs target " + shape_to_string(target.shape()));
  const double* Z = logits.raw();
  const double* T = target.raw();
  const std::size_t n = logits.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = Z[i];
    total += std::max(z, 0.0) - z * T[i] + std::log1p(std::exp(-std::abs(z)));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return make_result("bce_with_logits", Tensor::scalar(total * inv_n), {&logits, &target},
                     [z = logits.detach(), t = target.detach(), inv_n](const Buffer& g,
                                                                      std::vector<Buffer>& gin) {
                       const double* Z = z.raw();
                       const double* T = t.raw();
                       for (std::size_t i = 0; i < z.numel(); ++i) {
                         const double p = stable_sigmoid(Z[i]);
                         if (!gin[0].empty()) gin[0][i] += g[0] * (p - T[i]) * inv_n;
                         // d/dt = -z / n
                         if (!gin[1].empty()) gin[1][i] += -g[0] * Z[i] * inv_n;
                       }
                     });
}

}  // namespace iscf::ops
