// Copyright 2026 The advkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "op_common.hpp"

namespace advkit {

using detail::accumulate;
using detail::finish_op;

namespace {

DType common_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw DimensionError(std::string(op) + ": mixed dtypes");
  return a.dtype();
}

// Axis bookkeeping for reductions/sorts: treat the tensor as
// [outer, len, inner] around `axis`.
struct AxisView {
  int64_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw DimensionError(std::string(op) + ": axis out of range for shape " +
                         shape_str(s));
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  v.len = s[axis];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) v.inner *= s[i];
  return v;
}

Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + axis);
    if (out.empty()) out = {1};
  }
  return out;
}

// Broadcast plan for elementwise binary ops: equal shapes, scalars, or
// equal-rank shapes with 1s on the broadcast dims.
struct BcPlan {
  Shape out;
  std::vector<int64_t> stride_a, stride_b;
  bool trivial = false;  // identical shapes, no index arithmetic needed
};

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

BcPlan broadcast_plan(const Tensor& a, const Tensor& b, const char* op) {
  BcPlan p;
  if (a.shape() == b.shape()) {
    p.out = a.shape();
    p.trivial = true;
    return p;
  }
  if (b.numel() == 1) {
    p.out = a.shape();
    p.stride_a = contiguous_strides(p.out);
    p.stride_b.assign(p.out.size(), 0);
    return p;
  }
  if (a.numel() == 1) {
    p.out = b.shape();
    p.stride_b = contiguous_strides(p.out);
    p.stride_a.assign(p.out.size(), 0);
    return p;
  }
  if (a.rank() != b.rank())
    throw DimensionError(std::string(op) + ": incompatible shapes " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  p.out.resize(sa.size());
  for (size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] == sb[i]) {
      p.out[i] = sa[i];
    } else if (sa[i] == 1 || sb[i] == 1) {
      p.out[i] = std::max(sa[i], sb[i]);
    } else {
      throw DimensionError(std::string(op) + ": incompatible shapes " +
                           shape_str(sa) + " vs " + shape_str(sb));
    }
  }
  auto sta = contiguous_strides(sa);
  auto stb = contiguous_strides(sb);
  p.stride_a.resize(sa.size());
  p.stride_b.resize(sa.size());
  for (size_t i = 0; i < sa.size(); ++i) {
    p.stride_a[i] = (sa[i] == 1 && p.out[i] != 1) ? 0 : sta[i];
    p.stride_b[i] = (sb[i] == 1 && p.out[i] != 1) ? 0 : stb[i];
  }
  return p;
}

// Walks the broadcast output space calling fn(out_flat, a_flat, b_flat).
template <typename F>
void bc_iterate(const BcPlan& p, F&& fn) {
  const int64_t n = shape_numel(p.out);
  if (p.trivial) {
    for (int64_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const int r = static_cast<int>(p.out.size());
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (int d = r - 1; d >= 0; --d) {
      idx[d]++;
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 double (*fwd)(double, double),
                 void (*bwd)(double ga_in, double av, double bv, double* ga,
                             double* gb)) {
  DType dt = common_dtype(a, b, name);
  BcPlan plan = broadcast_plan(a, b, name);
  std::vector<double> out(static_cast<size_t>(shape_numel(plan.out)));
  const auto& av = a.data();
  const auto& bv = b.data();
  bc_iterate(plan, [&](int64_t o, int64_t ia, int64_t ib) {
    out[o] = fwd(av[ia], bv[ib]);
  });

  auto ai = a.impl();
  auto bi = b.impl();
  return finish_op(name, plan.out, dt, std::move(out), {a, b},
                   [ai, bi, plan, bwd](const std::vector<double>& gout) {
                     std::vector<double> ga(ai->data.size(), 0.0);
                     std::vector<double> gb(bi->data.size(), 0.0);
                     bc_iterate(plan, [&](int64_t o, int64_t ia, int64_t ib) {
                       double da = 0, db = 0;
                       bwd(gout[o], ai->data[ia], bi->data[ib], &da, &db);
                       ga[ia] += da;
                       gb[ib] += db;
                     });
                     if (ai->requires_grad) accumulate(*ai, ga);
                     if (bi->requires_grad) accumulate(*bi, gb);
                   });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double* ga, double* gb) {
        *ga = g;
        *gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double* ga, double* gb) {
        *ga = g;
        *gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* ga, double* gb) {
        *ga = g * y;
        *gb = g * x;
      });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out = a.data();
  for (double& v : out) v += c;
  auto ai = a.impl();
  return finish_op("add_scalar", a.shape(), a.dtype(), std::move(out), {a},
                   [ai](const std::vector<double>& g) {
                     if (ai->requires_grad) accumulate(*ai, g);
                   });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out = a.data();
  for (double& v : out) v *= c;
  auto ai = a.impl();
  return finish_op("mul_scalar", a.shape(), a.dtype(), std::move(out), {a},
                   [ai, c](const std::vector<double>& g) {
                     if (!ai->requires_grad) return;
                     std::vector<double> ga(g.size());
                     for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
                     accumulate(*ai, ga);
                   });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out = x.data();
  for (double& v : out) v = v > 0 ? v : 0.0;
  auto xi = x.impl();
  return finish_op("relu", x.shape(), x.dtype(), std::move(out), {x},
                   [xi](const std::vector<double>& g) {
                     if (!xi->requires_grad) return;
                     std::vector<double> gx(g.size());
                     for (size_t i = 0; i < g.size(); ++i)
                       gx[i] = xi->data[i] > 0 ? g[i] : 0.0;
                     accumulate(*xi, gx);
                   });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int64_t stride, int64_t pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw DimensionError("conv2d: expects x [N,C,H,W], w [F,C,kh,kw]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw DimensionError("conv2d: channel mismatch, x " +
                         shape_str(x.shape()) + " w " + shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != F))
    throw DimensionError("conv2d: bias must be [F]");
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: bad stride/pad");
  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  if (OH < 1 || OW < 1) throw DimensionError("conv2d: kernel exceeds input");

  DType dt = common_dtype(x, w, "conv2d");
  std::vector<double> out(static_cast<size_t>(N * F * OH * OW), 0.0);
  const double* xd = x.data().data();
  const double* wd = w.data().data();

  if (b.defined()) {
    const auto& bd = b.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t f = 0; f < F; ++f)
        std::fill_n(&out[((n * F + f) * OH) * OW], OH * OW, bd[f]);
  }
  // Direct convolution; the inner loop runs contiguously over output width
  // for stride 1 so it vectorizes.
  for (int64_t n = 0; n < N; ++n)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < kh; ++i)
          for (int64_t j = 0; j < kw; ++j) {
            const double wv = wd[((f * C + c) * kh + i) * kw + j];
            if (wv == 0.0) continue;
            for (int64_t oh = 0; oh < OH; ++oh) {
              const int64_t ih = oh * stride - pad + i;
              if (ih < 0 || ih >= H) continue;
              double* orow = &out[((n * F + f) * OH + oh) * OW];
              const double* xrow = &xd[((n * C + c) * H + ih) * W];
              if (stride == 1) {
                const int64_t lo = std::max<int64_t>(0, pad - j);
                const int64_t hi = std::min(OW, W + pad - j);
                for (int64_t ow = lo; ow < hi; ++ow)
                  orow[ow] += wv * xrow[ow + j - pad];
              } else {
                for (int64_t ow = 0; ow < OW; ++ow) {
                  const int64_t iw = ow * stride - pad + j;
                  if (iw >= 0 && iw < W) orow[ow] += wv * xrow[iw];
                }
              }
            }
          }

  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.defined() ? b.impl() : nullptr;
  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return finish_op(
      "conv2d", {N, F, OH, OW}, dt, std::move(out), std::move(parents),
      [=](const std::vector<double>& gout) {
        std::vector<double> gx(xi->data.size(), 0.0);
        std::vector<double> gw(wi->data.size(), 0.0);
        const double* xd2 = xi->data.data();
        const double* wd2 = wi->data.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t f = 0; f < F; ++f)
            for (int64_t c = 0; c < C; ++c)
              for (int64_t i = 0; i < kh; ++i)
                for (int64_t j = 0; j < kw; ++j) {
                  const int64_t widx = ((f * C + c) * kh + i) * kw + j;
                  const double wv = wd2[widx];
                  double wacc = 0.0;
                  for (int64_t oh = 0; oh < OH; ++oh) {
                    const int64_t ih = oh * stride - pad + i;
                    if (ih < 0 || ih >= H) continue;
                    const double* grow = &gout[((n * F + f) * OH + oh) * OW];
                    const double* xrow = &xd2[((n * C + c) * H + ih) * W];
                    double* gxrow = &gx[((n * C + c) * H + ih) * W];
                    if (stride == 1) {
                      const int64_t lo = std::max<int64_t>(0, pad - j);
                      const int64_t hi = std::min(OW, W + pad - j);
                      for (int64_t ow = lo; ow < hi; ++ow) {
                        const double g = grow[ow];
                        gxrow[ow + j - pad] += wv * g;
                        wacc += g * xrow[ow + j - pad];
                      }
                    } else {
                      for (int64_t ow = 0; ow < OW; ++ow) {
                        const int64_t iw = ow * stride - pad + j;
                        if (iw < 0 || iw >= W) continue;
                        const double g = grow[ow];
                        gxrow[iw] += wv * g;
                        wacc += g * xrow[iw];
                      }
                    }
                  }
                  gw[widx] += wacc;
                }
        if (xi->requires_grad) accumulate(*xi, gx);
        if (wi->requires_grad) accumulate(*wi, gw);
        if (bi && bi->requires_grad) {
          std::vector<double> gb(static_cast<size_t>(F), 0.0);
          for (int64_t n = 0; n < N; ++n)
            for (int64_t f = 0; f < F; ++f) {
              const double* grow = &gout[((n * F + f) * OH) * OW];
              double s = 0;
              for (int64_t k = 0; k < OH * OW; ++k) s += grow[k];
              gb[f] += s;
            }
          accumulate(*bi, gb);
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() < 2) throw DimensionError("linear: x must have rank >= 2");
  if (w.rank() != 2) throw DimensionError("linear: w must be [M,K]");
  const int64_t N = x.dim(0);
  const int64_t K = x.numel() / N;
  const int64_t M = w.dim(0);
  if (w.dim(1) != K)
    throw DimensionError("linear: feature width " + std::to_string(K) +
                         " does not match w " + shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != M))
    throw DimensionError("linear: bias must be [M]");
  DType dt = common_dtype(x, w, "linear");

  std::vector<double> out(static_cast<size_t>(N * M), 0.0);
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t m = 0; m < M; ++m) {
      double s = b.defined() ? b.data()[m] : 0.0;
      const double* xr = &xd[n * K];
      const double* wr = &wd[m * K];
      for (int64_t k = 0; k < K; ++k) s += xr[k] * wr[k];
      out[n * M + m] = s;
    }

  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.defined() ? b.impl() : nullptr;
  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return finish_op(
      "linear", {N, M}, dt, std::move(out), std::move(parents),
      [=](const std::vector<double>& gout) {
        const double* xd2 = xi->data.data();
        const double* wd2 = wi->data.data();
        if (xi->requires_grad) {
          std::vector<double> gx(xi->data.size(), 0.0);
          for (int64_t n = 0; n < N; ++n)
            for (int64_t m = 0; m < M; ++m) {
              const double g = gout[n * M + m];
              if (g == 0.0) continue;
              const double* wr = &wd2[m * K];
              double* gr = &gx[n * K];
              for (int64_t k = 0; k < K; ++k) gr[k] += g * wr[k];
            }
          accumulate(*xi, gx);
        }
        if (wi->requires_grad) {
          std::vector<double> gw(wi->data.size(), 0.0);
          for (int64_t n = 0; n < N; ++n)
            for (int64_t m = 0; m < M; ++m) {
              const double g = gout[n * M + m];
              if (g == 0.0) continue;
              const double* xr = &xd2[n * K];
              double* gr = &gw[m * K];
              for (int64_t k = 0; k < K; ++k) gr[k] += g * xr[k];
            }
          accumulate(*wi, gw);
        }
        if (bi && bi->requires_grad) {
          std::vector<double> gb(static_cast<size_t>(M), 0.0);
          for (int64_t n = 0; n < N; ++n)
            for (int64_t m = 0; m < M; ++m) gb[m] += gout[n * M + m];
          accumulate(*bi, gb);
        }
      });
}

Tensor maxpool2(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("maxpool2: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2)
    throw DimensionError("maxpool2: H and W must be even, got " +
                         shape_str(x.shape()));
  const int64_t OH = H / 2, OW = W / 2;
  std::vector<double> out(static_cast<size_t>(N * C * OH * OW));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const double* xd = x.data().data();
  for (int64_t nc = 0; nc < N * C; ++nc)
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) {
        // fixed window scan order = lowest-flat-index tie break
        int64_t base = (nc * H + 2 * oh) * W + 2 * ow;
        int64_t best = base;
        double bv = xd[base];
        for (int64_t di = 0; di < 2; ++di)
          for (int64_t dj = 0; dj < 2; ++dj) {
            int64_t idx = base + di * W + dj;
            if (xd[idx] > bv) {
              bv = xd[idx];
              best = idx;
            }
          }
        out[(nc * OH + oh) * OW + ow] = bv;
        (*argmax)[(nc * OH + oh) * OW + ow] = best;
      }
  auto xi = x.impl();
  return finish_op("maxpool2", {N, C, OH, OW}, x.dtype(), std::move(out), {x},
                   [xi, argmax](const std::vector<double>& g) {
                     if (!xi->requires_grad) return;
                     std::vector<double> gx(xi->data.size(), 0.0);
                     for (size_t i = 0; i < g.size(); ++i)
                       gx[(*argmax)[i]] += g[i];
                     accumulate(*xi, gx);
                   });
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  AxisView v = axis_view(x.shape(), axis, "mean_axis");
  Shape oshape = reduced_shape(x.shape(), axis, keepdim);
  std::vector<double> out(static_cast<size_t>(v.outer * v.inner), 0.0);
  const double* xd = x.data().data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t l = 0; l < v.len; ++l) {
      const double* row = &xd[(o * v.len + l) * v.inner];
      double* orow = &out[o * v.inner];
      for (int64_t i = 0; i < v.inner; ++i) orow[i] += row[i];
    }
  const double inv = 1.0 / static_cast<double>(v.len);
  for (double& e : out) e *= inv;
  auto xi = x.impl();
  return finish_op("mean_axis", oshape, x.dtype(), std::move(out), {x},
                   [xi, v, inv](const std::vector<double>& g) {
                     if (!xi->requires_grad) return;
                     std::vector<double> gx(xi->data.size());
                     for (int64_t o = 0; o < v.outer; ++o)
                       for (int64_t l = 0; l < v.len; ++l)
                         for (int64_t i = 0; i < v.inner; ++i)
                           gx[(o * v.len + l) * v.inner + i] =
                               g[o * v.inner + i] * inv;
                     accumulate(*xi, gx);
                   });
}

Tensor max_axis(const Tensor& x, int axis, bool keepdim) {
  AxisView v = axis_view(x.shape(), axis, "max_axis");
  Shape oshape = reduced_shape(x.shape(), axis, keepdim);
  std::vector<double> out(static_cast<size_t>(v.outer * v.inner));
  auto arg = std::make_shared<std::vector<int64_t>>(out.size());
  const double* xd = x.data().data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t i = 0; i < v.inner; ++i) {
      double best = xd[o * v.len * v.inner + i];
      int64_t bl = 0;
      for (int64_t l = 1; l < v.len; ++l) {
        double val = xd[(o * v.len + l) * v.inner + i];
        if (val > best) {  // strict: ties keep the lowest index
          best = val;
          bl = l;
        }
      }
      out[o * v.inner + i] = best;
      (*arg)[o * v.inner + i] = (o * v.len + bl) * v.inner + i;
    }
  auto xi = x.impl();
  return finish_op("max_axis", oshape, x.dtype(), std::move(out), {x},
                   [xi, arg](const std::vector<double>& g) {
                     if (!xi->requires_grad) return;
                     std::vector<double> gx(xi->data.size(), 0.0);
                     for (size_t i = 0; i < g.size(); ++i)
                       gx[(*arg)[i]] += g[i];
                     accumulate(*xi, gx);
                   });
}

Tensor sum_all(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  auto xi = x.impl();
  return finish_op("sum_all", {1}, x.dtype(), {s}, {x},
                   [xi](const std::vector<double>& g) {
                     if (!xi->requires_grad) return;
                     accumulate(*xi,
                                std::vector<double>(xi->data.size(), g[0]));
                   });
}

Tensor mean_all(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  auto xi = x.impl();
  return finish_op("mean_all", {1}, x.dtype(), {s * inv}, {x},
                   [xi, inv](const std::vector<double>& g) {
                     if (!xi->requires_grad) return;
                     accumulate(
                         *xi, std::vector<double>(xi->data.size(), g[0] * inv));
                   });
}

Tensor sort_axis(const Tensor& x, int axis, bool descending) {
  AxisView v = axis_view(x.shape(), axis, "sort_axis");
  std::vector<double> out(x.data().size());
  auto perm = std::make_shared<std::vector<int64_t>>(x.data().size());
  const double* xd = x.data().data();
  std::vector<int64_t> order(static_cast<size_t>(v.len));
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t i = 0; i < v.inner; ++i) {
      std::iota(order.begin(), order.end(), 0);
      auto key = [&](int64_t l) { return xd[(o * v.len + l) * v.inner + i]; };
      std::stable_sort(order.begin(), order.end(),
                       [&](int64_t a, int64_t b) {
                         return descending ? key(a) > key(b) : key(a) < key(b);
                       });
      for (int64_t r = 0; r < v.len; ++r) {
        int64_t src = (o * v.len + order[r]) * v.inner + i;
        int64_t dst = (o * v.len + r) * v.inner + i;
        out[dst] = xd[src];
        (*perm)[dst] = src;
      }
    }
  auto xi = x.impl();
  return finish_op("sort_axis", x.shape(), x.dtype(), std::move(out), {x},
                   [xi, perm](const std::vector<double>& g) {
                     if (!xi->requires_grad) return;
                     std::vector<double> gx(xi->data.size(), 0.0);
                     for (size_t i = 0; i < g.size(); ++i)
                       gx[(*perm)[i]] += g[i];
                     accumulate(*xi, gx);
                   });
}

Tensor take_axis(const Tensor& x, int axis, const std::vector<int64_t>& idx) {
  AxisView v = axis_view(x.shape(), axis, "take_axis");
  for (int64_t k : idx)
    if (k < 0 || k >= v.len)
      throw DimensionError("take_axis: index " + std::to_string(k) +
                           " out of range [0," + std::to_string(v.len) + ")");
  Shape oshape = x.shape();
  oshape[axis] = static_cast<int64_t>(idx.size());
  const int64_t olen = static_cast<int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(v.outer * olen * v.inner));
  const double* xd = x.data().data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t r = 0; r < olen; ++r) {
      const double* src = &xd[(o * v.len + idx[r]) * v.inner];
      double* dst = &out[(o * olen + r) * v.inner];
      std::copy_n(src, v.inner, dst);
    }
  auto xi = x.impl();
  auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
  return finish_op(
      "take_axis", oshape, x.dtype(), std::move(out), {x},
      [xi, v, olen, idx_copy](const std::vector<double>& g) {
        if (!xi->requires_grad) return;
        std::vector<double> gx(xi->data.size(), 0.0);
        for (int64_t o = 0; o < v.outer; ++o)
          for (int64_t r = 0; r < olen; ++r) {
            const double* src = &g[(o * olen + r) * v.inner];
            double* dst = &gx[(o * v.len + (*idx_copy)[r]) * v.inner];
            for (int64_t i = 0; i < v.inner; ++i) dst[i] += src[i];
          }
        accumulate(*xi, gx);
      });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  AxisView v0 = axis_view(s0, axis, "concat");
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank() || p.dtype() != parts[0].dtype())
      throw DimensionError("concat: rank/dtype mismatch");
    for (int d = 0; d < p.rank(); ++d)
      if (d != axis && p.shape()[d] != s0[d])
        throw DimensionError("concat: shape mismatch at dim " +
                             std::to_string(d));
    total += p.shape()[axis];
  }
  Shape oshape = s0;
  oshape[axis] = total;
  std::vector<double> out(static_cast<size_t>(v0.outer * total * v0.inner));
  int64_t off = 0;
  std::vector<int64_t> offsets;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const int64_t plen = p.shape()[axis];
    const double* pd = p.data().data();
    for (int64_t o = 0; o < v0.outer; ++o)
      std::copy_n(&pd[o * plen * v0.inner], plen * v0.inner,
                  &out[(o * total + off) * v0.inner]);
    off += plen;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<int64_t> lens;
  for (const Tensor& p : parts) {
    impls.push_back(p.impl());
    lens.push_back(p.shape()[axis]);
  }
  return finish_op(
      "concat", oshape, parts[0].dtype(), std::move(out), parts,
      [impls, lens, offsets, v0, total](const std::vector<double>& g) {
        for (size_t k = 0; k < impls.size(); ++k) {
          if (!impls[k]->requires_grad) continue;
          std::vector<double> gp(impls[k]->data.size());
          for (int64_t o = 0; o < v0.outer; ++o)
            std::copy_n(&g[(o * total + offsets[k]) * v0.inner],
                        lens[k] * v0.inner, &gp[o * lens[k] * v0.inner]);
          accumulate(*impls[k], gp);
        }
      });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(new_shape));
  auto xi = x.impl();
  return finish_op("reshape", std::move(new_shape), x.dtype(),
                   std::vector<double>(x.data()), {x},
                   [xi](const std::vector<double>& g) {
                     if (xi->requires_grad) accumulate(*xi, g);
                   });
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int64_t>& labels) {
  Tensor z = logits;
  if (z.rank() == 1) z = reshape(z, {1, z.dim(0)});
  if (z.rank() != 2) throw DimensionError("softmax_cross_entropy: rank");
  const int64_t N = z.dim(0), C = z.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw DimensionError("softmax_cross_entropy: label count mismatch");
  for (int64_t y : labels)
    if (y < 0 || y >= C)
      throw DimensionError("softmax_cross_entropy: label out of range");
  std::vector<double> out(static_cast<size_t>(N));
  const double* zd = z.data().data();
  for (int64_t n = 0; n < N; ++n) {
    const double* row = &zd[n * C];
    double m = row[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    double s = 0;
    for (int64_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
    out[n] = m + std::log(s) - row[labels[n]];
  }
  auto zi = z.impl();
  auto lab = std::make_shared<std::vector<int64_t>>(labels);
  return finish_op("softmax_cross_entropy", {N}, z.dtype(), std::move(out),
                   {z}, [zi, lab, N, C](const std::vector<double>& g) {
                     if (!zi->requires_grad) return;
                     std::vector<double> gz(zi->data.size());
                     const double* zd2 = zi->data.data();
                     for (int64_t n = 0; n < N; ++n) {
                       const double* row = &zd2[n * C];
                       double m = row[0];
                       for (int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
                       double s = 0;
                       for (int64_t c = 0; c < C; ++c)
                         s += std::exp(row[c] - m);
                       for (int64_t c = 0; c < C; ++c) {
                         double p = std::exp(row[c] - m) / s;
                         gz[n * C + c] =
                             g[n] * (p - ((*lab)[n] == c ? 1.0 : 0.0));
                       }
                     }
                     accumulate(*zi, gz);
                   });
}

namespace {

// One axis of corner-aligned bilinear taps.
struct ResizeTaps {
  std::vector<int64_t> i0, i1;
  std::vector<double> frac;
};

ResizeTaps make_taps(int64_t in, int64_t out) {
  ResizeTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.frac.resize(out);
  for (int64_t i = 0; i < out; ++i) {
    double src;
    if (out == 1) {
      src = static_cast<double>(in - 1) / 2.0;  // degenerate axis: center
    } else {
      src = static_cast<double>(i) * static_cast<double>(in - 1) /
            static_cast<double>(out - 1);
    }
    int64_t lo = static_cast<int64_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    t.i0[i] = lo;
    t.i1[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
  if (x.rank() != 4) throw DimensionError("resize_bilinear: expects [N,C,H,W]");
  if (out_h < 1 || out_w < 1)
    throw DimensionError("resize_bilinear: output size must be positive");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  ResizeTaps th = make_taps(H, out_h);
  ResizeTaps tw = make_taps(W, out_w);
  std::vector<double> out(static_cast<size_t>(N * C * out_h * out_w));
  const double* xd = x.data().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* plane = &xd[nc * H * W];
    double* oplane = &out[nc * out_h * out_w];
    for (int64_t i = 0; i < out_h; ++i) {
      const double fh = th.frac[i];
      const double* r0 = &plane[th.i0[i] * W];
      const double* r1 = &plane[th.i1[i] * W];
      for (int64_t j = 0; j < out_w; ++j) {
        const double fw = tw.frac[j];
        const double a = r0[tw.i0[j]] * (1 - fw) + r0[tw.i1[j]] * fw;
        const double b = r1[tw.i0[j]] * (1 - fw) + r1[tw.i1[j]] * fw;
        oplane[i * out_w + j] = a * (1 - fh) + b * fh;
      }
    }
  }
  auto xi = x.impl();
  auto thp = std::make_shared<ResizeTaps>(std::move(th));
  auto twp = std::make_shared<ResizeTaps>(std::move(tw));
  return finish_op(
      "resize_bilinear", {N, C, out_h, out_w}, x.dtype(), std::move(out), {x},
      [xi, thp, twp, N, C, H, W, out_h, out_w](const std::vector<double>& g) {
        if (!xi->requires_grad) return;
        std::vector<double> gx(xi->data.size(), 0.0);
        for (int64_t nc = 0; nc < N * C; ++nc) {
          double* gplane = &gx[nc * H * W];
          const double* gout = &g[nc * out_h * out_w];
          for (int64_t i = 0; i < out_h; ++i) {
            const double fh = thp->frac[i];
            for (int64_t j = 0; j < out_w; ++j) {
              const double fw = twp->frac[j];
              const double gv = gout[i * out_w + j];
              gplane[thp->i0[i] * W + twp->i0[j]] += gv * (1 - fh) * (1 - fw);
              gplane[thp->i0[i] * W + twp->i1[j]] += gv * (1 - fh) * fw;
              gplane[thp->i1[i] * W + twp->i0[j]] += gv * fh * (1 - fw);
              gplane[thp->i1[i] * W + twp->i1[j]] += gv * fh * fw;
            }
          }
        }
        accumulate(*xi, gx);
      });
}

Tensor gaussian_noise(const Tensor& x, double sigma, std::mt19937_64& rng) {
  if (sigma < 0) throw ConfigError("gaussian_noise: sigma must be >= 0");
  std::vector<double> out = x.data();
  if (sigma > 0) {
    std::normal_distribution<double> dist(0.0, sigma);
    for (double& v : out) v += dist(rng);
  }
  auto xi = x.impl();
  return finish_op("gaussian_noise", x.shape(), x.dtype(), std::move(out), {x},
                   [xi](const std::vector<double>& g) {
                     if (xi->requires_grad) accumulate(*xi, g);
                   });
}

}  // namespace advkit
