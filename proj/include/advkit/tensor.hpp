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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "advkit/common.hpp"

namespace advkit {

class Tensor;

// One recorded operation. Nodes form an implicit reverse-mode tape: they are
// created in forward execution order (monotone `seq`) and replayed in reverse
// by backward(). A node is consumed by the backward pass that visits it;
// visiting it again without a fresh forward raises StaleGraphError.
struct TapeNode {
  uint64_t seq = 0;
  bool consumed = false;
  const char* op = "";
  std::vector<Tensor> parents;
  // Receives d(loss)/d(output) and accumulates into the parents' grads.
  std::function<void(const std::vector<double>&)> backprop;
  std::weak_ptr<struct TensorImpl> out;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::F32;
  bool requires_grad = false;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches it
  std::shared_ptr<TapeNode> node;  // null for leaves and constants
};

// N-dimensional numeric array, shared-handle semantics (copies alias the
// same buffer; use clone() for a deep copy). All public operations reject
// non-finite outputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dt = DType::F32);
  static Tensor full(Shape shape, double value, DType dt = DType::F32);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          DType dt = DType::F32);
  static Tensor scalar(double value, DType dt = DType::F64);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev,
                      DType dt = DType::F32);
  static Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo,
                             double hi, DType dt = DType::F32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int i) const;
  int rank() const;
  int64_t numel() const;
  DType dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool is_leaf() const;  // requires_grad and not produced by an op

  std::vector<double>& data();
  const std::vector<double>& data() const;
  const std::vector<double>& grad() const;  // throws if no grad accumulated
  bool has_grad() const;
  void zero_grad();

  double item() const;  // scalar tensors only
  double at(std::initializer_list<int64_t> idx) const;

  // Deep copy of the buffer; drops graph history and grad.
  Tensor clone() const;
  // Same buffer contents, detached from the graph (copy, no alias).
  Tensor detach() const { return clone(); }
  // Detached copy in another precision (F64 -> F32 rounds).
  Tensor to_dtype(DType dt) const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode sweep from a scalar loss. Every leaf reachable from `loss`
// accumulates d(loss)/d(leaf) into its grad (accumulation is additive across
// calls; zero_grad() resets). Reusing a consumed graph raises
// StaleGraphError.
void backward(const Tensor& loss);

// ---- differentiable operator set ----
// Binary elementwise ops accept equal shapes, or a right/left operand whose
// dims are 1 where they differ (numpy-style broadcast restricted to equal
// rank or scalar).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& x);  // derivative at 0 taken as 0

// x: [N,C,H,W], w: [F,C,kh,kw], b: [F] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int64_t stride = 1, int64_t pad = 0);

// x: [N,K] (higher ranks flatten trailing dims), w: [M,K], b: [M] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// 2x2 window, stride 2; H and W must be even. Gradient routes to the argmax,
// ties to the lowest flat index.
Tensor maxpool2(const Tensor& x);

Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor max_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Stable sort along one axis; gradient follows the permutation. Equal
// elements keep their original relative order.
Tensor sort_axis(const Tensor& x, int axis, bool descending = false);

// Gather the given indices along an axis; gradient scatter-adds back.
Tensor take_axis(const Tensor& x, int axis, const std::vector<int64_t>& idx);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& x, Shape new_shape);

// Per-row softmax cross-entropy: logits [N,C], labels size N -> [N].
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int64_t>& labels);

// Corner-aligned bilinear resample of [N,C,H,W] to [N,C,out_h,out_w]. The
// same kernel serves down- and upscaling; size-preserving calls are exact
// identities. A singleton output axis samples the input center.
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);

// x + N(0, sigma^2), noise drawn row-major from `rng` and treated as a
// constant by the gradient.
Tensor gaussian_noise(const Tensor& x, double sigma, std::mt19937_64& rng);

// ---- non-graph buffer helpers (attack arithmetic) ----
double linf_dist(const Tensor& a, const Tensor& b);
double l2_dist(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
Tensor sign(const Tensor& x);  // sign(0) = 0
void clamp_(Tensor& x, double lo, double hi);
// elementwise clamp of x into [ref - radius, ref + radius]
void clamp_ball_(Tensor& x, const Tensor& ref, double radius);
Tensor axpy(double a, const Tensor& x, const Tensor& y);  // a*x + y

}  // namespace advkit
