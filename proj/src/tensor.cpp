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

#include "advkit/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace advkit {

namespace detail {

std::atomic<uint64_t> g_seq{1};

void round_f32(std::vector<double>& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

void apply_dtype(std::vector<double>& v, DType dt) {
  if (dt == DType::F32) round_f32(v);
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite value in output of ") + op);
  }
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, DType dt) {
  auto impl = std::make_shared<TensorImpl>();
  impl->dtype = dt;
  impl->data.resize(static_cast<size_t>(shape_numel(shape)));
  impl->shape = std::move(shape);
  return impl;
}

void accumulate(TensorImpl& t, const std::vector<double>& g) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  for (size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}

}  // namespace detail

using detail::make_impl;

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::zeros(Shape shape, DType dt) {
  return wrap(make_impl(std::move(shape), dt));
}

Tensor Tensor::full(Shape shape, double value, DType dt) {
  auto impl = make_impl(std::move(shape), dt);
  std::fill(impl->data.begin(), impl->data.end(), value);
  detail::apply_dtype(impl->data, dt);
  return wrap(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, DType dt) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    throw DimensionError("from_data: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
  auto impl = make_impl(std::move(shape), dt);
  impl->data = std::move(values);
  detail::apply_dtype(impl->data, dt);
  return wrap(std::move(impl));
}

Tensor Tensor::scalar(double value, DType dt) {
  return from_data({1}, {value}, dt);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev,
                     DType dt) {
  auto impl = make_impl(std::move(shape), dt);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& x : impl->data) x = dist(rng) * stddev;
  detail::apply_dtype(impl->data, dt);
  return wrap(std::move(impl));
}

Tensor Tensor::rand_uniform(Shape shape, std::mt19937_64& rng, double lo,
                            double hi, DType dt) {
  auto impl = make_impl(std::move(shape), dt);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& x : impl->data) x = dist(rng);
  detail::apply_dtype(impl->data, dt);
  return wrap(std::move(impl));
}

const Shape& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::dim(int i) const { return impl_->shape.at(i); }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int64_t Tensor::numel() const {
  return static_cast<int64_t>(impl_->data.size());
}
DType Tensor::dtype() const { return impl_->dtype; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

bool Tensor::is_leaf() const {
  return impl_ && impl_->requires_grad && !impl_->node;
}

std::vector<double>& Tensor::data() { return impl_->data; }
const std::vector<double>& Tensor::data() const { return impl_->data; }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw StaleGraphError("tensor has no accumulated gradient");
  return impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::zero_grad() { impl_->grad.clear(); }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item(): tensor is not scalar");
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = impl_->shape;
  if (idx.size() != s.size()) throw DimensionError("at(): rank mismatch");
  int64_t flat = 0;
  int i = 0;
  for (int64_t v : idx) {
    if (v < 0 || v >= s[i]) throw DimensionError("at(): index out of range");
    flat = flat * s[i] + v;
    ++i;
  }
  return impl_->data[static_cast<size_t>(flat)];
}

Tensor Tensor::clone() const {
  auto impl = make_impl(impl_->shape, impl_->dtype);
  impl->data = impl_->data;
  return wrap(std::move(impl));
}

Tensor Tensor::to_dtype(DType dt) const {
  auto impl = make_impl(impl_->shape, dt);
  impl->data = impl_->data;
  detail::apply_dtype(impl->data, dt);
  return wrap(std::move(impl));
}

namespace detail {

// Finalizes an op result: dtype rounding, finite check, and tape recording
// when any parent participates in a graph.
Tensor finish_op(const char* op, Shape shape, DType dt,
                 std::vector<double> data, std::vector<Tensor> parents,
                 std::function<void(const std::vector<double>&)> backprop) {
  auto impl = make_impl(std::move(shape), dt);
  impl->data = std::move(data);
  apply_dtype(impl->data, dt);
  check_finite(impl->data, op);

  bool any_grad = false;
  for (const Tensor& p : parents)
    if (p.defined() && p.requires_grad()) any_grad = true;
  if (any_grad) {
    impl->requires_grad = true;
    auto node = std::make_shared<TapeNode>();
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    node->op = op;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
    node->out = impl;
    impl->node = std::move(node);
  }
  return Tensor::wrap(std::move(impl));
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw DimensionError("backward: loss must be a defined scalar");
  auto root = loss.impl();
  if (!root->node) {
    if (root->requires_grad) detail::accumulate(*root, {1.0});
    return;
  }

  // Collect every ancestor node of the loss.
  std::vector<TapeNode*> nodes;
  std::unordered_set<TapeNode*> seen;
  std::vector<TapeNode*> stack{root->node.get()};
  seen.insert(root->node.get());
  while (!stack.empty()) {
    TapeNode* n = stack.back();
    stack.pop_back();
    if (n->consumed)
      throw StaleGraphError(std::string("backward: graph through op '") +
                            n->op + "' was already consumed");
    nodes.push_back(n);
    for (const Tensor& p : n->parents) {
      auto pn = p.impl() ? p.impl()->node.get() : nullptr;
      if (pn && seen.insert(pn).second) stack.push_back(pn);
    }
  }
  // Creation order is a topological order; replay newest-first.
  std::sort(nodes.begin(), nodes.end(),
            [](TapeNode* a, TapeNode* b) { return a->seq > b->seq; });

  detail::accumulate(*root, {1.0});
  for (TapeNode* n : nodes) {
    auto out = n->out.lock();
    n->consumed = true;
    if (!out || out->grad.empty()) continue;  // no contribution to the loss
    n->backprop(out->grad);
  }

  // Leaves are the user-facing surface: round and validate their grads.
  for (TapeNode* n : nodes) {
    for (const Tensor& p : n->parents) {
      auto pi = p.impl();
      if (pi && pi->requires_grad && !pi->node && !pi->grad.empty()) {
        detail::apply_dtype(pi->grad, pi->dtype);
        detail::check_finite(pi->grad, "backward");
      }
    }
  }
}

// ---- non-graph helpers ----

double linf_dist(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("linf_dist: shape mismatch");
  double m = 0;
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

double l2_dist(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("l2_dist: shape mismatch");
  double s = 0;
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

double l2_norm(const Tensor& a) {
  double s = 0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

Tensor sign(const Tensor& x) {
  Tensor out = x.clone();
  for (double& v : out.data()) v = (v > 0) - (v < 0);
  return out;
}

void clamp_(Tensor& x, double lo, double hi) {
  for (double& v : x.data()) v = std::min(hi, std::max(lo, v));
}

void clamp_ball_(Tensor& x, const Tensor& ref, double radius) {
  if (x.shape() != ref.shape())
    throw DimensionError("clamp_ball_: shape mismatch");
  const auto& r = ref.data();
  auto& v = x.data();
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = std::min(r[i] + radius, std::max(r[i] - radius, v[i]));
}

Tensor axpy(double a, const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) throw DimensionError("axpy: shape mismatch");
  Tensor out = y.clone();
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] += a * xv[i];
  return out;
}

}  // namespace advkit
