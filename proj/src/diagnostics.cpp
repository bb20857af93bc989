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

#include "advkit/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "advkit/attacks.hpp"

namespace advkit {

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

double linf_norm(const Tensor& a) {
  double m = 0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

// CE of the aggregated logits at an arbitrary (unclipped) point.
double slice_loss(const DefenseModel& model, const Tensor& point, int64_t y,
                  const RandomnessPolicy& policy) {
  Tensor pin =
      point.dtype() == model.dtype ? point : point.to_dtype(model.dtype);
  Tensor stacked = multires_stack(pin, model.preprocess, policy);
  Tensor agg = aggregate(model, forward_probes(model, stacked));
  return loss_ce(agg.data(), y);
}

}  // namespace

SliceDirections make_slice_directions(const DefenseModel& model,
                                      const Tensor& x, int64_t y, double eps,
                                      uint64_t seed) {
  if (eps <= 0) throw ConfigError("slice directions: eps must be > 0");
  AttackSpec probe;
  probe.epsilon = eps;
  probe.steps = 20;
  probe.eot_samples = 1;
  probe.seed = mix_seed(seed, 0xd1ULL);
  probe.name = "slice-probe";
  AttackTrace tr = pgd(model, x, y, probe);

  Tensor d1 = tr.adversarial.clone();
  {
    auto& v = d1.data();
    const auto& o = tr.original.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= o[i];
  }
  double n1 = linf_norm(d1);
  if (n1 == 0)
    throw ConfigError("slice directions: attack direction degenerated");
  for (double& v : d1.data()) v /= n1;

  std::mt19937_64 rng(mix_seed(seed, 0xd2ULL));
  for (int attempt = 0; attempt < 64; ++attempt) {
    Tensor d2 = Tensor::randn(x.shape(), rng, 1.0, d1.dtype());
    const double k = dot(d1, d2) / dot(d1, d1);
    for (size_t i = 0; i < d2.data().size(); ++i)
      d2.data()[i] -= k * d1.data()[i];
    double n2 = linf_norm(d2);
    if (n2 < 1e-9) continue;  // degenerate draw, resample
    for (double& v : d2.data()) v *= linf_norm(d1) / n2;
    if (std::abs(dot(d1, d2)) <= 1e-6 * l2_norm(d1) * l2_norm(d2))
      return {d1, d2};
  }
  throw ConfigError("slice directions: could not draw an orthogonal d2");
}

LandscapeGrid landscape(const DefenseModel& model, const Tensor& x, int64_t y,
                        const Tensor& d1, const Tensor& d2, double extent,
                        int64_t n, LandscapeMode mode, int64_t avg_samples,
                        uint64_t seed) {
  if (n < 2) throw ConfigError("landscape: need a grid of at least 2x2");
  if (extent <= 0) throw ConfigError("landscape: extent must be > 0");
  if (mode == LandscapeMode::Averaged && avg_samples < 1)
    throw ConfigError("landscape: averaged mode needs >= 1 samples");
  if (d1.shape() != x.shape() || d2.shape() != x.shape())
    throw DimensionError("landscape: direction shape mismatch");
  if (std::abs(dot(d1, d2)) > 1e-6 * l2_norm(d1) * l2_norm(d2))
    throw ConfigError("landscape: directions are not orthogonal");

  LandscapeGrid grid;
  grid.mode = mode;
  grid.avg_samples = mode == LandscapeMode::Averaged ? avg_samples : 1;
  grid.d1 = d1.clone();
  grid.d2 = d2.clone();
  for (int64_t i = 0; i < n; ++i)
    grid.alphas.push_back(-extent +
                          2.0 * extent * static_cast<double>(i) /
                              static_cast<double>(n - 1));
  grid.betas = grid.alphas;

  grid.losses.assign(n, std::vector<double>(n, 0.0));
  Tensor point = x.clone();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      auto& pv = point.data();
      const auto& xv = x.data();
      const auto& a = d1.data();
      const auto& b = d2.data();
      for (size_t k = 0; k < pv.size(); ++k)
        pv[k] = xv[k] + grid.alphas[i] * a[k] + grid.betas[j] * b[k];

      double loss = 0;
      switch (mode) {
        case LandscapeMode::Fresh:
          loss = slice_loss(model, point, y,
                            RandomnessPolicy::frozen(mix_seed(seed, i, j)));
          break;
        case LandscapeMode::Frozen:
          loss = slice_loss(model, point, y, RandomnessPolicy::frozen(seed));
          break;
        case LandscapeMode::Averaged: {
          for (int64_t r = 0; r < avg_samples; ++r)
            loss += slice_loss(
                model, point, y,
                RandomnessPolicy::frozen(mix_seed(seed, i, j, r)));
          loss /= static_cast<double>(avg_samples);
          break;
        }
      }
      grid.losses[i][j] = loss;
    }
  }
  return grid;
}

double ruggedness(const LandscapeGrid& grid) {
  const int64_t n = static_cast<int64_t>(grid.alphas.size());
  const int64_t m = static_cast<int64_t>(grid.betas.size());
  if (n < 3 || m < 3)
    throw ConfigError("ruggedness: grid too small for a Laplacian");
  double total = 0;
  int64_t count = 0;
  for (int64_t i = 1; i + 1 < n; ++i)
    for (int64_t j = 1; j + 1 < m; ++j) {
      const auto& l = grid.losses;
      double lap = l[i - 1][j] + l[i + 1][j] + l[i][j - 1] + l[i][j + 1] -
                   4.0 * l[i][j];
      total += std::abs(lap);
      ++count;
    }
  return total / static_cast<double>(count);
}

void write_landscape_csv(std::ostream& os, const LandscapeGrid& grid) {
  os << "alpha";
  for (double a : grid.alphas) os << "," << a;
  os << "\nbeta";
  for (double b : grid.betas) os << "," << b;
  os << "\n";
  for (const auto& row : grid.losses) {
    for (size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
    os << "\n";
  }
}

// ---- attack unit test ----

namespace {

// Deterministic binary view of a trained model: same backbone, noise
// disabled, single 2-class read-out at the last layer.
DefenseModel binary_shell(const DefenseModel& trained) {
  DefenseModel b = trained;
  b.preprocess.sigma1 = 0;
  b.preprocess.sigma2 = 0;
  b.policy = RandomnessPolicy::none();
  b.aggregation = Aggregation::Mean;
  b.num_classes = 2;
  b.crossmax_k = 0;
  b.probes.clear();
  return b;
}

Tensor flat_features(const DefenseModel& shell, const Tensor& x) {
  Tensor stacked =
      multires_stack(x, shell.preprocess, RandomnessPolicy::none());
  Tensor feat = backbone_features(
      shell, stacked, static_cast<int64_t>(shell.backbone.size()) - 1);
  return reshape(feat, {feat.numel()});
}

}  // namespace

double ball_flip_rate(const DefenseModel& binary, const Tensor& x, double eps,
                      int64_t draws, uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xba11ULL));
  std::uniform_real_distribution<double> uni(-eps, eps);
  int64_t flips = 0;
  Tensor probe = x.clone();
  for (int64_t t = 0; t < draws; ++t) {
    auto& pv = probe.data();
    const auto& xv = x.data();
    for (size_t i = 0; i < pv.size(); ++i)
      pv[i] = std::clamp(xv[i] + uni(rng), 0.0, 1.0);
    flips += predict(binary, probe).label == 1;
  }
  return static_cast<double>(flips) / static_cast<double>(draws);
}

UnitTestModel build_unit_test(const DefenseModel& trained,
                              const std::vector<Tensor>& points, double eps,
                              uint64_t seed, const UnitTestBuildOptions& opts) {
  if (points.empty()) throw ConfigError("unit test: no points");
  if (eps <= 0) throw ConfigError("unit test: eps must be > 0");

  DefenseModel shell = binary_shell(trained);
  const int64_t n = static_cast<int64_t>(points.size());

  // Per-point adversarial directions from the frozen extractor: gradient of
  // a fixed random projection of the last-layer features.
  Tensor probe_feat = flat_features(shell, points[0].to_dtype(shell.dtype));
  const int64_t feat_dim = probe_feat.numel();
  std::mt19937_64 rng(mix_seed(seed, 0x0deaULL));
  Tensor u = Tensor::randn({feat_dim}, rng, 1.0, shell.dtype);
  {
    double nu = l2_norm(u);
    for (double& v : u.data()) v /= nu;
  }

  UnitTestModel utm;
  utm.epsilon = eps;
  std::vector<Tensor> feats0, feats1;
  for (const Tensor& raw : points) {
    Tensor x = raw.to_dtype(shell.dtype);
    Tensor leaf = x.clone();
    leaf.set_requires_grad(true);
    Tensor score = sum_all(mul(flat_features(shell, leaf), u));
    backward(score);
    Tensor g = Tensor::from_data(x.shape(), leaf.grad(), x.dtype());
    if (linf_norm(g) == 0)
      throw BuildError("unit test: extractor gradient vanished at a point");
    Tensor adv = x.clone();
    {
      auto& av = adv.data();
      const auto& gv = g.data();
      for (size_t i = 0; i < av.size(); ++i) {
        double s = (gv[i] > 0) - (gv[i] < 0);
        av[i] = std::clamp(av[i] + eps * s, 0.0, 1.0);
      }
    }
    utm.points.push_back(x);
    utm.adversarial_points.push_back(adv);
    feats0.push_back(flat_features(shell, x));
    feats1.push_back(flat_features(shell, adv));
  }

  // Head retraining: logistic loss on (x -> 0, x' -> 1) pairs, head only.
  std::vector<double> fbuf;
  std::vector<int64_t> ybuf;
  for (const Tensor& f : feats0) {
    fbuf.insert(fbuf.end(), f.data().begin(), f.data().end());
    ybuf.push_back(0);
  }
  for (const Tensor& f : feats1) {
    fbuf.insert(fbuf.end(), f.data().begin(), f.data().end());
    ybuf.push_back(1);
  }
  Tensor fmat =
      Tensor::from_data({2 * n, feat_dim}, std::move(fbuf), shell.dtype);
  Tensor w = Tensor::zeros({2, feat_dim}, shell.dtype).set_requires_grad(true);
  Tensor b = Tensor::zeros({2}, shell.dtype).set_requires_grad(true);
  for (int64_t epoch = 0; epoch < opts.head_epochs; ++epoch) {
    w.zero_grad();
    b.zero_grad();
    Tensor loss = mean_all(softmax_cross_entropy(linear(fmat, w, b), ybuf));
    backward(loss);
    for (size_t k = 0; k < w.data().size(); ++k)
      w.data()[k] -= opts.head_lr * w.grad()[k];
    for (size_t k = 0; k < b.data().size(); ++k)
      b.data()[k] -= opts.head_lr * b.grad()[k];
  }

  Probe head;
  head.layer_index = static_cast<int64_t>(shell.backbone.size()) - 1;
  head.kind = ProbeKind::FlattenLinear;
  head.w = w.detach();
  head.b = b.detach();
  shell.probes.push_back(head);
  shell.validate();
  utm.binary = shell;

  // Verify the three construction guarantees.
  for (int64_t i = 0; i < n; ++i) {
    if (predict(utm.binary, utm.points[i]).label != 0)
      throw BuildError("unit test: condition (a) failed at point " +
                       std::to_string(i) + " (clean point not class 0)");
    if (predict(utm.binary, utm.adversarial_points[i]).label != 1)
      throw BuildError("unit test: condition (b) failed at point " +
                       std::to_string(i) +
                       " (recorded neighbour not class 1)");
    double rate = ball_flip_rate(utm.binary, utm.points[i], eps,
                                 opts.random_draws, mix_seed(seed, 0xcULL, i));
    if (rate > opts.random_flip_quota)
      throw BuildError("unit test: condition (c) failed at point " +
                       std::to_string(i) + " (random flip rate " +
                       std::to_string(rate) + ")");
  }
  return utm;
}

double run_unit_test(const UnitTestAttackFn& attack_fn,
                     const UnitTestModel& utm, double eps) {
  int64_t passes = 0;
  for (size_t i = 0; i < utm.points.size(); ++i) {
    const Tensor& x = utm.points[i];
    Tensor adv = attack_fn(utm.binary, x, 0, eps);
    if (linf_dist(adv, x) > eps + kBoundTolerance) continue;
    passes += predict(utm.binary, adv).label == 1;
  }
  return static_cast<double>(passes) /
         static_cast<double>(utm.points.size());
}

}  // namespace advkit
