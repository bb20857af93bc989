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

// Gradient-masking diagnostics: 2-D loss-surface slices and a constructed
// model with guaranteed in-budget adversarial examples that scores attack
// strength.

#pragma once

#include <functional>
#include <iosfwd>

#include "advkit/model.hpp"

namespace advkit {

enum class LandscapeMode : uint8_t { Fresh = 0, Frozen = 1, Averaged = 2 };

struct LandscapeGrid {
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<std::vector<double>> losses;  // [alpha][beta]
  LandscapeMode mode = LandscapeMode::Fresh;
  int64_t avg_samples = 1;  // draws per point in Averaged mode
  Tensor d1, d2;
};

struct SliceDirections {
  Tensor d1;  // toward an adversarial example, unit l-inf
  Tensor d2;  // random, orthogonalized against d1, matched l-inf norm
};

// d1 from a short attack run (x_adv - x normalized); d2 resampled until the
// projected draw is non-degenerate. Guarantees |d1.d2| <= 1e-6 |d1||d2|.
SliceDirections make_slice_directions(const DefenseModel& model,
                                      const Tensor& x, int64_t y, double eps,
                                      uint64_t seed);

// losses[i][j] = CE(model, x + alpha_i d1 + beta_j d2, y) sampled under
// `mode`: fresh (new draw per point), frozen (one shared draw), averaged
// (mean over avg_samples fresh draws per point).
LandscapeGrid landscape(const DefenseModel& model, const Tensor& x, int64_t y,
                        const Tensor& d1, const Tensor& d2, double extent,
                        int64_t n, LandscapeMode mode, int64_t avg_samples,
                        uint64_t seed);

// Mean absolute discrete Laplacian over interior grid points; the scalar
// spikiness score the smoothing comparisons use.
double ruggedness(const LandscapeGrid& grid);

// alpha header row, beta header row, then the loss matrix (row per alpha).
void write_landscape_csv(std::ostream& os, const LandscapeGrid& grid);

// ---- attack unit test ----

// A deterministic 2-class model built from a trained backbone so that every
// designated point classifies 0 and a recorded in-ball neighbour classifies
// 1. Any attack that misses such a neighbour is too weak.
struct UnitTestModel {
  DefenseModel binary;
  std::vector<Tensor> points;
  std::vector<Tensor> adversarial_points;  // the guaranteed class-1 examples
  double epsilon = 0;
};

struct UnitTestBuildOptions {
  int64_t head_epochs = 500;
  double head_lr = 0.5;
  int64_t random_draws = 1000;     // condition (c) Monte-Carlo draws
  double random_flip_quota = 0.05; // max tolerated flip rate per point
};

// Construction guarantees, verified before returning (BuildError names the
// violated condition):
//  (a) every point classifies 0,
//  (b) point + eps*sign(g) classifies 1 for the recorded direction g,
//  (c) uniform ball sampling flips at most `random_flip_quota` per point.
UnitTestModel build_unit_test(const DefenseModel& trained,
                              const std::vector<Tensor>& points, double eps,
                              uint64_t seed,
                              const UnitTestBuildOptions& opts = {});

// Fraction of uniform eps-ball draws around x (clipped to [0,1]) that the
// binary model classifies 1.
double ball_flip_rate(const DefenseModel& binary, const Tensor& x, double eps,
                      int64_t draws, uint64_t seed);

using UnitTestAttackFn = std::function<Tensor(
    const DefenseModel& model, const Tensor& x, int64_t label, double eps)>;

// Pass rate: fraction of points where the attack finds an in-ball example
// the model classifies 1.
double run_unit_test(const UnitTestAttackFn& attack_fn,
                     const UnitTestModel& utm, double eps);

}  // namespace advkit
