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

#include <string>

#include "advkit/data.hpp"
#include "advkit/model.hpp"

namespace advkit {

// Every emitted adversarial example must satisfy
// max|x_adv - x_original| <= eps + kBoundTolerance, measured against the
// original clean image, never against an intermediate stage.
inline constexpr double kBoundTolerance = 0x1p-20;

enum class AttackLoss : uint8_t { CrossEntropy = 0, Hinge = 1 };

struct AttackSpec {
  double epsilon = 8.0 / 255.0;  // l-inf budget in pixel units
  int64_t steps = 500;
  double step_size = 0;          // 0 selects 2.5 * eps / steps
  int64_t eot_samples = 1;
  AttackLoss loss = AttackLoss::CrossEntropy;
  double hinge_kappa = 0;
  bool transfer_mean_surrogate = false;
  // (radius multiplier, fraction of steps); empty = constant epsilon.
  // Fractions must sum to 1, multipliers non-increasing and ending at 1.
  std::vector<std::pair<double, double>> radius_schedule;
  uint64_t seed = 0;
  std::string name = "pgd";

  void validate() const;
};

struct StepRecord {
  double loss = 0;       // target-model loss at the pre-update iterate
  double radius = 0;     // projection radius in effect
  double grad_norm = 0;  // l2 norm of the (EoT) gradient
  double best_loss = 0;  // running max of the loss channel
};

struct AttackTrace {
  std::vector<StepRecord> steps;
  Tensor original;
  Tensor adversarial;
  int64_t label = 0;
  double epsilon = 0;
  std::string attack_name;
  bool success = false;  // one fresh-randomness target forward at the end
};

// The on-disk artifact exchanged between attacker and verifier ("ADVX").
struct AdvBatch {
  std::vector<Tensor> originals;
  std::vector<Tensor> adversarials;
  std::vector<int64_t> labels;
  double epsilon = 0;
  std::string attack_name;
  uint64_t seed = 0;

  int64_t size() const { return static_cast<int64_t>(originals.size()); }
  void validate() const;  // shape agreement + hard bound invariant
};

void save_advbatch(const std::string& path, const AdvBatch& batch);
AdvBatch load_advbatch(const std::string& path);

// ---- attack losses (attacker maximizes both) ----
double loss_ce(const std::vector<double>& logits, int64_t y);
// min(max_{i != y} z_i - z_y, kappa); kappa = +inf disables the clamp.
double loss_hinge(const std::vector<double>& logits, int64_t y, double kappa);

// Differentiable counterpart used inside attack loops.
Tensor attack_loss_tensor(const Tensor& aggregated_logits, int64_t y,
                          AttackLoss kind, double kappa);

struct EotGradient {
  Tensor grad;        // d(loss)/d(x), averaged over draws
  double mean_loss;   // attacked-model loss averaged over the same draws
};

// Expectation-over-transformation gradient: mean of `samples` input
// gradients, each under an independent randomness draw, deterministic in
// `seed`. A model without inference randomness collapses to a single
// backward pass.
EotGradient eot_grad(const DefenseModel& model, const Tensor& x, int64_t y,
                     AttackLoss kind, double kappa, int64_t samples,
                     uint64_t seed);

// Projected sign-gradient ascent inside B_inf(x0, eps) ∩ [0,1]^n with random
// start. With `transfer_mean_surrogate` the gradient comes from a mean-
// aggregation view of the target (same weights); success and the recorded
// loss always refer to the target.
AttackTrace pgd(const DefenseModel& target, const Tensor& x, int64_t y,
                const AttackSpec& spec);

// Momentum + best-point tracking + step halving at stagnation checkpoints,
// with an optional shrinking projection radius; the returned example always
// satisfies the final epsilon bound.
AttackTrace apgd(const DefenseModel& target, const Tensor& x, int64_t y,
                 const AttackSpec& spec);

// Per sample, the first attack (in order) whose example misclassifies under
// a fresh target draw; the clean image when none does.
AdvBatch best_of_both(const DefenseModel& target,
                      const std::vector<std::vector<AttackTrace>>& per_attack,
                      uint64_t seed);

struct RobustAccuracy {
  double mean = 0;
  double stddev = 0;  // sample standard deviation across runs
  std::vector<double> per_run;
};

// Protocol evaluation: `runs` passes, each classifying every sample under
// fresh randomness; the denominator always counts all samples.
RobustAccuracy evaluate_robust(const DefenseModel& model, const AdvBatch& batch,
                               int64_t runs, uint64_t seed);

// Evaluation policy used for a single classification draw: a derived frozen
// draw when the model is configured fresh, the model's own policy otherwise.
RandomnessPolicy eval_policy(const DefenseModel& model, uint64_t seed);

// Named presets: pgd, pgd_transfer, pgd_eot, pgd_tricks, apgd, apgd_shrink,
// apgd_long.
AttackSpec attack_preset(const std::string& name, double eps, uint64_t seed);
std::vector<std::string> attack_preset_names();

// Runs `spec` over the first `count` samples (per-sample seeds derived from
// spec.seed and the sample index). `kind` is "pgd", "apgd" or "none".
struct BatchAttackResult {
  AdvBatch batch;
  std::vector<AttackTrace> traces;
};
BatchAttackResult attack_dataset(const DefenseModel& target,
                                 const Dataset& data, int64_t count,
                                 const AttackSpec& spec,
                                 const std::string& kind);

}  // namespace advkit
