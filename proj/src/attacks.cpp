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

#include "advkit/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "advkit/tensor_io.hpp"

namespace advkit {

void AttackSpec::validate() const {
  if (epsilon < 0) throw ConfigError("attack: epsilon must be >= 0");
  if (steps < 0) throw ConfigError("attack: steps must be >= 0");
  if (eot_samples < 1) throw ConfigError("attack: eot samples must be >= 1");
  if (hinge_kappa < 0) throw ConfigError("attack: kappa must be >= 0");
  if (!radius_schedule.empty()) {
    double frac = 0;
    double prev = std::numeric_limits<double>::infinity();
    for (auto& [mult, f] : radius_schedule) {
      if (mult <= 0 || f <= 0)
        throw ConfigError("attack: schedule entries must be positive");
      if (mult > prev)
        throw ConfigError("attack: schedule multipliers must be non-increasing");
      prev = mult;
      frac += f;
    }
    if (std::abs(frac - 1.0) > 1e-9)
      throw ConfigError("attack: schedule fractions must sum to 1");
    if (radius_schedule.back().first != 1.0)
      throw ConfigError("attack: schedule must end at multiplier 1");
  }
}

void AdvBatch::validate() const {
  if (originals.size() != adversarials.size() ||
      originals.size() != labels.size())
    throw FormatError("adv batch: column sizes disagree");
  for (size_t i = 0; i < originals.size(); ++i) {
    if (originals[i].shape() != adversarials[i].shape())
      throw FormatError("adv batch: sample " + std::to_string(i) +
                        " shape mismatch");
    if (linf_dist(originals[i], adversarials[i]) > epsilon + kBoundTolerance)
      throw InternalError("adv batch: sample " + std::to_string(i) +
                          " violates the epsilon bound");
  }
}

// ---- ADVX io ----

namespace {
constexpr uint32_t kAdvFormatVersion = 1;
}

void save_advbatch(const std::string& path, const AdvBatch& batch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for write: " + path);
  os.write("ADVX", 4);
  wire::put_u32(os, kAdvFormatVersion);
  wire::put_u32(os, static_cast<uint32_t>(batch.size()));
  wire::put_f64(os, batch.epsilon);
  wire::put_string(os, batch.attack_name);
  wire::put_u64(os, batch.seed);
  for (int64_t i = 0; i < batch.size(); ++i) {
    wire::put_u32(os, static_cast<uint32_t>(batch.labels[i]));
    write_tensor(os, batch.originals[i]);
    write_tensor(os, batch.adversarials[i]);
  }
  if (!os) throw FormatError("write failed: " + path);
}

AdvBatch load_advbatch(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  wire::expect_magic(is, "ADVX", "adversarial batch");
  uint32_t version = wire::get_u32(is, "batch version");
  if (version != kAdvFormatVersion)
    throw FormatError("unsupported batch version " + std::to_string(version));
  AdvBatch b;
  uint32_t n = wire::get_u32(is, "sample count");
  if (n > (1u << 20)) throw FormatError("implausible sample count");
  b.epsilon = wire::get_f64(is, "epsilon");
  b.attack_name = wire::get_string(is, "attack name");
  b.seed = wire::get_u64(is, "seed");
  for (uint32_t i = 0; i < n; ++i) {
    b.labels.push_back(wire::get_u32(is, "label"));
    b.originals.push_back(read_tensor(is));
    b.adversarials.push_back(read_tensor(is));
  }
  return b;
}

// ---- losses ----

double loss_ce(const std::vector<double>& logits, int64_t y) {
  if (y < 0 || y >= static_cast<int64_t>(logits.size()))
    throw ConfigError("loss_ce: label out of range");
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double s = 0;
  for (double v : logits) s += std::exp(v - m);
  return m + std::log(s) - logits[y];
}

double loss_hinge(const std::vector<double>& logits, int64_t y, double kappa) {
  if (logits.size() < 2) throw ConfigError("loss_hinge: need >= 2 classes");
  if (y < 0 || y >= static_cast<int64_t>(logits.size()))
    throw ConfigError("loss_hinge: label out of range");
  double other = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < logits.size(); ++i)
    if (static_cast<int64_t>(i) != y) other = std::max(other, logits[i]);
  return std::min(other - logits[y], kappa);
}

Tensor attack_loss_tensor(const Tensor& logits, int64_t y, AttackLoss kind,
                          double kappa) {
  const int64_t c = logits.numel();
  Tensor z = logits.rank() == 1 ? logits : reshape(logits, {c});
  if (kind == AttackLoss::CrossEntropy)
    return reshape(softmax_cross_entropy(z, {y}), {1});
  if (c < 2) throw ConfigError("hinge loss: need >= 2 classes");
  std::vector<int64_t> rest;
  for (int64_t i = 0; i < c; ++i)
    if (i != y) rest.push_back(i);
  Tensor margin = sub(max_axis(take_axis(z, 0, rest), 0),
                      take_axis(z, 0, {y}));
  if (!std::isfinite(kappa)) return margin;
  // min(t, kappa) = kappa - relu(kappa - t); subgradient 0 once clamped
  Tensor clamped = add_scalar(
      mul_scalar(relu(add_scalar(mul_scalar(margin, -1.0), kappa)), -1.0),
      kappa);
  return clamped;
}

// ---- attack plumbing ----

RandomnessPolicy eval_policy(const DefenseModel& model, uint64_t seed) {
  if (model.policy.mode == RandomnessPolicy::Mode::Fresh)
    return RandomnessPolicy::frozen(mix_seed(model.policy.seed, seed));
  return model.policy;
}

namespace {

// Target-model loss at x, single classification draw, no graph.
double loss_on(const DefenseModel& model, const Tensor& x, int64_t y,
               AttackLoss kind, double kappa, uint64_t seed) {
  Tensor xin = x.dtype() == model.dtype ? x : x.to_dtype(model.dtype);
  Tensor stacked =
      multires_stack(xin, model.preprocess, eval_policy(model, seed));
  Tensor agg = aggregate(model, forward_probes(model, stacked));
  return kind == AttackLoss::CrossEntropy ? loss_ce(agg.data(), y)
                                          : loss_hinge(agg.data(), y, kappa);
}

bool misclassified_on(const DefenseModel& model, const Tensor& x, int64_t y,
                      uint64_t seed) {
  Tensor xin = x.dtype() == model.dtype ? x : x.to_dtype(model.dtype);
  Tensor stacked =
      multires_stack(xin, model.preprocess, eval_policy(model, seed));
  Tensor agg = aggregate(model, forward_probes(model, stacked));
  return argmax_lowest(agg.data()) != y;
}

void assert_in_bounds(const Tensor& x, const Tensor& x0, double radius,
                      const char* where) {
  double dev = linf_dist(x, x0);
  if (dev > radius + kBoundTolerance)
    throw InternalError(std::string(where) +
                        ": perturbation bound violated, deviation " +
                        std::to_string(dev) + " > radius " +
                        std::to_string(radius));
  for (double v : x.data())
    if (v < 0.0 || v > 1.0)
      throw InternalError(std::string(where) + ": iterate left [0,1]");
}

// Projection order fixed for bit-determinism: epsilon ball first, then box.
void project(Tensor& x, const Tensor& x0, double radius) {
  clamp_ball_(x, x0, radius);
  clamp_(x, 0.0, 1.0);
}

}  // namespace

EotGradient eot_grad(const DefenseModel& model, const Tensor& x, int64_t y,
                     AttackLoss kind, double kappa, int64_t samples,
                     uint64_t seed) {
  if (samples < 1) throw ConfigError("eot_grad: samples must be >= 1");
  // A deterministic model makes every draw identical: one pass suffices and
  // equals the exact expectation.
  const int64_t draws = model.stochastic() ? samples : 1;

  Tensor leaf = x.to_dtype(model.dtype);
  leaf.set_requires_grad(true);
  double loss_sum = 0;
  for (int64_t r = 0; r < draws; ++r) {
    RandomnessPolicy draw_policy =
        model.stochastic()
            ? RandomnessPolicy::frozen(mix_seed(seed, 0xe07ULL, r))
            : model.policy;
    Tensor stacked = multires_stack(leaf, model.preprocess, draw_policy);
    Tensor agg = aggregate(model, forward_probes(model, stacked));
    Tensor loss = attack_loss_tensor(agg, y, kind, kappa);
    loss_sum += loss.item();
    backward(loss);  // leaf grads accumulate across draws
  }
  EotGradient out;
  std::vector<double> g =
      leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.numel(), 0.0);
  for (double& v : g) v /= static_cast<double>(draws);
  out.grad = Tensor::from_data(x.shape(), std::move(g), x.dtype());
  out.mean_loss = loss_sum / static_cast<double>(draws);
  return out;
}

AttackTrace pgd(const DefenseModel& target, const Tensor& x0, int64_t y,
                const AttackSpec& spec) {
  spec.validate();
  const DefenseModel attacked = spec.transfer_mean_surrogate
                                    ? target.with_aggregation(Aggregation::Mean)
                                    : target;
  const double eps = spec.epsilon;
  const double alpha =
      spec.step_size > 0
          ? spec.step_size
          : 2.5 * eps / static_cast<double>(std::max<int64_t>(1, spec.steps));

  AttackTrace trace;
  Tensor origin = x0.to_dtype(target.dtype);
  trace.original = origin;
  trace.label = y;
  trace.epsilon = eps;
  trace.attack_name = spec.name;

  // random start inside the epsilon ball
  Tensor x = origin.clone();
  if (eps > 0) {
    std::mt19937_64 rng(mix_seed(spec.seed, 0x57a27ULL));
    std::uniform_real_distribution<double> uni(-eps, eps);
    for (double& v : x.data()) v += uni(rng);
    project(x, origin, eps);
  }
  assert_in_bounds(x, origin, eps, "pgd start");

  double best = -std::numeric_limits<double>::infinity();
  for (int64_t t = 0; t < spec.steps; ++t) {
    EotGradient g = eot_grad(attacked, x, y, spec.loss, spec.hinge_kappa,
                             spec.eot_samples, mix_seed(spec.seed, 0x9dULL, t));
    double target_loss =
        spec.transfer_mean_surrogate
            ? loss_on(target, x, y, spec.loss, spec.hinge_kappa,
                      mix_seed(spec.seed, 0x7a67ULL, t))
            : g.mean_loss;
    best = std::max(best, target_loss);
    trace.steps.push_back({target_loss, eps, l2_norm(g.grad), best});

    x = axpy(alpha, sign(g.grad), x);
    project(x, origin, eps);
    assert_in_bounds(x, origin, eps, "pgd step");
  }

  trace.adversarial = x;
  trace.success =
      misclassified_on(target, x, y, mix_seed(spec.seed, 0x5ccULL));
  if (linf_dist(trace.adversarial, trace.original) > eps + kBoundTolerance)
    throw InternalError("pgd: final example violates the epsilon bound");
  return trace;
}

namespace {

// Stagnation checkpoints of the adaptive attack: p_0=0, p_1=0.22,
// p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06), scaled by the
// iteration count.
std::vector<int64_t> apgd_checkpoints(int64_t steps) {
  std::vector<double> p{0.0, 0.22};
  while (p.back() < 1.0)
    p.push_back(p.back() +
                std::max(p.back() - p[p.size() - 2] - 0.03, 0.06));
  std::vector<int64_t> w;
  for (double v : p) {
    int64_t c = static_cast<int64_t>(std::ceil(v * static_cast<double>(steps)));
    if (c >= steps) break;
    if (w.empty() || c > w.back()) w.push_back(c);
  }
  return w;
}

struct ApgdSegment {
  Tensor x_best;
  double f_best;
};

// One radius stage of the adaptive attack, maximizing the attacked-model
// loss within B_inf(x0, radius) ∩ [0,1].
ApgdSegment apgd_stage(const DefenseModel& attacked, const DefenseModel& target,
                       const Tensor& x0, const Tensor& x_init, int64_t y,
                       double radius, int64_t steps, const AttackSpec& spec,
                       uint64_t stage_seed, AttackTrace& trace, double& best) {
  constexpr double kMomentum = 0.75;
  constexpr double kRho = 0.75;
  std::vector<int64_t> checkpoints = apgd_checkpoints(steps);

  auto objective = [&](const Tensor& pt, int64_t step) {
    return eot_grad(attacked, pt, y, spec.loss, spec.hinge_kappa,
                    spec.eot_samples, mix_seed(stage_seed, 0xa9dULL, step));
  };
  auto record = [&](const Tensor& pt, double grad_norm, int64_t step,
                    double att_loss) {
    double target_loss =
        spec.transfer_mean_surrogate
            ? loss_on(target, pt, y, spec.loss, spec.hinge_kappa,
                      mix_seed(stage_seed, 0x7a67ULL, step))
            : att_loss;
    best = std::max(best, target_loss);
    trace.steps.push_back({target_loss, radius, grad_norm, best});
  };

  double eta = 2.0 * radius;
  Tensor x_prev = x_init.clone();
  Tensor x = x_init.clone();

  EotGradient g0 = objective(x, 0);
  record(x, l2_norm(g0.grad), 0, g0.mean_loss);
  Tensor x_best = x.clone();
  double f_best = g0.mean_loss;

  // first iterate: plain sign step
  Tensor x_next = axpy(eta, sign(g0.grad), x);
  project(x_next, x0, radius);
  assert_in_bounds(x_next, x0, radius, "apgd step");
  double f_prev_iter = g0.mean_loss;
  x_prev = x;
  x = x_next;

  int64_t since_rise = 0;          // f increases within the current window
  double f_best_at_checkpoint = f_best;
  double eta_at_checkpoint = eta;
  size_t next_cp = 0;
  while (next_cp < checkpoints.size() && checkpoints[next_cp] <= 1) ++next_cp;

  for (int64_t k = 1; k < steps; ++k) {
    EotGradient gk = objective(x, k);
    record(x, l2_norm(gk.grad), k, gk.mean_loss);
    if (gk.mean_loss > f_best) {
      f_best = gk.mean_loss;
      x_best = x.clone();
    }
    if (gk.mean_loss > f_prev_iter) ++since_rise;
    f_prev_iter = gk.mean_loss;

    // momentum update
    Tensor z = axpy(eta, sign(gk.grad), x);
    project(z, x0, radius);
    Tensor step = x.clone();
    auto& sv = step.data();
    const auto& zv = z.data();
    const auto& xv = x.data();
    const auto& pv = x_prev.data();
    for (size_t i = 0; i < sv.size(); ++i)
      sv[i] = xv[i] + kMomentum * (zv[i] - xv[i]) +
              (1.0 - kMomentum) * (xv[i] - pv[i]);
    project(step, x0, radius);
    assert_in_bounds(step, x0, radius, "apgd step");
    x_prev = x;
    x = step;

    if (next_cp < checkpoints.size() && k + 1 == checkpoints[next_cp]) {
      const int64_t window =
          checkpoints[next_cp] - (next_cp ? checkpoints[next_cp - 1] : 0);
      const bool few_rises =
          static_cast<double>(since_rise) < kRho * static_cast<double>(window);
      const bool stalled =
          eta == eta_at_checkpoint && f_best == f_best_at_checkpoint;
      if (few_rises || stalled) {
        eta /= 2.0;
        x = x_best.clone();
        x_prev = x.clone();
      }
      since_rise = 0;
      f_best_at_checkpoint = f_best;
      eta_at_checkpoint = eta;
      ++next_cp;
    }
  }
  return {x_best, f_best};
}

}  // namespace

AttackTrace apgd(const DefenseModel& target, const Tensor& x0, int64_t y,
                 const AttackSpec& spec) {
  spec.validate();
  const DefenseModel attacked = spec.transfer_mean_surrogate
                                    ? target.with_aggregation(Aggregation::Mean)
                                    : target;

  // stage plan: (radius, step count)
  std::vector<std::pair<double, int64_t>> stages;
  if (spec.radius_schedule.empty()) {
    stages.push_back({spec.epsilon, spec.steps});
  } else {
    int64_t used = 0;
    for (size_t i = 0; i < spec.radius_schedule.size(); ++i) {
      auto [mult, frac] = spec.radius_schedule[i];
      int64_t len =
          i + 1 == spec.radius_schedule.size()
              ? spec.steps - used
              : static_cast<int64_t>(
                    std::llround(frac * static_cast<double>(spec.steps)));
      stages.push_back({mult * spec.epsilon, len});
      used += len;
    }
  }

  AttackTrace trace;
  Tensor origin = x0.to_dtype(target.dtype);
  trace.original = origin;
  trace.label = y;
  trace.epsilon = spec.epsilon;
  trace.attack_name = spec.name;

  Tensor x = origin.clone();
  double best = -std::numeric_limits<double>::infinity();
  Tensor final_best = origin.clone();
  for (size_t s = 0; s < stages.size(); ++s) {
    auto [radius, len] = stages[s];
    if (len <= 0) continue;
    project(x, origin, radius);  // re-project the carried-over point
    ApgdSegment seg =
        apgd_stage(attacked, target, origin, x, y, radius, len, spec,
                   mix_seed(spec.seed, 0x575aULL, s), trace, best);
    x = seg.x_best.clone();
    final_best = seg.x_best;
  }

  project(final_best, origin, spec.epsilon);
  trace.adversarial = final_best;
  trace.success =
      misclassified_on(target, final_best, y, mix_seed(spec.seed, 0x5ccULL));
  if (linf_dist(trace.adversarial, trace.original) >
      spec.epsilon + kBoundTolerance)
    throw InternalError("apgd: final example violates the epsilon bound");
  return trace;
}

AdvBatch best_of_both(const DefenseModel& target,
                      const std::vector<std::vector<AttackTrace>>& per_attack,
                      uint64_t seed) {
  if (per_attack.empty() || per_attack[0].empty())
    throw ConfigError("best_of_both: no traces");
  const size_t n = per_attack[0].size();
  const double eps = per_attack[0][0].epsilon;
  for (const auto& traces : per_attack) {
    if (traces.size() != n)
      throw ConfigError("best_of_both: attacks cover different sample counts");
    for (size_t i = 0; i < n; ++i) {
      if (traces[i].epsilon != eps)
        throw ConfigError("best_of_both: mismatched epsilon across traces");
      if (traces[i].label != per_attack[0][i].label ||
          traces[i].original.data() != per_attack[0][i].original.data())
        throw ConfigError("best_of_both: traces disagree on the clean sample");
    }
  }

  AdvBatch out;
  out.epsilon = eps;
  out.attack_name = "best";
  out.seed = seed;
  for (size_t i = 0; i < n; ++i) {
    const AttackTrace& base = per_attack[0][i];
    out.labels.push_back(base.label);
    out.originals.push_back(base.original.clone());
    Tensor chosen = base.original.clone();  // clean image when all fail
    for (size_t a = 0; a < per_attack.size(); ++a) {
      const AttackTrace& tr = per_attack[a][i];
      if (misclassified_on(target, tr.adversarial, tr.label,
                           mix_seed(seed, 0xb0bULL, i, a))) {
        chosen = tr.adversarial.clone();
        break;  // first successful attack in configured order
      }
    }
    out.adversarials.push_back(chosen);
  }
  out.validate();
  return out;
}

RobustAccuracy evaluate_robust(const DefenseModel& model, const AdvBatch& batch,
                               int64_t runs, uint64_t seed) {
  if (runs < 1) throw ConfigError("evaluate_robust: runs must be >= 1");
  RobustAccuracy out;
  const int64_t n = batch.size();
  if (n == 0) throw ConfigError("evaluate_robust: empty batch");
  for (int64_t r = 0; r < runs; ++r) {
    int64_t correct = 0;
    for (int64_t i = 0; i < n; ++i) {
      Prediction p = predict(model, batch.adversarials[i],
                             eval_policy(model, mix_seed(seed, r, i)));
      correct += p.label == batch.labels[i];
    }
    out.per_run.push_back(static_cast<double>(correct) /
                          static_cast<double>(n));
  }
  double sum = std::accumulate(out.per_run.begin(), out.per_run.end(), 0.0);
  out.mean = sum / static_cast<double>(runs);
  const bool constant = std::all_of(
      out.per_run.begin(), out.per_run.end(),
      [&](double a) { return a == out.per_run.front(); });
  if (constant) {
    out.stddev = 0.0;  // identical runs have exactly zero spread
  } else {
    double sq = 0;
    for (double a : out.per_run) sq += (a - out.mean) * (a - out.mean);
    out.stddev = runs > 1 ? std::sqrt(sq / static_cast<double>(runs - 1)) : 0.0;
  }
  return out;
}

AttackSpec attack_preset(const std::string& name, double eps, uint64_t seed) {
  AttackSpec s;
  s.epsilon = eps;
  s.seed = seed;
  s.name = name;
  if (name == "pgd") {
    s.steps = 500;
  } else if (name == "pgd_transfer") {
    s.steps = 500;
    s.transfer_mean_surrogate = true;
  } else if (name == "pgd_eot") {
    s.steps = 500;
    s.transfer_mean_surrogate = true;
    s.eot_samples = 16;
  } else if (name == "pgd_tricks") {
    // 500 base steps + 400 extra, 100 EoT draws, margin loss, transfer
    s.steps = 900;
    s.transfer_mean_surrogate = true;
    s.eot_samples = 100;
    s.loss = AttackLoss::Hinge;
    s.hinge_kappa = 0;
  } else if (name == "apgd") {
    s.steps = 100;
    s.transfer_mean_surrogate = true;
    s.eot_samples = 100;
  } else if (name == "apgd_shrink") {
    s.steps = 100;
    s.transfer_mean_surrogate = true;
    s.eot_samples = 100;
    s.radius_schedule = {{3, 0.3}, {2, 0.3}, {1, 0.4}};
  } else if (name == "apgd_long") {
    s.steps = 1000;
    s.transfer_mean_surrogate = true;
    s.eot_samples = 100;
    s.radius_schedule = {{3, 0.3}, {2, 0.3}, {1, 0.4}};
  } else {
    throw ConfigError("unknown attack preset '" + name + "'");
  }
  return s;
}

std::vector<std::string> attack_preset_names() {
  return {"pgd",        "pgd_transfer", "pgd_eot", "pgd_tricks",
          "apgd",       "apgd_shrink",  "apgd_long"};
}

BatchAttackResult attack_dataset(const DefenseModel& target,
                                 const Dataset& data, int64_t count,
                                 const AttackSpec& spec,
                                 const std::string& kind) {
  if (count < 1 || count > data.size())
    throw ConfigError("attack_dataset: sample count out of range");
  BatchAttackResult out;
  out.batch.epsilon = spec.epsilon;
  out.batch.attack_name = spec.name;
  out.batch.seed = spec.seed;
  for (int64_t i = 0; i < count; ++i) {
    const Tensor& x = data.images[i];
    const int64_t y = data.labels[i];
    if (kind == "none") {
      AttackTrace tr;
      tr.original = x.clone();
      tr.adversarial = x.clone();
      tr.label = y;
      tr.epsilon = spec.epsilon;
      tr.attack_name = "none";
      out.traces.push_back(std::move(tr));
    } else {
      AttackSpec per_sample = spec;
      per_sample.seed = mix_seed(spec.seed, static_cast<uint64_t>(i));
      AttackTrace tr = kind == "apgd" ? apgd(target, x, y, per_sample)
                                      : pgd(target, x, y, per_sample);
      out.traces.push_back(std::move(tr));
    }
    out.batch.originals.push_back(out.traces.back().original);
    out.batch.adversarials.push_back(out.traces.back().adversarial);
    out.batch.labels.push_back(y);
  }
  out.batch.validate();
  return out;
}

}  // namespace advkit
