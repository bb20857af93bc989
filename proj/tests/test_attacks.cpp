#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "advkit/attacks.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace advkit;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

DefenseModel stochastic_net(uint64_t seed = 3) {
  return make_tiny_net(8, {8, 4}, 4, 0.1, 0.1, seed, DType::F64);
}

Tensor half_image(int64_t d) { return Tensor::full({3, d, d}, 0.5, DType::F64); }

}  // namespace

TEST_CASE("cross-entropy attack loss basics") {
  // uniform logits: exactly ln C
  for (int64_t c : {2, 5, 10}) {
    std::vector<double> z(c, 0.7);
    CHECK(loss_ce(z, 0) ==
          doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-12));
  }
  // one-hot * 10 for C=10: closed form ln(1 + 9 e^{-10})
  std::vector<double> onehot(10, 0.0);
  onehot[3] = 10.0;
  const double expect = std::log1p(9.0 * std::exp(-10.0));  // 4.0852e-4
  CHECK(loss_ce(onehot, 3) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(loss_ce(onehot, 3) == doctest::Approx(4.0851590698e-4).epsilon(1e-9));
  CHECK(loss_ce(onehot, 3) ==
        doctest::Approx(oracles::cross_entropy_reference(onehot, 3))
            .epsilon(1e-12));
  // shift invariance
  std::vector<double> z{0.4, -1.0, 2.2};
  std::vector<double> shifted{0.4 + 3.5, -1.0 + 3.5, 2.2 + 3.5};
  CHECK(loss_ce(z, 1) == doctest::Approx(loss_ce(shifted, 1)).epsilon(1e-12));
}

TEST_CASE("hinge attack loss basics") {
  CHECK(loss_hinge({5, 1}, 0, kInf) == -4);
  CHECK(loss_hinge({1, 5}, 0, 0.0) == 0);  // clamped, already misclassified
  CHECK_THROWS_AS(loss_hinge({1}, 0, 0.0), ConfigError);

  // tensor form agrees and has zero gradient in the clamped region
  Tensor za = Tensor::from_data({2}, {5, 1}, DType::F64);
  CHECK(attack_loss_tensor(za, 0, AttackLoss::Hinge, kInf).item() == -4);
  Tensor zb = Tensor::from_data({2}, {1, 5}, DType::F64);
  zb.set_requires_grad(true);
  Tensor clamped = attack_loss_tensor(zb, 0, AttackLoss::Hinge, 0.0);
  CHECK(clamped.item() == 0.0);
  backward(clamped);
  CHECK(zb.grad() == std::vector<double>{0, 0});

  // unclamped region: gradient +1 at the runner-up, -1 at the label
  Tensor zc = Tensor::from_data({3}, {5, 1, 2}, DType::F64);
  zc.set_requires_grad(true);
  backward(attack_loss_tensor(zc, 0, AttackLoss::Hinge, 0.0));
  CHECK(zc.grad() == std::vector<double>{-1, 0, 1});
}

TEST_CASE("eot gradient collapses to one pass on deterministic models") {
  DefenseModel det = make_tiny_net(8, {8, 4}, 4, 0.0, 0.0, 5, DType::F64);
  Tensor x = half_image(8);
  EotGradient g1 = eot_grad(det, x, 1, AttackLoss::CrossEntropy, 0, 1, 42);
  EotGradient g8 = eot_grad(det, x, 1, AttackLoss::CrossEntropy, 0, 8, 1234);
  CHECK(g1.grad.data() == g8.grad.data());  // bitwise: same single pass
  CHECK(g1.mean_loss == g8.mean_loss);
}

TEST_CASE("eot gradient is deterministic in its seed and varies across seeds") {
  DefenseModel m = stochastic_net();
  Tensor x = half_image(8);
  EotGradient a = eot_grad(m, x, 2, AttackLoss::CrossEntropy, 0, 4, 7);
  EotGradient b = eot_grad(m, x, 2, AttackLoss::CrossEntropy, 0, 4, 7);
  EotGradient c = eot_grad(m, x, 2, AttackLoss::CrossEntropy, 0, 4, 8);
  CHECK(a.grad.data() == b.grad.data());
  CHECK(a.grad.data() != c.grad.data());
}

TEST_CASE("eot variance shrinks roughly like 1/R") {
  DefenseModel m = stochastic_net();
  Tensor x = half_image(8);
  const int trials = 60;
  auto grad_var = [&](int64_t R) {
    // mean over coordinates of the across-seed variance
    std::vector<std::vector<double>> grads;
    for (int t = 0; t < trials; ++t)
      grads.push_back(
          eot_grad(m, x, 1, AttackLoss::CrossEntropy, 0, R, 1000 + t).grad
              .data());
    const size_t n = grads[0].size();
    double total = 0;
    for (size_t i = 0; i < n; ++i) {
      double mean = 0;
      for (auto& g : grads) mean += g[i];
      mean /= trials;
      double var = 0;
      for (auto& g : grads) var += (g[i] - mean) * (g[i] - mean);
      total += var / (trials - 1);
    }
    return total / static_cast<double>(n);
  };
  double v1 = grad_var(1);
  double v8 = grad_var(8);
  CHECK(v8 * 8.0 / v1 > 1.0 / 3.0);
  CHECK(v8 * 8.0 / v1 < 3.0);
}

TEST_CASE("pgd with epsilon zero returns the input bitwise") {
  DefenseModel m = stochastic_net();
  Tensor x = half_image(8);
  AttackSpec spec;
  spec.epsilon = 0;
  spec.steps = 3;
  spec.seed = 9;
  AttackTrace tr = pgd(m, x, 1, spec);
  CHECK(tr.adversarial.data() == x.data());
}

TEST_CASE("one large sign step on a linear model saturates the budget") {
  const int64_t d = 8;
  std::mt19937_64 rng(15);
  Tensor w = Tensor::randn({2, 3 * d * d}, rng, 1.0, DType::F64);
  Tensor b = Tensor::zeros({2}, DType::F64);
  DefenseModel lin = test_models::linear_model(d, w, b);
  Tensor x0 = half_image(d);

  AttackSpec spec;
  spec.epsilon = 8.0 / 255.0;
  spec.steps = 1;  // alpha = 2.5 eps >= 2 eps, so the ball clamp binds
  spec.seed = 21;
  AttackTrace tr = pgd(lin, x0, 0, spec);

  // maximizing CE of class 0 pushes along sign(w1 - w0)
  for (int64_t i = 0; i < x0.numel(); ++i) {
    double expect_sign = (w.data()[3 * d * d + i] - w.data()[i]) > 0 ? 1 : -1;
    double delta = tr.adversarial.data()[i] - x0.data()[i];
    CHECK(delta == doctest::Approx(expect_sign * spec.epsilon).epsilon(1e-12));
  }
}

TEST_CASE("pgd succeeds on a boundary placed inside the epsilon ball") {
  const int64_t d = 8;
  Tensor x0 = half_image(d);
  const double eps = 8.0 / 255.0;
  // margin well below the reachable eps * n
  DefenseModel m = test_models::boundary_model(d, 0.3 * eps * x0.numel(), x0);
  CHECK(predict(m, x0).label == 0);

  AttackSpec spec;
  spec.epsilon = eps;
  spec.steps = 20;
  for (uint64_t s = 0; s < 10; ++s) {
    spec.seed = s;
    AttackTrace tr = pgd(m, x0, 0, spec);
    CHECK(tr.success);
    CHECK(predict(m, tr.adversarial).label == 1);
  }
}

TEST_CASE("pgd loss trace is non-decreasing on a deterministic mean model") {
  // convex objective (linear logits), randomness off, no transfer
  const int64_t d = 8;
  std::mt19937_64 rng(33);
  Tensor w = Tensor::randn({3, 3 * d * d}, rng, 0.3, DType::F64);
  DefenseModel lin = test_models::linear_model(d, w, Tensor::zeros({3}, DType::F64));
  AttackSpec spec;
  spec.epsilon = 0.05;
  spec.steps = 15;
  spec.seed = 3;
  AttackTrace tr = pgd(lin, half_image(d), 0, spec);
  for (size_t i = 1; i < tr.steps.size(); ++i)
    CHECK(tr.steps[i].loss >= tr.steps[i - 1].loss - 1e-12);
}

TEST_CASE("apgd radius trace follows the shrinking schedule exactly") {
  DefenseModel m = stochastic_net();
  Tensor x = half_image(8);
  AttackSpec spec;
  spec.name = "apgd";
  spec.epsilon = 8.0 / 255.0;
  spec.steps = 100;
  spec.eot_samples = 1;
  spec.radius_schedule = {{3, 0.3}, {2, 0.3}, {1, 0.4}};
  spec.seed = 5;
  AttackTrace tr = apgd(m, x, 1, spec);
  REQUIRE(tr.steps.size() == 100);
  for (int i = 0; i < 30; ++i)
    CHECK(tr.steps[i].radius == doctest::Approx(3 * spec.epsilon));
  for (int i = 30; i < 60; ++i)
    CHECK(tr.steps[i].radius == doctest::Approx(2 * spec.epsilon));
  for (int i = 60; i < 100; ++i)
    CHECK(tr.steps[i].radius == doctest::Approx(spec.epsilon));
  CHECK(linf_dist(tr.adversarial, tr.original) <=
        spec.epsilon + kBoundTolerance);

  // best-so-far channel is a running max by construction
  for (size_t i = 1; i < tr.steps.size(); ++i) {
    CHECK(tr.steps[i].best_loss >= tr.steps[i - 1].best_loss);
    CHECK(tr.steps[i].best_loss >= tr.steps[i].loss - 1e-15);
  }
}

TEST_CASE("apgd with an empty schedule keeps a constant radius") {
  DefenseModel m = stochastic_net();
  Tensor x = half_image(8);
  AttackSpec spec;
  spec.epsilon = 0.03;
  spec.steps = 12;
  spec.eot_samples = 1;
  spec.seed = 2;
  AttackTrace tr = apgd(m, x, 0, spec);
  for (const StepRecord& s : tr.steps)
    CHECK(s.radius == doctest::Approx(0.03));
}

TEST_CASE("malformed radius schedules are rejected") {
  AttackSpec spec;
  spec.radius_schedule = {{3, 0.5}, {2, 0.5}};  // does not end at 1
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.radius_schedule = {{1, 0.4}, {2, 0.6}};  // increasing multiplier
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.radius_schedule = {{2, 0.3}, {1, 0.3}};  // fractions sum to 0.6
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("apgd finds the in-ball boundary too") {
  const int64_t d = 8;
  Tensor x0 = half_image(d);
  const double eps = 8.0 / 255.0;
  DefenseModel m = test_models::boundary_model(d, 0.3 * eps * x0.numel(), x0);
  AttackSpec spec;
  spec.epsilon = eps;
  spec.steps = 30;
  spec.seed = 11;
  AttackTrace tr = apgd(m, x0, 0, spec);
  CHECK(tr.success);
}

TEST_CASE("best_of_both keeps the first success and falls back to clean") {
  const int64_t d = 8;
  Tensor x0 = half_image(d);
  const double eps = 8.0 / 255.0;
  DefenseModel m = test_models::boundary_model(d, 0.3 * eps * x0.numel(), x0);

  AttackSpec weak;  // zero steps: stays at the random start, fails
  weak.epsilon = eps;
  weak.steps = 0;
  weak.name = "weak";
  weak.seed = 1;
  AttackSpec strong;
  strong.epsilon = eps;
  strong.steps = 20;
  strong.name = "strong";
  strong.seed = 1;

  AttackTrace t_weak = pgd(m, x0, 0, weak);
  AttackTrace t_strong = pgd(m, x0, 0, strong);
  REQUIRE_FALSE(t_weak.success);
  REQUIRE(t_strong.success);

  AdvBatch both = best_of_both(m, {{t_weak}, {t_strong}}, 77);
  CHECK(both.adversarials[0].data() == t_strong.adversarial.data());

  AdvBatch none = best_of_both(m, {{t_weak}}, 77);
  CHECK(none.adversarials[0].data() == x0.data());  // clean retained

  AttackTrace bad_eps = t_weak;
  bad_eps.epsilon = eps / 2;
  CHECK_THROWS_AS(best_of_both(m, {{t_strong}, {bad_eps}}, 1), ConfigError);
}

TEST_CASE("composition accuracy never beats its components (frozen draws)") {
  // deterministic model: per-sample outcomes are pure functions, so
  // best-of-both accuracy == AND of component correctness
  const int64_t d = 8;
  std::mt19937_64 rng(8);
  const double eps = 0.05;
  Dataset ds = synth_dataset(2, 6, d, 19, 0.03, 0.3);
  Tensor w = Tensor::randn({2, 3 * d * d}, rng, 0.4, DType::F64);
  DefenseModel lin = test_models::linear_model(d, w, Tensor::zeros({2}, DType::F64));

  AttackSpec a;
  a.epsilon = eps;
  a.steps = 4;
  a.name = "a";
  a.seed = 100;
  AttackSpec b = a;
  b.steps = 25;
  b.name = "b";
  b.seed = 200;

  BatchAttackResult ra = attack_dataset(lin, ds, ds.size(), a, "pgd");
  BatchAttackResult rb = attack_dataset(lin, ds, ds.size(), b, "pgd");
  AdvBatch both = best_of_both(lin, {ra.traces, rb.traces}, 3);

  RobustAccuracy acc_a = evaluate_robust(lin, ra.batch, 10, 5);
  RobustAccuracy acc_b = evaluate_robust(lin, rb.batch, 10, 5);
  RobustAccuracy acc_both = evaluate_robust(lin, both, 10, 5);
  CHECK(acc_both.mean <= std::min(acc_a.mean, acc_b.mean) + 1e-12);
}

TEST_CASE("evaluate_robust protocol: all samples count, std reflects policy") {
  const int64_t d = 8;
  Tensor x0 = half_image(d);
  // hand-built two-class model: predicts 1 iff mean pixel > 0.5
  std::vector<double> w(2 * 3 * d * d, 0.0);
  for (int64_t i = 0; i < 3 * d * d; ++i) w[3 * d * d + i] = 1.0;
  DefenseModel m = test_models::linear_model(
      d, Tensor::from_data({2, 3 * d * d}, std::move(w), DType::F64),
      Tensor::from_data({2}, {0.5 * 3 * d * d, 0.0}, DType::F64));

  AdvBatch batch;
  batch.epsilon = 0.1;
  batch.attack_name = "hand";
  batch.seed = 0;
  // sample 0: all 0.6 -> predicts 1, label 1: correct
  // sample 1: all 0.4 -> predicts 0, label 1: wrong (clean-misclassified)
  // sample 2: all 0.7 -> predicts 1, label 0: wrong
  std::vector<double> fills{0.6, 0.4, 0.7};
  std::vector<int64_t> labels{1, 1, 0};
  for (int i = 0; i < 3; ++i) {
    Tensor img = Tensor::full({3, d, d}, fills[i], DType::F64);
    batch.originals.push_back(img.clone());
    batch.adversarials.push_back(img);
    batch.labels.push_back(labels[i]);
  }
  RobustAccuracy acc = evaluate_robust(m, batch, 10, 3);
  CHECK(acc.per_run.size() == 10);
  // deterministic model: every run identical, 1 of 3 correct
  CHECK(acc.mean == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(acc.stddev == 0.0);
}

TEST_CASE("evaluate_robust on clean batches reproduces clean accuracy") {
  DefenseModel m = stochastic_net(77);
  Dataset ds = synth_dataset(4, 3, 8, 31, 0.02, 1.0);
  AttackSpec id_spec;
  id_spec.epsilon = 0.03;
  id_spec.name = "none";
  BatchAttackResult res = attack_dataset(m, ds, ds.size(), id_spec, "none");
  RobustAccuracy acc = evaluate_robust(m, res.batch, 10, 9);
  // untrained stochastic model: just check protocol plumbing
  CHECK(acc.per_run.size() == 10);
  for (double a : acc.per_run) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("adv batch serialization round trip") {
  const int64_t d = 8;
  std::mt19937_64 rng(12);
  AdvBatch b;
  b.epsilon = 8.0 / 255.0;
  b.attack_name = "pgd_tricks";
  b.seed = 987654321;
  for (int i = 0; i < 3; ++i) {
    Tensor orig = Tensor::rand_uniform({3, d, d}, rng, 0, 1, DType::F32);
    std::vector<double> shifted = orig.data();
    for (double& v : shifted)
      v = std::clamp(v + (rng() % 2 ? 1 : -1) * 0.01, 0.0, 1.0);
    b.originals.push_back(orig);
    b.adversarials.push_back(
        Tensor::from_data({3, d, d}, std::move(shifted), DType::F32));
    b.labels.push_back(i);
  }
  fs::path p = fs::temp_directory_path() / "advkit_test_batch.advx";
  save_advbatch(p.string(), b);
  AdvBatch back = load_advbatch(p.string());
  CHECK(back.epsilon == b.epsilon);
  CHECK(back.attack_name == b.attack_name);
  CHECK(back.seed == b.seed);
  CHECK(back.labels == b.labels);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.originals[i].data() == b.originals[i].data());
    CHECK(back.adversarials[i].data() == b.adversarials[i].data());
  }
  fs::remove(p);
}

TEST_CASE("attack presets carry the documented knobs") {
  AttackSpec tricks = attack_preset("pgd_tricks", 8.0 / 255.0, 1);
  CHECK(tricks.steps == 900);
  CHECK(tricks.eot_samples == 100);
  CHECK(tricks.loss == AttackLoss::Hinge);
  CHECK(tricks.hinge_kappa == 0);
  CHECK(tricks.transfer_mean_surrogate);

  AttackSpec shrink = attack_preset("apgd_shrink", 8.0 / 255.0, 1);
  REQUIRE(shrink.radius_schedule.size() == 3);
  CHECK(shrink.radius_schedule[0].first == 3);
  CHECK(shrink.radius_schedule[2].second == doctest::Approx(0.4));
  CHECK(shrink.steps == 100);

  CHECK_THROWS_AS(attack_preset("mystery", 0.03, 1), ConfigError);
}
