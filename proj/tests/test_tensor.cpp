#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "advkit/tensor.hpp"
#include "advkit/tensor_io.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace advkit;

namespace {

Tensor leaf(Shape shape, std::vector<double> vals) {
  Tensor t = Tensor::from_data(std::move(shape), std::move(vals), DType::F64);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("elementwise forward basics") {
  Tensor a = Tensor::from_data({3}, {-1, 0, 2}, DType::F64);
  Tensor r = relu(a);
  CHECK(r.data() == std::vector<double>{0, 0, 2});

  Tensor b = Tensor::from_data({3}, {1, 2, 3}, DType::F64);
  CHECK(add(a, b).data() == std::vector<double>{0, 2, 5});
  CHECK(mul(a, b).data() == std::vector<double>{-1, 0, 6});
  CHECK_THROWS_AS(add(a, Tensor::from_data({2}, {1, 2}, DType::F64)),
                  DimensionError);
}

TEST_CASE("broadcast sub matches manual expansion") {
  // [2,3] - [2,1] and [2,3] - [1,3]
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, DType::F64);
  Tensor rows = Tensor::from_data({2, 1}, {1, 10}, DType::F64);
  Tensor cols = Tensor::from_data({1, 3}, {1, 2, 3}, DType::F64);
  CHECK(sub(a, rows).data() == std::vector<double>{0, 1, 2, -6, -5, -4});
  CHECK(sub(a, cols).data() == std::vector<double>{0, 0, 0, 3, 3, 3});
}

TEST_CASE("conv of all-ones 3x3 with all-ones 3x3 kernel is 9") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0, DType::F64);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0, DType::F64);
  Tensor out = conv2d(x, w, Tensor(), 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out.item() == doctest::Approx(9.0));
}

TEST_CASE("bilinear resize preserves constants and is identity at same size") {
  std::mt19937_64 rng(7);
  Tensor c = Tensor::full({1, 3, 8, 8}, 0.37, DType::F64);
  for (int64_t d : {1, 2, 3, 5, 8}) {
    Tensor down = resize_bilinear(c, d, d);
    Tensor up = resize_bilinear(down, 8, 8);
    for (double v : up.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
  Tensor x = Tensor::rand_uniform({1, 2, 6, 6}, rng, 0, 1, DType::F64);
  Tensor same = resize_bilinear(x, 6, 6);
  CHECK(same.data() == x.data());  // bitwise
}

TEST_CASE("backward: sum of squares") {
  Tensor x = leaf({2}, {1, 2});
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  CHECK(x.grad() == std::vector<double>{2, 4});
}

TEST_CASE("max tie routes to lowest index") {
  Tensor x = leaf({2}, {3, 3});
  Tensor m = max_axis(x, 0);
  backward(sum_all(m));
  CHECK(x.grad() == std::vector<double>{1, 0});
}

TEST_CASE("double backward without fresh forward is a stale-graph error") {
  Tensor x = leaf({2}, {1, 2});
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), StaleGraphError);
}

TEST_CASE("leaf gradients accumulate across independent graphs") {
  Tensor x = leaf({2}, {1, 2});
  backward(sum_all(mul(x, x)));
  backward(sum_all(mul(x, x)));
  CHECK(x.grad() == std::vector<double>{4, 8});
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("sort is a permutation and routes gradients by source position") {
  std::mt19937_64 rng(11);
  Tensor x = Tensor::randn({4, 5}, rng, 1.0, DType::F64);
  x.set_requires_grad(true);
  Tensor s = sort_axis(x, 0, true);
  // multiset equality per column
  for (int64_t c = 0; c < 5; ++c) {
    std::vector<double> in, out;
    for (int64_t r = 0; r < 4; ++r) {
      in.push_back(x.at({r, c}));
      out.push_back(s.at({r, c}));
    }
    std::sort(in.begin(), in.end());
    std::sort(out.begin(), out.end());
    CHECK(in == out);
  }
  // weighting the sorted output by row index must hit the source elements
  Tensor wts = Tensor::from_data({4, 1}, {1, 2, 3, 4}, DType::F64);
  backward(sum_all(mul(s, wts)));
  // each input element receives the weight of its sorted rank
  for (int64_t c = 0; c < 5; ++c) {
    std::vector<std::pair<double, int64_t>> vals;
    for (int64_t r = 0; r < 4; ++r) vals.push_back({x.at({r, c}), r});
    std::sort(vals.begin(), vals.end(),
              [](auto a, auto b) { return a.first > b.first; });
    for (int64_t rank = 0; rank < 4; ++rank)
      CHECK(x.grad()[vals[rank].second * 5 + c] ==
            doctest::Approx(rank + 1.0));
  }
}

TEST_CASE("backward through sort then inverse permutation equals identity") {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = Tensor::randn({6}, rng, 1.0, DType::F64);
    Tensor w = Tensor::randn({6}, rng, 1.0, DType::F64);

    Tensor x1 = x.clone().set_requires_grad(true);
    Tensor s = sort_axis(x1, 0, true);
    // invert the permutation via the sorted values' original positions
    std::vector<std::pair<double, int64_t>> vals;
    for (int64_t i = 0; i < 6; ++i) vals.push_back({x.data()[i], i});
    std::stable_sort(vals.begin(), vals.end(),
                     [](auto a, auto b) { return a.first > b.first; });
    std::vector<int64_t> inv(6);
    for (int64_t rank = 0; rank < 6; ++rank) inv[vals[rank].second] = rank;
    Tensor restored = take_axis(s, 0, inv);
    CHECK(restored.data() == x.data());
    backward(sum_all(mul(restored, w)));

    Tensor x2 = x.clone().set_requires_grad(true);
    backward(sum_all(mul(x2, w)));
    CHECK(x1.grad() == x2.grad());
  }
}

TEST_CASE("softmax cross entropy forward matches closed form") {
  std::vector<double> z{0.3, -1.2, 2.0, 0.0};
  Tensor logits = Tensor::from_data({1, 4}, std::vector<double>(z), DType::F64);
  Tensor l = softmax_cross_entropy(logits, {2});
  CHECK(l.data()[0] ==
        doctest::Approx(oracles::cross_entropy_reference(z, 2)).epsilon(1e-12));
}

TEST_CASE("gaussian noise is a constant for the gradient and seeded") {
  std::mt19937_64 r1(42), r2(42), r3(43);
  Tensor x = leaf({8}, std::vector<double>(8, 0.5));
  Tensor n1 = gaussian_noise(x, 0.3, r1);
  Tensor n2 = gaussian_noise(x, 0.3, r2);
  Tensor n3 = gaussian_noise(x, 0.3, r3);
  CHECK(n1.data() == n2.data());  // bit-identical for equal seeds
  CHECK(n1.data() != n3.data());
  backward(sum_all(n1));
  CHECK(x.grad() == std::vector<double>(8, 1.0));
}

TEST_CASE("f32 mode rounds values through float") {
  Tensor t = Tensor::from_data({1}, {0.1}, DType::F32);
  CHECK(t.data()[0] == static_cast<double>(0.1f));
  Tensor d = Tensor::from_data({1}, {0.1}, DType::F64);
  CHECK(d.data()[0] == 0.1);
}

TEST_CASE("non-finite outputs are rejected") {
  Tensor big = Tensor::full({2}, 1e308, DType::F64);
  CHECK_THROWS_AS(add(big, big), NumericError);
}

TEST_CASE("tensor serialization round trip") {
  namespace fs = std::filesystem;
  std::mt19937_64 rng(3);
  fs::path p = fs::temp_directory_path() / "advkit_test_tensor.tnsr";
  for (DType dt : {DType::F32, DType::F64}) {
    Tensor t = Tensor::randn({2, 3, 4}, rng, 1.0, dt);
    save_tensor(p.string(), t);
    Tensor back = load_tensor(p.string());
    CHECK(back.shape() == t.shape());
    CHECK(back.dtype() == t.dtype());
    CHECK(back.data() == t.data());  // bitwise
  }
  // truncated file
  {
    std::ofstream os(p, std::ios::binary);
    os << "TNSR";
  }
  CHECK_THROWS_AS(load_tensor(p.string()), FormatError);
  fs::remove(p);
}

// ---- finite-difference gradient checks ----

namespace {

// Builds one randomly-shaped composite graph out of the operator set and
// checks kink margins (relu/max/pool/sort inputs comfortably away from ties)
// so the finite-difference probe cannot cross a subgradient boundary.
// `build` maps an input tensor of shape `shape` to a scalar loss tensor and
// is shared by the analytic and finite-difference paths.
struct FdInstance {
  Shape shape;
  std::vector<double> x0;
  std::function<Tensor(const Tensor&)> build;
  bool valid = false;

  double loss(const std::vector<double>& v) const {
    return build(Tensor::from_data(shape, v, DType::F64)).item();
  }
  std::vector<double> analytic_grad() const {
    Tensor xx = Tensor::from_data(shape, x0, DType::F64);
    xx.set_requires_grad(true);
    backward(build(xx));
    return xx.grad();
  }
};

constexpr double kKinkMargin = 5e-3;

bool min_abs_ok(const Tensor& t) {
  for (double v : t.data())
    if (std::abs(v) < kKinkMargin) return false;
  return true;
}

bool pairwise_gaps_ok(const Tensor& t, int axis) {
  // along `axis`, all pairs distinct by margin
  const Shape& s = t.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  int64_t len = s[axis];
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i)
      for (int64_t a = 0; a < len; ++a)
        for (int64_t b = a + 1; b < len; ++b) {
          double va = t.data()[(o * len + a) * inner + i];
          double vb = t.data()[(o * len + b) * inner + i];
          if (std::abs(va - vb) < kKinkMargin) return false;
        }
  return true;
}

FdInstance make_instance(uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int kind = static_cast<int>(rng() % 4);
  FdInstance inst;

  if (kind == 0) {
    // conv -> relu -> maxpool -> weighted mean
    const int64_t C = 1 + rng() % 2, F = 1 + rng() % 2;
    Tensor x = Tensor::randn({1, C, 4, 4}, rng, 1.0, DType::F64);
    Tensor w = Tensor::randn({F, C, 3, 3}, rng, 0.5, DType::F64);
    Tensor b = Tensor::randn({F}, rng, 0.5, DType::F64);
    Tensor pre = conv2d(x, w, b, 1, 1);
    if (!min_abs_ok(pre)) return inst;
    if (!pairwise_gaps_ok(relu(pre), 3)) return inst;
    Tensor wt = Tensor::randn({1, F, 2, 2}, rng, 1.0, DType::F64);
    inst.shape = {1, C, 4, 4};
    inst.x0 = x.data();
    inst.build = [=](const Tensor& xx) {
      return mean_all(mul(maxpool2(relu(conv2d(xx, w, b, 1, 1))), wt));
    };
    inst.valid = true;
  } else if (kind == 1) {
    // linear -> softmax cross entropy
    const int64_t K = 3 + rng() % 4, M = 2 + rng() % 4;
    Tensor x = Tensor::randn({2, K}, rng, 1.0, DType::F64);
    Tensor w = Tensor::randn({M, K}, rng, 0.7, DType::F64);
    Tensor b = Tensor::randn({M}, rng, 0.5, DType::F64);
    std::vector<int64_t> labels{static_cast<int64_t>(rng() % M),
                                static_cast<int64_t>(rng() % M)};
    inst.shape = {2, K};
    inst.x0 = x.data();
    inst.build = [=](const Tensor& xx) {
      return mean_all(softmax_cross_entropy(linear(xx, w, b), labels));
    };
    inst.valid = true;
  } else if (kind == 2) {
    // sort -> take -> weighted sum (exercises permutation routing)
    const int64_t R = 3 + rng() % 4, C = 2 + rng() % 3;
    Tensor x = Tensor::randn({R, C}, rng, 1.0, DType::F64);
    if (!pairwise_gaps_ok(x, 0)) return inst;
    std::vector<int64_t> pick{static_cast<int64_t>(rng() % R)};
    Tensor wt = Tensor::randn({1, C}, rng, 1.0, DType::F64);
    inst.shape = {R, C};
    inst.x0 = x.data();
    inst.build = [=](const Tensor& xx) {
      return sum_all(mul(take_axis(sort_axis(xx, 0, true), 0, pick), wt));
    };
    inst.valid = true;
  } else {
    // resize down then max over rows
    const int64_t d = 4 + rng() % 3;
    const int64_t dn = 2 + rng() % (d - 2);
    Tensor x = Tensor::randn({1, 2, d, d}, rng, 1.0, DType::F64);
    if (!pairwise_gaps_ok(resize_bilinear(x, dn, dn), 2)) return inst;
    Tensor wt = Tensor::randn({1, 2, 1, dn}, rng, 1.0, DType::F64);
    inst.shape = {1, 2, d, d};
    inst.x0 = x.data();
    inst.build = [=](const Tensor& xx) {
      return sum_all(mul(max_axis(resize_bilinear(xx, dn, dn), 2, true), wt));
    };
    inst.valid = true;
  }
  return inst;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences "
          "(property, >=100 random graphs)") {
  int checked = 0;
  uint64_t seed = 1000;
  double worst = 0;
  while (checked < 120) {
    FdInstance inst = make_instance(seed++);
    if (!inst.valid) continue;
    std::vector<double> analytic = inst.analytic_grad();
    std::vector<double> fd = oracles::fd_gradient(
        [&](const std::vector<double>& v) { return inst.loss(v); }, inst.x0,
        1e-4);
    REQUIRE(analytic.size() == fd.size());
    worst = std::max(worst, oracles::max_rel_err(analytic, fd));
    ++checked;
  }
  CHECK(checked >= 100);
  CHECK(worst < 1e-5);
}
