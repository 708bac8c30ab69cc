#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>

#include "helpers.hpp"
#include "kdiff/gradcheck.hpp"
#include "kdiff/graph.hpp"

using namespace kdiff;
using kdiff::test::expect_error;

TEST_CASE("tensor shape invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.data().size() == shape_numel(t.shape()));
  expect_error(ErrorKind::ShapeMismatch, [] { Tensor({2, 0}); });
  expect_error(ErrorKind::ShapeMismatch, [] { Tensor({2, 2}, std::vector<double>{1, 2, 3}); });
  expect_error(ErrorKind::NotScalarRoot, [&] { t.item(); });
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
}

TEST_CASE("softmax of a constant row is uniform") {
  Graph g;
  Var z = g.constant(Tensor({1, 3}, 0.0));
  const Tensor& s = g.value(g.softmax(z));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("identity matmul returns its operand") {
  Rng rng(3);
  for (std::size_t k = 1; k <= 5; ++k) {
    Graph g;
    Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
    Tensor a = rng.normal_tensor({2, k});
    CHECK(bitwise_equal(g.value(g.matmul(g.constant(eye), g.constant(a))), a));
  }
}

namespace {

// Straight-line reference of a dense layer followed by an optional SiLU.
std::vector<double> dense(const std::vector<double>& x, std::size_t rows, std::size_t in, const Tensor& w,
                          const Tensor& b, std::size_t out, bool activate) {
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[i * out + o];
      acc += b[o];
      y[r * out + o] = activate ? acc / (1.0 + std::exp(-acc)) : acc;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("three-layer MLP matches a straight-line evaluation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const std::size_t rows = 4, d0 = 5, d1 = 7, d2 = 6, d3 = 3;
    Tensor x = rng.normal_tensor({rows, d0});
    Tensor w1 = rng.normal_tensor({d0, d1}), b1 = rng.normal_tensor({d1});
    Tensor w2 = rng.normal_tensor({d1, d2}), b2 = rng.normal_tensor({d2});
    Tensor w3 = rng.normal_tensor({d2, d3}), b3 = rng.normal_tensor({d3});
    Graph g;
    Var h = g.constant(x);
    h = g.silu(g.add(g.matmul(h, g.parameter(w1)), g.parameter(b1)));
    h = g.silu(g.add(g.matmul(h, g.parameter(w2)), g.parameter(b2)));
    h = g.add(g.matmul(h, g.parameter(w3)), g.parameter(b3));

    std::vector<double> ref(x.data().begin(), x.data().end());
    ref = dense(ref, rows, d0, w1, b1, d1, true);
    ref = dense(ref, rows, d1, w2, b2, d2, true);
    ref = dense(ref, rows, d2, w3, b3, d3, false);
    const Tensor& got = g.value(h);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  }
}

TEST_CASE("gradient of sum(x * y) with respect to x is y") {
  Rng rng(11);
  Graph g;
  Tensor xv = rng.normal_tensor({3, 4}), yv = rng.normal_tensor({3, 4});
  Var x = g.parameter(xv), y = g.parameter(yv);
  const GradientMap grads = g.backward(g.sum(g.mul(x, y)));
  CHECK(bitwise_equal(grads.at(x), yv));
  CHECK(bitwise_equal(grads.at(y), xv));
}

TEST_CASE("softmax gradient of sum is orthogonal to every direction") {
  // sum(softmax(z)) is constant per row, so its gradient vanishes.
  Rng rng(5);
  Graph g;
  Var z = g.parameter(rng.normal_tensor({4, 6}));
  const GradientMap grads = g.backward(g.sum(g.softmax(z)));
  for (double v : grads.at(z).data()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("backward errors") {
  Graph g;
  Var x = g.parameter(Tensor({2, 2}, 1.0));
  expect_error(ErrorKind::NotScalarRoot, [&] { g.backward(x); });
  Var s = g.sum(x);
  g.reset();
  expect_error(ErrorKind::ForwardNotRun, [&] { g.backward(s); });
  g.forward();
  CHECK(g.backward(s).at(x)[0] == 1.0);
}

TEST_CASE("graph is reusable after reset") {
  Rng rng(8);
  Graph g;
  Tensor xv = rng.normal_tensor({3, 3});
  Var x = g.parameter(xv);
  Var root = g.sum(g.square(x));
  const Tensor first = g.backward(root).at(x);
  g.reset();
  g.forward();
  CHECK(bitwise_equal(g.backward(root).at(x), first));
}

TEST_CASE("non-finite values name the producing node") {
  Graph g;
  Var x = g.constant(Tensor({1, 1}, 1e200), "huge");
  try {
    g.square(x);
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFinite);
    CHECK(std::string(e.what()).find("square") != std::string::npos);
  }
}

TEST_CASE("shape errors name the node being recorded") {
  Graph g;
  Var a = g.constant(Tensor({2, 3}), "a");
  Var b = g.constant(Tensor({2, 3}), "b");
  try {
    g.matmul(a, b);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  // The failed node is not left on the tape.
  CHECK(g.size() == 2);
}

TEST_CASE("forward is deterministic, including the seeded mask") {
  auto build = [] {
    Graph g(42);
    Rng rng(1);
    Var x = g.parameter(rng.normal_tensor({5, 5}));
    Var m = g.bernoulli_mask({5, 5}, 0.7);
    Var root = g.mean(g.square(g.mul(g.layer_norm(x), m)));
    return g.value(root).item();
  };
  const double a = build(), b = build();
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);
}

TEST_CASE("softmax rows sum to one and layer norm rows are centred") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng.uniform_int(0, 6), c = 2 + rng.uniform_int(0, 30);
    Graph g;
    Var x = g.constant(rng.normal_tensor({r, c}, 5.0));
    const Tensor s = g.value(g.softmax(x));
    const Tensor l = g.value(g.layer_norm(x));
    for (std::size_t i = 0; i < r; ++i) {
      double sum = 0.0, mean = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        sum += s.at(i, j);
        mean += l.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
      CHECK(std::abs(mean / static_cast<double>(c)) < 1e-10);
    }
  }
}

TEST_CASE("backward visits each node once") {
  Rng rng(2);
  Graph g;
  Var x = g.parameter(rng.normal_tensor({3, 3}));
  Var y = g.add(x, x);
  Var z = g.mul(y, x);
  Var root = g.sum(g.add(z, y));
  g.backward(root);
  CHECK(g.last_backward_visits() == g.size());
}

TEST_CASE("finite differences: linear function and degenerate steps") {
  Rng rng(4);
  Graph g;
  Var w = g.parameter(rng.normal_tensor({1, 6}));
  Var x = g.constant(rng.normal_tensor({6, 1}));
  Var root = g.sum(g.matmul(w, x));
  const GradCheckReport r = finite_difference_check(g, root);
  CHECK(r.passed);
  CHECK(r.max_relative_error < 1e-9);
  expect_error(ErrorKind::InvalidStep, [&] { finite_difference_check(g, root, {.step = 0.0}); });
  expect_error(ErrorKind::InvalidStep, [&] { finite_difference_check(g, root, {.step = -1e-5}); });
}

namespace {

struct Case {
  const char* name;
  // Builds the primitive over fresh random parameters and returns its output.
  std::function<Var(Graph&, Rng&)> build;
};

std::size_t extent(Rng& rng) { return static_cast<std::size_t>(rng.uniform_int(1, 5)); }

Var param(Graph& g, Rng& rng, Shape s) { return g.parameter(rng.normal_tensor(s)); }

const std::vector<Case>& primitive_cases() {
  static const std::vector<Case> cases = {
      {"add", [](Graph& g, Rng& r) { Shape s{extent(r), extent(r)}; return g.add(param(g, r, s), param(g, r, s)); }},
      {"add broadcast",
       [](Graph& g, Rng& r) {
         const std::size_t a = extent(r), b = extent(r);
         return g.add(param(g, r, {a, b}), param(g, r, {b}));
       }},
      {"sub", [](Graph& g, Rng& r) { Shape s{extent(r), extent(r)}; return g.sub(param(g, r, s), param(g, r, s)); }},
      {"mul", [](Graph& g, Rng& r) { Shape s{extent(r), extent(r)}; return g.mul(param(g, r, s), param(g, r, s)); }},
      {"mul broadcast",
       [](Graph& g, Rng& r) {
         const std::size_t a = extent(r), b = extent(r);
         return g.mul(param(g, r, {a, b}), param(g, r, {b}));
       }},
      {"matmul",
       [](Graph& g, Rng& r) {
         const std::size_t m = extent(r), k = extent(r), n = extent(r);
         return g.matmul(param(g, r, {m, k}), param(g, r, {k, n}));
       }},
      {"concat",
       [](Graph& g, Rng& r) {
         const std::size_t axis = static_cast<std::size_t>(r.uniform_int(0, 1));
         const std::size_t a = extent(r), b = extent(r), c = extent(r);
         Shape s1{a, b}, s2{a, b};
         (axis == 0 ? s2[0] : s2[1]) = c;
         const Var parts[] = {param(g, r, s1), param(g, r, s2)};
         return g.concat(parts, axis);
       }},
      {"reshape",
       [](Graph& g, Rng& r) {
         const std::size_t a = extent(r), b = extent(r);
         return g.reshape(param(g, r, {a, b}), {b, a});
       }},
      {"transpose", [](Graph& g, Rng& r) { return g.transpose(param(g, r, {extent(r), extent(r)})); }},
      {"softmax", [](Graph& g, Rng& r) { return g.softmax(param(g, r, {extent(r), extent(r) + 1})); }},
      {"layer_norm", [](Graph& g, Rng& r) { return g.layer_norm(param(g, r, {extent(r), extent(r) + 1})); }},
      {"silu", [](Graph& g, Rng& r) { return g.silu(param(g, r, {extent(r), extent(r)})); }},
      {"gather",
       [](Graph& g, Rng& r) {
         const std::size_t rows = extent(r) + 1;
         std::vector<int> ids;
         for (std::size_t i = 0, n = extent(r) + 2; i < n; ++i) ids.push_back(r.uniform_int(0, int(rows) - 1));
         return g.gather(param(g, r, {rows, extent(r)}), ids);
       }},
      {"scale", [](Graph& g, Rng& r) { return g.scale(param(g, r, {extent(r), extent(r)}), r.normal() * 3.0); }},
      {"mean", [](Graph& g, Rng& r) { return g.mean(param(g, r, {extent(r), extent(r)})); }},
      {"sum", [](Graph& g, Rng& r) { return g.sum(param(g, r, {extent(r), extent(r)})); }},
      {"square", [](Graph& g, Rng& r) { return g.square(param(g, r, {extent(r), extent(r)})); }},
  };
  return cases;
}

}  // namespace

TEST_CASE("every primitive passes finite differences over 100 random shapes and seeds") {
  for (const Case& c : primitive_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(derive_seed(seed, 0xfd));
      Graph g;
      Var out = c.build(g, rng);
      // Contract with a random constant so every output entry matters.
      Var readout = g.constant(rng.normal_tensor(g.value(out).shape()));
      Var root = g.sum(g.mul(out, readout));
      const GradCheckReport r = finite_difference_check(g, root);
      worst = std::max(worst, r.max_relative_error);
    }
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("random composite graph passes finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Graph g;
    Var x = g.parameter(rng.normal_tensor({4, 5}));
    Var w = g.parameter(rng.normal_tensor({5, 5}, 0.5));
    Var b = g.parameter(rng.normal_tensor({5}));
    Var h = g.layer_norm(g.silu(g.add(g.matmul(x, w), b)));
    Var att = g.softmax(g.scale(g.matmul(h, g.transpose(h)), 0.4));
    Var out = g.matmul(att, h);
    Var root = g.mean(g.square(g.sub(out, x)));
    const GradCheckReport r = finite_difference_check(g, root);
    CHECK(r.max_relative_error < 1e-5);
  }
}
