#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "armour/autograd.hpp"
#include "armour/gradcheck.hpp"
#include "armour/tensor.hpp"

using namespace armour;

namespace {

// Scalar functional sum(op_output .* R) exercises every output element with
// distinct weights; R is fixed per check.
double weighted(const Tensor& t, const Tensor& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) acc += t.data[i] * r.data[i];
  return acc;
}

// Checks tape gradients of a 1-tensor graph against central differences.
void check_unary(const std::function<GradTape::Var(GradTape&, GradTape::Var)>& build,
                 const Tensor& x, std::uint64_t seed, double tol = 1e-6) {
  GradTape probe_tape;
  const Tensor probe_out = probe_tape.value(build(probe_tape, probe_tape.leaf(x)));
  Rng rng(seed ^ 0xabcdef);
  const Tensor r = rng.uniform_tensor(probe_out.shape, -1, 1);

  GradTape tape;
  const GradTape::Var xv = tape.leaf(x);
  const GradTape::Var out = build(tape, xv);
  const GradTape::Var rv = tape.leaf(r);
  const GradTape::Var loss = tape.sum(tape.hadamard(out, rv));
  const Tensor analytic = tape.backward(loss).at(xv);

  const Tensor numeric = finite_diff_grad(
      [&](const Tensor& probe) {
        GradTape t2;
        return weighted(t2.value(build(t2, t2.leaf(probe))), r);
      },
      x);
  CHECK(max_rel_err(analytic, numeric) < tol);
}

}  // namespace

TEST_CASE("loss sum(A) has all-ones gradient") {
  GradTape tape;
  const GradTape::Var a = tape.leaf(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto grads = tape.backward(tape.sum(a));
  const Tensor& g = grads.at(a);
  for (double v : g.data) CHECK(v == 1.0);
}

TEST_CASE("loss sum(A*B) gradient of A is ones times B transposed") {
  Rng rng(9);
  const Tensor av = rng.uniform_tensor({3, 4}, -1, 1);
  const Tensor bv = rng.uniform_tensor({4, 2}, -1, 1);
  GradTape tape;
  const GradTape::Var a = tape.leaf(av);
  const GradTape::Var b = tape.leaf(bv);
  const auto grads = tape.backward(tape.sum(tape.matmul(a, b)));

  const Tensor expected = matmul(Tensor({3, 2}, 1.0), transpose(bv));
  CHECK(max_abs_diff(grads.at(a), expected) < 1e-14);
}

TEST_CASE("unreachable leaf receives a zero gradient of its own shape") {
  GradTape tape;
  const GradTape::Var a = tape.leaf(Tensor({2, 2}, 1.0));
  const GradTape::Var unused = tape.leaf(Tensor({3}, 5.0));
  const auto grads = tape.backward(tape.sum(a));
  const Tensor& g = grads.at(unused);
  CHECK(g.shape == std::vector<std::size_t>{3});
  for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  GradTape tape;
  const GradTape::Var a = tape.leaf(Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS(tape.backward(a), ShapeError);
}

TEST_CASE("finite differences recover the gradient of a sum of squares") {
  const Tensor x = Tensor::from({2}, {1, 2});
  const Tensor g = finite_diff_grad(
      [](const Tensor& t) {
        double acc = 0.0;
        for (double v : t.data) acc += v * v;
        return acc;
      },
      x);
  CHECK(g.data[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g.data[1] == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("finite differences of a constant are zero") {
  const Tensor g = finite_diff_grad([](const Tensor&) { return 3.5; }, Tensor({3, 2}, 1.0));
  for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("every differentiable primitive matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const Tensor m34 = rng.uniform_tensor({3, 4}, -1, 1);
    const Tensor m44 = rng.uniform_tensor({4, 4}, -1, 1);
    const Tensor m33 = rng.uniform_tensor({3, 3}, -1, 1);
    const Tensor bias = rng.uniform_tensor({4}, -1, 1);

    check_unary([&](GradTape& t, GradTape::Var x) { return t.matmul(x, t.leaf(m44)); }, m34,
                seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.matmul(t.leaf(m34), x); }, m44,
                seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.matmul_transpose_b(x, t.leaf(m34)); },
                m34, seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.matmul_transpose_b(t.leaf(m34), x); },
                m34, seed);
    check_unary([](GradTape& t, GradTape::Var x) { return t.transpose(x); }, m34, seed);
    check_unary([](GradTape& t, GradTape::Var x) { return t.softmax_rows(x); }, m34, seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.concat_last_axis(x, t.leaf(m33)); },
                m34, seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.concat_last_axis(t.leaf(m33), x); },
                m34, seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.add(x, t.leaf(m34)); }, m34, seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.hadamard(x, t.leaf(m34)); }, m34,
                seed);
    check_unary([](GradTape& t, GradTape::Var x) { return t.scale(x, -1.75); }, m34, seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.add_row_bias(x, t.leaf(bias)); },
                m34, seed);
    check_unary([&](GradTape& t, GradTape::Var x) { return t.add_row_bias(t.leaf(m34), x); },
                bias, seed);
    check_unary([](GradTape& t, GradTape::Var x) { return t.slice_cols(x, 1, 3); }, m34, seed);
    // a benign fill constant checks the pass-through gradient directly; the
    // sentinel regime is only meaningful once softmax flattens it to zero
    check_unary([](GradTape& t, GradTape::Var x) { return t.mask_diagonal(x, 0.5); }, m33, seed);
    check_unary(
        [](GradTape& t, GradTape::Var x) {
          return t.softmax_rows(t.mask_diagonal(x, kMaskSentinel));
        },
        m33, seed);
    check_unary([](GradTape& t, GradTape::Var x) { return t.gelu(x); }, m34, seed);
    check_unary([](GradTape& t, GradTape::Var x) { return t.mean_rows(x); }, m34, seed);
    check_unary([](GradTape& t, GradTape::Var x) { return t.lookup_rows(x, {2, 0, 2, 1}); },
                m34, seed);
  }
}

TEST_CASE("masked diagonal passes no gradient through the diagonal") {
  GradTape tape;
  const GradTape::Var x = tape.leaf(Tensor({3, 3}, 1.0));
  const GradTape::Var masked = tape.mask_diagonal(x, kMaskSentinel);
  const auto grads = tape.backward(tape.sum(tape.softmax_rows(masked)));
  const Tensor& g = grads.at(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g.at(i, i) == 0.0);
}

TEST_CASE("cross entropy loss and gradient agree with finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const Tensor logits = rng.uniform_tensor({3, 4}, -2, 2);
    const std::vector<std::size_t> labels{1, 3, 0};

    GradTape tape;
    const GradTape::Var z = tape.leaf(logits);
    const GradTape::Var loss = tape.cross_entropy_with_logits(z, labels);
    const Tensor analytic = tape.backward(loss).at(z);

    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& probe) {
          GradTape t2;
          return t2.value(t2.cross_entropy_with_logits(t2.leaf(probe), labels)).data[0];
        },
        logits);
    CHECK(max_rel_err(analytic, numeric) < 1e-6);
  }
}

TEST_CASE("cross entropy stays finite for extreme logits") {
  GradTape tape;
  const GradTape::Var z = tape.leaf(Tensor::from({1, 3}, {1e4, -1e4, 0.0}));
  const double loss = tape.value(tape.cross_entropy_with_logits(z, {1})).data[0];
  CHECK(std::isfinite(loss));
}
