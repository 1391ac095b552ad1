// Copyright 2026 The TokenFormer Authors
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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "tokenformer/errors.hpp"
#include "tokenformer/linalg.hpp"
#include "tokenformer/tape.hpp"

using namespace tokenformer;
namespace ad = tokenformer::ad;

namespace {

using Builder = std::function<ad::Var(std::vector<ad::Var>&)>;

// Central-difference check of sum(R . f(leaves)) for a random weight R.
double primitive_check(std::vector<Matrix> inputs, const Builder& build, std::uint64_t seed) {
  Rng rng(seed);
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (auto& m : inputs) leaves.push_back(tape.leaf(m));
  const ad::Var out = build(leaves);
  const ad::Var weight = tape.leaf(oracle::random_matrix(out.rows(), out.cols(), rng));
  const ad::Var loss = ad::sum(ad::hadamard(out, weight));
  tape.backward(loss);
  std::vector<Matrix> grads;
  for (auto v : leaves) grads.push_back(tape.gradient(v));

  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::size_t k = 0; k < inputs[li].size(); ++k) {
      Matrix plus = inputs[li], minus = inputs[li];
      plus.data()[k] += h;
      minus.data()[k] -= h;
      tape.set_leaf(leaves[li], plus);
      tape.replay();
      const double fp = tape.value(loss)(0, 0);
      tape.set_leaf(leaves[li], minus);
      tape.replay();
      const double fm = tape.value(loss)(0, 0);
      tape.set_leaf(leaves[li], inputs[li]);
      const double num = (fp - fm) / (2 * h);
      const double ana = grads[li].data()[k];
      worst = std::max(worst, std::abs(num - ana) / std::max(1.0, std::abs(ana)));
    }
  }
  tape.replay();
  return worst;
}

Matrix rnd(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  return oracle::random_matrix(r, c, rng, sd);
}

}  // namespace

TEST(Tape, SquareGradient) {
  ad::Tape t;
  const ad::Var x = t.leaf(Matrix(1, 1, 3.0));
  const ad::Var y = ad::sum(ad::hadamard(x, x));
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.gradient(x)(0, 0), 6.0);
}

TEST(Tape, CrossEntropyUniformLogitsGradient) {
  ad::Tape t;
  const ad::Var z = t.leaf(Matrix(1, 4, 0.0));
  const std::vector<std::size_t> labels = {0};
  const ad::Var loss = ad::cross_entropy(z, labels);
  EXPECT_NEAR(t.value(loss)(0, 0), std::log(4.0), 1e-15);
  t.backward(loss);
  const Matrix g = t.gradient(z);
  EXPECT_NEAR(g(0, 0), -0.75, 1e-15);
  for (int a = 1; a < 4; ++a) EXPECT_NEAR(g(0, a), 0.25, 1e-15);
}

TEST(Tape, ReplayIsBitExact) {
  ad::Tape t;
  const ad::Var a = t.leaf(rnd(3, 4, 1));
  const ad::Var b = t.leaf(rnd(4, 2, 2));
  const ad::Var c = ad::swish(ad::matmul(a, b));
  const ad::Var d = ad::softmax_masked(ad::matmul_nt(c, c), t.leaf(Matrix(3, 3)));
  std::vector<Matrix> before;
  for (std::size_t i = 0; i < t.size(); ++i) before.push_back(t.value(i));
  t.replay();
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t.value(i), before[i]) << t.op_name(i);
  (void)d;
}

TEST(Tape, BackwardVisitsInStrictReverseOrderOnce) {
  ad::Tape t;
  const ad::Var a = t.leaf(rnd(2, 2, 3));
  const ad::Var b = ad::sigmoid(a);
  const ad::Var c = ad::hadamard(b, a);
  const ad::Var d = ad::add(c, b);
  const ad::Var s = ad::sum(d);
  t.backward(s);
  const auto order = t.backward_order();
  ASSERT_EQ(order.size(), 4u);
  for (std::size_t i = 1; i < order.size(); ++i) EXPECT_LT(order[i], order[i - 1]);
  EXPECT_EQ(order.front(), s.id);
  EXPECT_THROW(t.backward(s), std::logic_error);
}

TEST(Tape, BackwardNeedsScalar) {
  ad::Tape t;
  const ad::Var a = t.leaf(Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(a), ShapeError);
}

TEST(Tape, SetLeafRejectsNonLeafAndShapeChange) {
  ad::Tape t;
  const ad::Var a = t.leaf(Matrix(2, 2, 1.0));
  const ad::Var b = ad::scale(a, 2.0);
  EXPECT_THROW(t.set_leaf(b, Matrix(2, 2)), std::logic_error);
  EXPECT_THROW(t.set_leaf(a, Matrix(3, 2)), ShapeError);
}

TEST(Tape, UnusedLeafGetsZeroGradient) {
  ad::Tape t;
  const ad::Var a = t.leaf(Matrix(2, 3, 1.0));
  const ad::Var b = t.leaf(Matrix(1, 1, 2.0));
  t.backward(ad::sum(b));
  EXPECT_EQ(t.gradient(a), Matrix(2, 3));
  EXPECT_EQ(t.take_gradient(b), Matrix(1, 1, 1.0));
}

TEST(TapePrimitives, FiniteDifferences) {
  const double tol = 1e-6;
  EXPECT_LT(primitive_check({rnd(3, 4, 1), rnd(4, 5, 2)},
                            [](auto& v) { return ad::matmul(v[0], v[1]); }, 10), tol);
  EXPECT_LT(primitive_check({rnd(3, 4, 3), rnd(5, 4, 4)},
                            [](auto& v) { return ad::matmul_nt(v[0], v[1]); }, 11), tol);
  EXPECT_LT(primitive_check({rnd(3, 4, 5), rnd(3, 4, 6)},
                            [](auto& v) { return ad::sub(v[0], v[1]); }, 12), tol);
  EXPECT_LT(primitive_check({rnd(3, 4, 7), rnd(3, 4, 8)},
                            [](auto& v) { return ad::hadamard(v[0], v[1]); }, 13), tol);
  EXPECT_LT(primitive_check({rnd(3, 4, 9), rnd(1, 4, 10)},
                            [](auto& v) { return ad::add_row(v[0], v[1]); }, 14), tol);
  EXPECT_LT(primitive_check({rnd(3, 4, 11), rnd(1, 4, 12)},
                            [](auto& v) { return ad::mul_row(v[0], v[1]); }, 15), tol);
  EXPECT_LT(primitive_check({rnd(3, 4, 13, 2.0)}, [](auto& v) { return ad::sigmoid(v[0]); }, 16),
            tol);
  EXPECT_LT(primitive_check({rnd(3, 4, 14, 2.0)}, [](auto& v) { return ad::swish(v[0]); }, 17),
            tol);
  EXPECT_LT(primitive_check({rnd(3, 5, 15)},
                            [](auto& v) { return ad::rms_normalize(v[0], 1e-6); }, 18), tol);
  EXPECT_LT(primitive_check({rnd(3, 5, 16)},
                            [](auto& v) { return ad::scale(v[0], -0.7); }, 19), tol);
  EXPECT_LT(primitive_check({rnd(3, 6, 17)},
                            [](auto& v) { return ad::slice_cols(v[0], 2, 3); }, 20), tol);
  EXPECT_LT(primitive_check({rnd(3, 2, 18), rnd(3, 3, 19)},
                            [](auto& v) {
                              std::vector<ad::Var> p = {v[0], v[1], v[0]};
                              return ad::concat_cols(p);
                            }, 21), tol);
}

TEST(TapePrimitives, MaskedSoftmaxAndGather) {
  Matrix mask(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) mask(i, j) = kMasked;
  EXPECT_LT(primitive_check({rnd(4, 4, 20, 2.0)},
                            [&](auto& v) {
                              const ad::Var m = v[0].tape->leaf(mask);
                              return ad::softmax_masked(v[0], m);
                            }, 22), 1e-6);
  const std::vector<ad::TableRow> refs = {{0, 1}, {1, 0}, {0, 1}, {1, 2}};
  EXPECT_LT(primitive_check({rnd(3, 4, 21), rnd(3, 4, 22)},
                            [&](auto& v) {
                              std::vector<ad::Var> tables = {v[0], v[1]};
                              return ad::gather(tables, refs);
                            }, 23), 1e-6);
  const std::vector<std::size_t> rows = {2, 0, 2};
  EXPECT_LT(primitive_check({rnd(3, 4, 23)},
                            [&](auto& v) { return ad::gather_rows(v[0], rows); }, 24), 1e-6);
  const std::vector<std::size_t> labels = {1, 0, 3};
  EXPECT_LT(primitive_check({rnd(3, 4, 24, 3.0)},
                            [&](auto& v) { return ad::cross_entropy(v[0], labels); }, 25), 1e-6);
}

TEST(TapePrimitives, MixedTapesRejected) {
  ad::Tape a, b;
  const ad::Var x = a.leaf(Matrix(2, 2));
  const ad::Var y = b.leaf(Matrix(2, 2));
  EXPECT_THROW(ad::add(x, y), std::logic_error);
}

// Scalar composite: analytic gradient matches central differences with the
// max(1, |g|) normalisation on several seeds.
TEST(TapeProperty, CompositeScalarFunctions) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const double err = primitive_check(
        {rnd(4, 6, seed), rnd(6, 6, seed + 10, 0.5), rnd(1, 6, seed + 20)},
        [](auto& v) {
          const ad::Var n = ad::mul_row(ad::rms_normalize(v[0], 1e-6), v[2]);
          const ad::Var h = ad::swish(ad::matmul(n, v[1]));
          return ad::hadamard(ad::sigmoid(ad::matmul(v[0], v[1])), h);
        },
        seed);
    EXPECT_LE(err, 1e-4);
  }
}
