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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tokenformer/matrix.hpp"

namespace tokenformer {

// Products. All three count m*n*k multiply-adds on the op counter.
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void add_inplace(Matrix& acc, const Matrix& x);
void axpy_inplace(Matrix& acc, double a, const Matrix& x);  // acc += a * x

Matrix sigmoid(const Matrix& a);

// Row-wise softmax with row-max subtraction. Entries at or below
// kMaskedThreshold (including -inf) get probability exactly 0. A row with
// no visible entry throws NumericalError("empty visibility row ...").
Matrix softmax_rows(const Matrix& m);

// Row-wise x / sqrt(mean(x^2) + eps).
Matrix rms_normalize_rows(const Matrix& x, double eps);

double frobenius_norm(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Singular values in descending order, length min(rows, cols).
// Householder QR reduces tall inputs to a square factor, then one-sided
// Jacobi orthogonalises its rows. Throws NumericalError on non-convergence.
struct SvdOptions {
  double tol = 1e-12;
  // Maximum sweeps is sweep_factor * min(rows, cols).
  std::size_t sweep_factor = 100;
};
std::vector<double> svd_singular_values(const Matrix& m, const SvdOptions& opts = {});

// Instrumented multiply-add counter (thread-local). Only the matmul family
// increments it.
namespace op_counter {
void reset();
std::uint64_t multiply_adds();
void add(std::uint64_t n);
}  // namespace op_counter

}  // namespace tokenformer
