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

#include "tokenformer/linalg.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tokenformer/errors.hpp"

namespace tokenformer {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}
MutMap view(Matrix& m) {
  return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                static_cast<Eigen::Index>(m.cols()));
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

thread_local std::uint64_t g_multiply_adds = 0;

}  // namespace

namespace op_counter {
void reset() { g_multiply_adds = 0; }
std::uint64_t multiply_adds() { return g_multiply_adds; }
void add(std::uint64_t n) { g_multiply_adds += n; }
}  // namespace op_counter

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, a" + a.shape_string() + " b" +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  if (a.cols() > 0) view(out).noalias() = view(a) * view(b);
  op_counter::add(static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols());
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: a" + a.shape_string() + " and b" + b.shape_string() +
                     " need equal column counts");
  }
  Matrix out(a.rows(), b.rows());
  if (a.cols() > 0) view(out).noalias() = view(a) * view(b).transpose();
  op_counter::add(static_cast<std::uint64_t>(a.rows()) * a.cols() * b.rows());
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: a" + a.shape_string() + " and b" + b.shape_string() +
                     " need equal row counts");
  }
  Matrix out(a.cols(), b.cols());
  if (a.rows() > 0) view(out).noalias() = view(a).transpose() * view(b);
  op_counter::add(static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols());
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape("add", a, b);
  Matrix out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Matrix& acc, const Matrix& x) {
  require_same_shape("add_inplace", acc, x);
  double* p = acc.data();
  const double* q = x.data();
  for (std::size_t i = 0, n = acc.size(); i < n; ++i) p[i] += q[i];
}

void axpy_inplace(Matrix& acc, double a, const Matrix& x) {
  require_same_shape("axpy_inplace", acc, x);
  double* p = acc.data();
  const double* q = x.data();
  for (std::size_t i = 0, n = acc.size(); i < n; ++i) p[i] += a * q[i];
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape("sub", a, b);
  Matrix out = a;
  double* p = out.data();
  const double* q = b.data();
  for (std::size_t i = 0, n = out.size(); i < n; ++i) p[i] -= q[i];
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape("hadamard", a, b);
  Matrix out = a;
  double* p = out.data();
  const double* q = b.data();
  for (std::size_t i = 0, n = out.size(); i < n; ++i) p[i] *= q[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

Matrix sigmoid(const Matrix& a) {
  Matrix out = a;
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : in) mx = std::max(mx, v);
    if (!(mx > kMaskedThreshold)) {
      throw NumericalError("softmax_rows: empty visibility row " + std::to_string(i));
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      const double e = in[j] <= kMaskedThreshold ? 0.0 : std::exp(in[j] - mx);
      o[j] = e;
      sum += e;
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

Matrix rms_normalize_rows(const Matrix& x, double eps) {
  Matrix out(x.rows(), x.cols());
  const double inv_n = x.cols() == 0 ? 0.0 : 1.0 / static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    double ss = 0.0;
    for (double v : in) ss += v * v;
    const double r = 1.0 / std::sqrt(ss * inv_n + eps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] * r;
  }
  return out;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape("max_abs_diff", a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

namespace {

// In-place Householder reduction of a tall m x n row-major matrix; returns the
// n x n upper-triangular factor.
Matrix householder_r(Matrix a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  std::vector<double> v(m);
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    double norm2 = 0.0;
    for (std::size_t i = k; i < m; ++i) norm2 += a(i, k) * a(i, k);
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) continue;
    const double alpha = a(k, k) >= 0.0 ? -norm : norm;
    for (std::size_t i = k; i < m; ++i) v[i] = a(i, k);
    v[k] -= alpha;
    double vv = 0.0;
    for (std::size_t i = k; i < m; ++i) vv += v[i] * v[i];
    if (vv == 0.0) continue;
    const double tau = 2.0 / vv;
    std::fill(w.begin() + static_cast<std::ptrdiff_t>(k), w.end(), 0.0);
    for (std::size_t i = k; i < m; ++i) {
      const double vi = v[i];
      if (vi == 0.0) continue;
      const auto r = a.row(i);
      for (std::size_t j = k; j < n; ++j) w[j] += vi * r[j];
    }
    for (std::size_t i = k; i < m; ++i) {
      const double f = tau * v[i];
      if (f == 0.0) continue;
      auto r = a.row(i);
      for (std::size_t j = k; j < n; ++j) r[j] -= f * w[j];
    }
  }
  Matrix r(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) r(i, j) = a(i, j);
  return r;
}

}  // namespace

std::vector<double> svd_singular_values(const Matrix& m, const SvdOptions& opts) {
  if (!m.all_finite()) throw NumericalError("svd_singular_values: non-finite input");
  const std::size_t k = std::min(m.rows(), m.cols());
  if (k == 0) return {};

  // Orthogonalise the rows of a k-row matrix with the same singular values.
  Matrix work;
  if (m.rows() > m.cols()) {
    work = householder_r(m);
  } else {
    work = m;  // rows <= cols: k rows already
  }
  const std::size_t len = work.cols();

  double frob2 = 0.0;
  for (double v : work.values()) frob2 += v * v;
  const double negligible = 1e-28 * frob2;

  const std::size_t max_sweeps = opts.sweep_factor * k;
  double residual = 0.0;
  bool converged = false;
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    residual = 0.0;
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        auto rp = work.row(p);
        auto rq = work.row(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          alpha += rp[j] * rp[j];
          beta += rq[j] * rq[j];
          gamma += rp[j] * rq[j];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        // Rows that are rounding residue never orthogonalise; their singular
        // values are zero to working precision anyway.
        if (alpha <= negligible || beta <= negligible) continue;
        const double off = std::abs(gamma) / (std::sqrt(alpha) * std::sqrt(beta));
        residual = std::max(residual, off);
        if (off <= opts.tol) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t j = 0; j < len; ++j) {
          const double x = rp[j];
          const double y = rq[j];
          rp[j] = c * x - s * y;
          rq[j] = s * x + c * y;
        }
      }
    }
    if (!rotated) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream os;
    os << "svd_singular_values: no convergence after " << max_sweeps
       << " sweeps, residual " << residual;
    throw NumericalError(os.str());
  }

  std::vector<double> sv(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (double v : work.row(i)) s += v * v;
    sv[i] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

}  // namespace tokenformer
