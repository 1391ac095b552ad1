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

#include "tokenformer/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "tokenformer/errors.hpp"
#include "tokenformer/linalg.hpp"

namespace tokenformer::ad {

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{"leaf", std::move(value), Matrix{}, nullptr, nullptr});
  backward_done_ = false;
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Matrix value, Forward forward, Backward backward) {
  nodes_.push_back(Node{op, std::move(value), Matrix{}, std::move(forward), std::move(backward)});
  backward_done_ = false;
  return Var{this, nodes_.size() - 1};
}

Matrix Tape::gradient(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.adjoint.empty() && !n.value.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.adjoint;
}

Matrix Tape::take_gradient(Var v) {
  Node& n = nodes_[v.id];
  if (n.adjoint.empty()) return Matrix(n.value.rows(), n.value.cols());
  return std::move(n.adjoint);
}

void Tape::accumulate(std::size_t id, Matrix g) {
  Node& n = nodes_[id];
  if (!g.same_shape(n.value)) {
    throw ShapeError("Tape::accumulate: adjoint " + g.shape_string() + " for slot " +
                     n.value.shape_string());
  }
  if (n.adjoint.empty()) {
    n.adjoint = std::move(g);
  } else {
    add_inplace(n.adjoint, g);
  }
}

void Tape::set_leaf(Var v, Matrix value) {
  Node& n = nodes_.at(v.id);
  if (n.forward) throw std::logic_error("Tape::set_leaf: slot is not a leaf");
  if (!value.same_shape(n.value)) throw ShapeError("Tape::set_leaf: shape change");
  n.value = std::move(value);
}

void Tape::replay() {
  for (Node& n : nodes_) {
    n.adjoint = Matrix{};
    if (n.forward) n.value = n.forward(*this);
  }
  backward_order_.clear();
  backward_done_ = false;
}

void Tape::backward(Var output) {
  if (backward_done_) {
    throw std::logic_error("Tape::backward: already run; replay() before a second backward");
  }
  const Matrix& out = nodes_.at(output.id).value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw ShapeError("Tape::backward: output must be scalar, got " + out.shape_string());
  }
  for (Node& n : nodes_) n.adjoint = Matrix{};
  backward_order_.clear();
  nodes_[output.id].adjoint = Matrix(1, 1, 1.0);
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.adjoint.empty()) continue;
    backward_order_.push_back(i);
    // The closure only touches earlier slots, so this reference stays valid.
    n.backward(*this, i, n.adjoint);
  }
  backward_done_ = true;
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::logic_error("ad: operands recorded on different tapes");
  }
  return *a.tape;
}

Matrix add_row_value(const Matrix& a, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: row " + row.shape_string() + " for " + a.shape_string());
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) r[j] += row(0, j);
  }
  return out;
}

Matrix mul_row_value(const Matrix& a, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("mul_row: row " + row.shape_string() + " for " + a.shape_string());
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) r[j] *= row(0, j);
  }
  return out;
}

Matrix swish_value(const Matrix& a) {
  Matrix out = a;
  for (double& v : out.values()) v = v / (1.0 + std::exp(-v));
  return out;
}

Matrix masked_scores(const Matrix& scores, const Matrix& mask) {
  if (!scores.same_shape(mask)) {
    throw ShapeError("softmax_masked: mask " + mask.shape_string() + " for scores " +
                     scores.shape_string());
  }
  return add(scores, mask);
}

Matrix slice_value(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + a.shape_string());
  }
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
  return out;
}

Matrix concat_value(const Tape& t, const std::vector<std::size_t>& ids) {
  std::size_t rows = t.value(ids.front()).rows();
  std::size_t cols = 0;
  for (auto id : ids) {
    if (t.value(id).rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += t.value(id).cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (auto id : ids) {
    const Matrix& p = t.value(id);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p(i, j);
    off += p.cols();
  }
  return out;
}

Matrix gather_value(const Tape& t, const std::vector<std::size_t>& tables,
                    const std::vector<TableRow>& refs) {
  const std::size_t d = t.value(tables.front()).cols();
  Matrix out(refs.size(), d);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].table >= tables.size()) throw DataError("gather: table index out of range");
    const Matrix& tab = t.value(tables[refs[i].table]);
    if (tab.cols() != d) throw ShapeError("gather: tables differ in width");
    if (refs[i].row >= tab.rows()) {
      throw DataError("gather: row " + std::to_string(refs[i].row) + " out of range for table " +
                      std::to_string(refs[i].table) + " with " + std::to_string(tab.rows()) +
                      " rows");
    }
    auto src = tab.row(refs[i].row);
    auto dst = out.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

Matrix cross_entropy_value(const Matrix& logits, const std::vector<std::size_t>& labels) {
  if (labels.size() != logits.rows()) throw ShapeError("cross_entropy: label count mismatch");
  if (labels.empty()) throw DataError("cross_entropy: empty supervision set");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    if (labels[i] >= r.size()) throw DataError("cross_entropy: label out of range");
    double mx = r[0];
    for (double v : r) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    total += (mx + std::log(s)) - r[labels[i]];
  }
  return Matrix(1, 1, total / static_cast<double>(logits.rows()));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(
      "matmul", tokenformer::matmul(a.value(), b.value()),
      [ia, ib](const Tape& t) { return tokenformer::matmul(t.value(ia), t.value(ib)); },
      [ia, ib](Tape& t, std::size_t, const Matrix& g) {
        t.accumulate(ia, tokenformer::matmul_nt(g, t.value(ib)));
        t.accumulate(ib, tokenformer::matmul_tn(t.value(ia), g));
      });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(
      "matmul_nt", tokenformer::matmul_nt(a.value(), b.value()),
      [ia, ib](const Tape& t) { return tokenformer::matmul_nt(t.value(ia), t.value(ib)); },
      [ia, ib](Tape& t, std::size_t, const Matrix& g) {
        t.accumulate(ia, tokenformer::matmul(g, t.value(ib)));
        t.accumulate(ib, tokenformer::matmul_tn(g, t.value(ia)));
      });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(
      "add", tokenformer::add(a.value(), b.value()),
      [ia, ib](const Tape& t) { return tokenformer::add(t.value(ia), t.value(ib)); },
      [ia, ib](Tape& t, std::size_t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
      });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(
      "sub", tokenformer::sub(a.value(), b.value()),
      [ia, ib](const Tape& t) { return tokenformer::sub(t.value(ia), t.value(ib)); },
      [ia, ib](Tape& t, std::size_t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, tokenformer::scale(g, -1.0));
      });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(
      "hadamard", tokenformer::hadamard(a.value(), b.value()),
      [ia, ib](const Tape& t) { return tokenformer::hadamard(t.value(ia), t.value(ib)); },
      [ia, ib](Tape& t, std::size_t, const Matrix& g) {
        t.accumulate(ia, tokenformer::hadamard(g, t.value(ib)));
        t.accumulate(ib, tokenformer::hadamard(g, t.value(ia)));
      });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  const std::size_t ia = a.id;
  return t.record(
      "scale", tokenformer::scale(a.value(), s),
      [ia, s](const Tape& t) { return tokenformer::scale(t.value(ia), s); },
      [ia, s](Tape& t, std::size_t, const Matrix& g) { t.accumulate(ia, tokenformer::scale(g, s)); });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const std::size_t ia = a.id, ir = row.id;
  return t.record(
      "add_row", add_row_value(a.value(), row.value()),
      [ia, ir](const Tape& t) { return add_row_value(t.value(ia), t.value(ir)); },
      [ia, ir](Tape& t, std::size_t, const Matrix& g) {
        Matrix gr(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
        t.accumulate(ia, g);
        t.accumulate(ir, std::move(gr));
      });
}

Var mul_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const std::size_t ia = a.id, ir = row.id;
  return t.record(
      "mul_row", mul_row_value(a.value(), row.value()),
      [ia, ir](const Tape& t) { return mul_row_value(t.value(ia), t.value(ir)); },
      [ia, ir](Tape& t, std::size_t, const Matrix& g) {
        const Matrix& x = t.value(ia);
        const Matrix& r = t.value(ir);
        Matrix gx(g.rows(), g.cols());
        Matrix gr(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) {
            gx(i, j) = g(i, j) * r(0, j);
            gr(0, j) += g(i, j) * x(i, j);
          }
        t.accumulate(ia, std::move(gx));
        t.accumulate(ir, std::move(gr));
      });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  const std::size_t ia = a.id;
  return t.record(
      "sigmoid", tokenformer::sigmoid(a.value()),
      [ia](const Tape& t) { return tokenformer::sigmoid(t.value(ia)); },
      [ia](Tape& t, std::size_t self, const Matrix& g) {
        const Matrix& s = t.value(self);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double v = s.data()[k];
          gx.data()[k] = g.data()[k] * v * (1.0 - v);
        }
        t.accumulate(ia, std::move(gx));
      });
}

Var swish(Var a) {
  Tape& t = *a.tape;
  const std::size_t ia = a.id;
  return t.record(
      "swish", swish_value(a.value()),
      [ia](const Tape& t) { return swish_value(t.value(ia)); },
      [ia](Tape& t, std::size_t, const Matrix& g) {
        const Matrix& z = t.value(ia);
        Matrix gz(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double x = z.data()[k];
          const double s = 1.0 / (1.0 + std::exp(-x));
          gz.data()[k] = g.data()[k] * (s + x * s * (1.0 - s));
        }
        t.accumulate(ia, std::move(gz));
      });
}

Var rms_normalize(Var a, double eps) {
  Tape& t = *a.tape;
  const std::size_t ia = a.id;
  return t.record(
      "rms_normalize", rms_normalize_rows(a.value(), eps),
      [ia, eps](const Tape& t) { return rms_normalize_rows(t.value(ia), eps); },
      [ia, eps](Tape& t, std::size_t, const Matrix& g) {
        const Matrix& x = t.value(ia);
        const std::size_t n = x.cols();
        Matrix gx(x.rows(), n);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          auto xr = x.row(i);
          auto gr = g.row(i);
          double ss = 0.0, xg = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            ss += xr[j] * xr[j];
            xg += xr[j] * gr[j];
          }
          const double r = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
          const double c = r * r * r * xg / static_cast<double>(n);
          auto o = gx.row(i);
          for (std::size_t j = 0; j < n; ++j) o[j] = r * gr[j] - c * xr[j];
        }
        t.accumulate(ia, std::move(gx));
      });
}

Var softmax_masked(Var scores, Var mask) {
  Tape& t = same_tape(scores, mask);
  const std::size_t is = scores.id, im = mask.id;
  return t.record(
      "softmax_masked", softmax_rows(masked_scores(scores.value(), mask.value())),
      [is, im](const Tape& t) { return softmax_rows(masked_scores(t.value(is), t.value(im))); },
      [is](Tape& t, std::size_t self, const Matrix& g) {
        const Matrix& p = t.value(self);
        Matrix gs(p.rows(), p.cols());
        for (std::size_t i = 0; i < p.rows(); ++i) {
          auto pr = p.row(i);
          auto gr = g.row(i);
          double dot = 0.0;
          for (std::size_t j = 0; j < pr.size(); ++j) dot += pr[j] * gr[j];
          auto o = gs.row(i);
          for (std::size_t j = 0; j < pr.size(); ++j) o[j] = pr[j] * (gr[j] - dot);
        }
        t.accumulate(is, std::move(gs));
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  const std::size_t ia = a.id;
  return t.record(
      "slice_cols", slice_value(a.value(), begin, count),
      [ia, begin, count](const Tape& t) { return slice_value(t.value(ia), begin, count); },
      [ia, begin, count](Tape& t, std::size_t, const Matrix& g) {
        const Matrix& x = t.value(ia);
        Matrix gx(x.rows(), x.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < count; ++j) gx(i, begin + j) = g(i, j);
        t.accumulate(ia, std::move(gx));
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  Tape& t = *parts.front().tape;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.tape != &t) throw std::logic_error("ad: operands recorded on different tapes");
    ids.push_back(p.id);
  }
  return t.record(
      "concat_cols", concat_value(t, ids), [ids](const Tape& t) { return concat_value(t, ids); },
      [ids](Tape& t, std::size_t, const Matrix& g) {
        std::size_t off = 0;
        for (auto id : ids) {
          const std::size_t c = t.value(id).cols();
          t.accumulate(id, slice_value(g, off, c));
          off += c;
        }
      });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const std::size_t ia = a.id;
  auto total = [](const Matrix& m) {
    double s = 0.0;
    for (double v : m.values()) s += v;
    return Matrix(1, 1, s);
  };
  return t.record(
      "sum", total(a.value()), [ia, total](const Tape& t) { return total(t.value(ia)); },
      [ia](Tape& t, std::size_t, const Matrix& g) {
        const Matrix& x = t.value(ia);
        t.accumulate(ia, Matrix(x.rows(), x.cols(), g(0, 0)));
      });
}

Var gather(std::span<const Var> tables, std::span<const TableRow> refs) {
  if (tables.empty()) throw ShapeError("gather: no tables");
  Tape& t = *tables.front().tape;
  std::vector<std::size_t> ids;
  for (const Var& v : tables) {
    if (v.tape != &t) throw std::logic_error("ad: operands recorded on different tapes");
    ids.push_back(v.id);
  }
  std::vector<TableRow> rs(refs.begin(), refs.end());
  return t.record(
      "gather", gather_value(t, ids, rs),
      [ids, rs](const Tape& t) { return gather_value(t, ids, rs); },
      [ids, rs](Tape& t, std::size_t, const Matrix& g) {
        std::vector<Matrix> grads;
        std::vector<bool> touched(ids.size(), false);
        grads.reserve(ids.size());
        for (auto id : ids) grads.emplace_back(t.value(id).rows(), t.value(id).cols());
        for (std::size_t i = 0; i < rs.size(); ++i) {
          auto dst = grads[rs[i].table].row(rs[i].row);
          auto src = g.row(i);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
          touched[rs[i].table] = true;
        }
        for (std::size_t k = 0; k < ids.size(); ++k)
          if (touched[k]) t.accumulate(ids[k], std::move(grads[k]));
      });
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
  std::vector<TableRow> refs;
  refs.reserve(rows.size());
  for (auto r : rows) refs.push_back({0, r});
  const Var tables[] = {table};
  return gather(tables, refs);
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Tape& t = *logits.tape;
  const std::size_t il = logits.id;
  std::vector<std::size_t> ls(labels.begin(), labels.end());
  return t.record(
      "cross_entropy", cross_entropy_value(logits.value(), ls),
      [il, ls](const Tape& t) { return cross_entropy_value(t.value(il), ls); },
      [il, ls](Tape& t, std::size_t, const Matrix& g) {
        const Matrix& x = t.value(il);
        Matrix gx(x.rows(), x.cols());
        const double w = g(0, 0) / static_cast<double>(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          auto r = x.row(i);
          double mx = r[0];
          for (double v : r) mx = std::max(mx, v);
          double s = 0.0;
          for (double v : r) s += std::exp(v - mx);
          auto o = gx.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) o[j] = w * std::exp(r[j] - mx) / s;
          o[ls[i]] -= w;
        }
        t.accumulate(il, std::move(gx));
      });
}

}  // namespace tokenformer::ad
