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

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "tokenformer/matrix.hpp"

namespace tokenformer::ad {

class Tape;

// Handle to a value slot on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode tape over matrix-valued primitives.
//
// Every primitive records a forward closure (so the tape can be replayed after
// leaves change) and a backward closure that accumulates input adjoints.
// backward() walks the recorded nodes in strict reverse order, once.
class Tape {
 public:
  using Forward = std::function<Matrix(const Tape&)>;
  // Backward receives the node's own slot id and its adjoint.
  using Backward = std::function<void(Tape&, std::size_t self, const Matrix& out_adjoint)>;

  Var leaf(Matrix value);
  Var record(std::string_view op, Matrix value, Forward forward, Backward backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& value(Var v) const { return nodes_[v.id].value; }

  // Adjoint after backward(); zeros if the slot received no gradient.
  Matrix gradient(Var v) const;
  // Moves the adjoint out (zeros if none); the slot is left without adjoint.
  Matrix take_gradient(Var v);
  // Adds g into the adjoint of slot id.
  void accumulate(std::size_t id, Matrix g);

  // Overwrites a leaf. Call replay() afterwards to refresh dependants.
  void set_leaf(Var v, Matrix value);
  // Recomputes every non-leaf slot in recording order and clears adjoints.
  void replay();
  // Seeds d(output)/d(output) = 1 for a 1x1 output and propagates.
  void backward(Var output);

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(std::size_t id) const { return nodes_[id].op; }
  // Node ids whose backward closure ran, in the order they ran.
  std::span<const std::size_t> backward_order() const { return backward_order_; }

 private:
  struct Node {
    std::string_view op;
    Matrix value;
    Matrix adjoint;
    Forward forward;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> backward_order_;
  bool backward_done_ = false;
};

// Primitives. All operands must live on the same tape.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var mul_row(Var a, Var row);
Var sigmoid(Var a);
Var swish(Var a);  // z * sigmoid(z)
Var rms_normalize(Var a, double eps);  // rsqrt-mean-square per row
// softmax(scores + mask) row-wise; mask is a constant additive matrix.
Var softmax_masked(Var scores, Var mask);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var sum(Var a);

struct TableRow {
  std::size_t table;
  std::size_t row;
};
// Row lookup across several tables, output row i = tables[refs[i].table][refs[i].row].
Var gather(std::span<const Var> tables, std::span<const TableRow> refs);
Var gather_rows(Var table, std::span<const std::size_t> rows);

// Mean over rows of -log softmax(logits)[label]. Returns 1x1.
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

}  // namespace tokenformer::ad
