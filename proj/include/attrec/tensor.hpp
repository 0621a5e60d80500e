#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "attrec/common.hpp"

namespace attrec {

// Dense row-major 2-D tensor of doubles. Row and column vectors are 1xN / Nx1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

  static Tensor row_vector(std::vector<double> v) {
    Tensor t;
    t.rows = 1;
    t.cols = static_cast<int>(v.size());
    t.data = std::move(v);
    return t;
  }

  int numel() const { return rows * cols; }
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
  std::span<const double> row_span(int r) const { return {row_ptr(r), static_cast<size_t>(cols)}; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
  void add_scaled(const Tensor& o, double s);  // *this += s * o
};

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in topological order by construction;
// backward() walks them in reverse. Parameter leaves keep their storage
// outside the tape and accumulate gradients into caller-owned sinks, so one
// gradient buffer can collect contributions from many tapes.
class Tape {
 public:
  // Leaf over external storage. If grad_sink is non-null the leaf requires
  // grad and backward() accumulates into *grad_sink (never zeroed here).
  Var leaf(const Tensor* value, Tensor* grad_sink);
  // Constant owned by the tape (no gradient).
  Var constant(Tensor value);
  // Constant referencing external storage (no copy, no gradient).
  Var constant_ref(const Tensor* value);

  // --- ops ---
  Var embedding(Var table, std::vector<int> ids);      // [n x d] gather of rows
  Var add(Var a, Var b);                               // same shape
  Var add_row(Var a, Var bias);                        // bias [1 x d] broadcast over rows
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);                            // [m x k] * [k x n]
  Var matmul_nt(Var a, Var b);                         // a * b^T
  Var slice_cols(Var a, int c0, int c1);               // [r x (c1-c0)]
  Var concat_cols(const std::vector<Var>& parts);
  Var layer_norm(Var x, Var gain, Var bias, double eps);  // row-wise
  Var softmax_rows(Var x);
  Var gelu(Var x);
  Var dropout(Var x, double rate, Rng& rng);           // inverted dropout
  Var mean_rows(Var x, int r0, int r1);                // [1 x d] mean of rows [r0, r1)
  Var cosine(Var u, Var v, double eps);                // [1 x d] x [1 x d] -> scalar
  // Cosine against an external constant vector (must outlive the tape).
  Var cosine_const(Var u, std::span<const double> v, double eps);
  Var scalar_constant(double v);
  Var max_of(const std::vector<Var>& xs, int* argmax = nullptr);  // scalars; first max wins
  Var mean_of(const std::vector<Var>& xs);
  Var sum_of(const std::vector<Var>& xs);
  // -log softmax(scores / tau)[target], max-subtracted.
  Var cross_entropy(const std::vector<Var>& scores, int target, double tau);

  const Tensor& value(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    return n.value ? *n.value : n.owned;
  }
  double scalar(Var v) const { return value(v).data[0]; }
  const Tensor& grad(Var v) const;

  void backward(Var loss);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;                  // value storage unless external
    const Tensor* value = nullptr; // points at owned or external storage
    Tensor grad;                   // lazily sized; unused when grad_sink set
    Tensor* grad_sink = nullptr;
    bool requires_grad = false;
    std::function<void()> back;
  };

  Var push(Tensor value, bool requires_grad, std::function<void()> back);
  Tensor& grad_ref(int id);
  bool needs_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

  std::vector<Node> nodes_;
};

// Plain (tape-free) kernels shared by inference paths and oracles.
Tensor matmul_values(const Tensor& a, const Tensor& b);
double dot(std::span<const double> u, std::span<const double> v);
double norm2(std::span<const double> u);
// u.v / (max(|u|,eps) * max(|v|,eps)), clamped to [-1, 1].
double cosine_similarity(std::span<const double> u, std::span<const double> v, double eps);

}  // namespace attrec
