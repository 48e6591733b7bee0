#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capslab/tensor.hpp"

namespace caps {

class Tape;

// Cheap handle to a tape node; ops take and return these.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& val() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/**
 * Reverse-mode tape. One tape per forward pass; nodes are appended in
 * evaluation order, so creation order is a topological order and backward()
 * is a single reverse sweep. Gradients accumulate at fan-out nodes.
 *
 * Parameters live outside the tape: param() registers a value pointer plus a
 * gradient sink, and backward() accumulates straight into the sink. Running
 * several samples against the same zeroed sinks therefore sums their
 * gradients, which is how batches are reduced.
 *
 * With recording=false, ops still compute values (the tape doubles as the
 * plain forward evaluator) but keep no backward closures and allocate no
 * gradients.
 */
class Tape {
 public:
  bool recording = true;

  // constant node (never differentiated)
  Var leaf(Tensor value);
  // external parameter; requires_grad iff grad_sink != nullptr
  Var param(const Tensor* value, Tensor* grad_sink, const char* name = "param");
  // tape-owned differentiable leaf (tests and oracle harnesses)
  Var input(Tensor value);

  const Tensor& value(int id) const;
  // gradient accumulated at a node during the last backward(); nullptr if the
  // node has none (not reached, or requires_grad false)
  const Tensor* grad(int id) const;

  void backward(Var root);  // root must be scalar (numel == 1)

  void reset();  // drop all nodes, keep capacity
  int size() const { return (int)nodes_.size(); }

  // --- op-author interface ---
  using Pull = std::function<void(Tape&, int)>;
  int push(Tensor value, const std::vector<int>& parents, const char* op, Pull pull);
  bool requires_grad(int id) const;
  // accumulator for a node's gradient (the external sink for param nodes);
  // allocated zero on first touch
  Tensor& grad_buf(int id);
  const char* op_name(int id) const;

 private:
  struct Node {
    Tensor value;
    const Tensor* ext_value = nullptr;
    Tensor grad;
    Tensor* grad_sink = nullptr;
    bool needs_grad = false;
    bool grad_touched = false;
    const char* op = "";
    Pull pull;
  };
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// ----- generic ops -----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                       // elementwise
Var scale(Var a, double s);
Var add_scaled(Var a, Var b, double s);      // a + s*b, same shapes
Var affine_const(Var x, double a, Tensor c); // a*x + c elementwise
Var matmul(Var a, Var b);                    // [m x k] * [k x n]
Var linear(Var x, Var w, Var b);             // x[k] * w[k x n] + b[n]
Var conv2d(Var x, Var kernels, Var bias, int stride, int groups);
Var relu(Var x);
Var softmax_rows(Var x);
Var reshape(Var x, shape_t s);
Var sum(Var x);                              // scalar [1]
Var weighted_sum(Var x, Tensor w);           // scalar, w constant
Var row_norms(Var x);                        // [m x n] -> [m] L2 norms
Var mask_rows(Var x, long keep_row);         // zero all rows but one

// central differences (f(x+h e_i) - f(x-h e_i)) / 2h, the gradient oracle
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5);

// plain helpers shared with forward-only code paths
Tensor softmax_rows_plain(const Tensor& x);
Tensor softmax_cols_plain(const Tensor& x);
Tensor matmul_plain(const Tensor& a, const Tensor& b);

}  // namespace caps
