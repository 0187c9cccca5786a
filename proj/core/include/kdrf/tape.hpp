#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "kdrf/tensor.hpp"

namespace kdrf::ad {

// Reverse-mode tape. Rebuilt on every training step (define-by-run).
// Single-writer: one logical thread records and backpropagates a tape.
// Nodes are stored in execution order; backward walks them strictly in
// reverse insertion order exactly once.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Track a value as a leaf of this tape.
  Tensor leaf(const Tensor& value);

  // Backpropagate from a tracked scalar. May be called once per tape.
  void backward(const Tensor& loss);
  bool backward_done() const { return backward_done_; }

  // Gradient of a tracked tensor after backward(). Empty span when the
  // tensor never received a gradient (i.e. the gradient is zero).
  std::span<const double> grad(const Tensor& t) const;
  std::vector<double> grad_or_zeros(const Tensor& t) const;

  // Accumulation targets for backward closures. grad_full hands out a
  // maybe-uninitialized buffer: when *fresh comes back true the caller must
  // overwrite every element (and may skip the zero fill); grad_zeroed is
  // for partial writers and guarantees a zero-filled buffer.
  double* grad_full(int node, std::int64_t size, bool* fresh);
  double* grad_zeroed(int node, std::int64_t size);

  // Gradient sinks for fused parameter ops (feature grids): gradients that
  // bypass node storage. Keyed by caller-chosen parameter id. Sparse sinks
  // hold fixed-length runs of contiguous elements (one run per sampled grid
  // corner); dense sinks are full-size accumulators.
  struct SparseRuns {
    std::int64_t run_len = 0;
    std::vector<std::int64_t> starts;
    std::vector<double> values;  // starts.size() * run_len entries
  };
  SparseRuns& runs_sink(int key, std::int64_t run_len);
  std::vector<double>& dense_sink(int key, std::int64_t size);
  const std::unordered_map<int, SparseRuns>& runs_sinks() const { return sparse_; }
  const std::unordered_map<int, std::vector<double>>& dense_sinks() const { return dense_; }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Used by op implementations.
  int push(BackFn back);

 private:
  struct Node {
    BackFn back;  // empty for leaves
  };
  struct GradBuf {
    std::unique_ptr<double[]> data;
    std::int64_t size = 0;
    bool fresh = true;  // no contribution yet
  };
  std::vector<Node> nodes_;
  std::vector<GradBuf> grads_;
  std::unordered_map<int, SparseRuns> sparse_;
  std::unordered_map<int, std::vector<double>> dense_;
  bool backward_done_ = false;
};

// ---- forward ops ------------------------------------------------------
// Every op records itself on the inputs' tape when at least one input is
// tracked. Shapes of elementwise binaries broadcast by trailing-axis rules
// (numpy-style: align at the trailing axis, extents must match or be 1).

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
// Fused x @ w + bias row; equivalent to add(matmul(x, w), b) in one node.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
Tensor slice(const Tensor& t, std::int64_t axis, std::int64_t start, std::int64_t len);
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor sum_axis(const Tensor& t, std::int64_t axis, bool keepdim = true);
Tensor cumsum_exclusive(const Tensor& t, std::int64_t axis);
Tensor square(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor sin(const Tensor& t);
Tensor cos(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor softplus(const Tensor& t);
Tensor abs(const Tensor& t);
Tensor clamp(const Tensor& t, double lo, double hi);
Tensor scale(const Tensor& t, double c);
Tensor add_const(const Tensor& t, double c);
Tensor reshape(const Tensor& t, Shape shape);
Tensor detach(const Tensor& t);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace kdrf::ad
