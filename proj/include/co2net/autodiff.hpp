#pragma once

#include "co2net/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

namespace co2net {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool needs_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of executed operations. `backward` sweeps it in exact reverse
/// order and adds (never assigns) into the gradients of reachable parameters.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Parameter& p);

  /// Records an op output. The backward closure is kept only when some input needs grad.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);

  void backward(const Var& root);

  /// Constant copy of `x` with no gradient edge. When a replay source is set,
  /// the n-th detach returns the n-th stored value instead of `x`; when a
  /// capture sink is set, each detached value is appended to it.
  Var detach(const Var& x);
  void capture_detached(std::vector<Matrix>* sink) { capture_ = sink; }
  void replay_detached(const std::vector<Matrix>* source) { replay_ = source; }

  /// Folds a discrete branch decision (ReLU/abs sign, clamp activity, top-k
  /// membership) into a running signature. Two evaluations with equal
  /// signatures took the same piecewise-smooth branch everywhere.
  void note_branch(std::uint64_t decision) { branch_signature_ = (branch_signature_ ^ decision) * 0x100000001b3ULL; }
  std::uint64_t branch_signature() const { return branch_signature_; }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// grad(id) += delta when the node participates in differentiation.
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[id];
    if (n.needs_grad) n.grad += delta;
  }
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::ArrayBase<Derived>& delta) {
    Node& n = nodes_[id];
    if (n.needs_grad) n.grad.array() += delta;
  }

  std::size_t size() const { return nodes_.size(); }
  /// Node ids in the order backward visited them during the last sweep.
  const std::vector<std::size_t>& last_visit_order() const { return visit_order_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
  std::vector<Matrix>* capture_ = nullptr;
  const std::vector<Matrix>* replay_ = nullptr;
  std::size_t replay_next_ = 0;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
};

// ---- differentiable operations -------------------------------------------

enum class CombineOp { add, mul, broadcast_mul_rowvec, broadcast_mul_colvec };
enum class PointwiseFn { sigmoid, relu, abs, dropout };

struct DropoutArgs {
  double p = 0.0;
  bool train = false;
  Rng* rng = nullptr;
};

/// Zero-padded "same" temporal convolution. `weights` is (K*Din) x Dout, i.e. a
/// K x Din x Dout kernel with the leading two extents folded; `bias` is 1 x Dout.
Var temporal_conv(const Var& input, const Var& weights, const Var& bias, Index kernel);

/// Mean over the temporal (row) axis; T x D -> 1 x D.
Var global_avg_pool(const Var& input);

Var sigmoid(const Var& x);
Var relu(const Var& x);
Var abs(const Var& x);
/// Inverted dropout; identity (same node) in eval mode.
Var dropout(const Var& x, double p, bool train, Rng& rng);
Var apply_pointwise(const Var& x, PointwiseFn fn, const DropoutArgs& args = {});

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// x: T x D, g: 1 x D.
Var broadcast_mul_rowvec(const Var& x, const Var& g);
/// x: T x D, g: T x 1.
Var broadcast_mul_colvec(const Var& x, const Var& g);
Var combine(const Var& a, const Var& b, CombineOp op);

Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double c);
Var square(const Var& x);
Var log(const Var& x);
/// Elementwise clamp; gradient passes only strictly inside (lo, hi).
Var clamp(const Var& x, double lo, double hi);

Var sum(const Var& x);
Var mean(const Var& x);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);
Var column(const Var& x, Index j);
Var concat_cols(const Var& a, const Var& b);

Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

/// 1 x C row of per-column means over the k largest entries. Ties resolve
/// to the lower row index.
Var topk_mean_cols(const Var& x, Index k);

/// Cosine distance 0.5 * (1 - cos(u, v)) between two same-shape operands.
/// A zero-norm operand yields cos = 0 with no gradient and sets `degenerate`.
Var cosine_distance(const Var& u, const Var& v, bool* degenerate = nullptr);

/// Forward copy whose incoming gradient is discarded.
Var stop_gradient(const Var& x);

/// Indices of the k largest entries of `v`, ties to the lower index.
std::vector<Index> topk_indices(const Eigen::Ref<const Vector>& v, Index k);

}  // namespace co2net
