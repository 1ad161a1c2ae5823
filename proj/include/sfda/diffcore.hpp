#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass; Tape::backward walks it
// in reverse creation order. Parameters live outside the tape and receive
// accumulated gradients when the tape is differentiated. All reductions run
// in a fixed left-to-right order so results are bit-reproducible.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sfda/types.hpp"

namespace sfda {

enum class LrGroup { trunk, head };

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  LrGroup group = LrGroup::head;
  /// Frozen parameters enter a tape as constants; their grad never changes.
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Matrix v, LrGroup g)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())), group(g) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  Scalar item() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Matrix value);
  /// Leaf whose gradient is tracked (readable through Var::grad after backward).
  Var input(Matrix value);
  /// Leaf bound to a parameter; backward adds into p.grad unless p is frozen.
  Var param(Parameter& p);

  /// Internal: records an op result. `parents` decide whether gradient flows.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);

  /// Reverse sweep from a 1x1 loss. Node gradients are recomputed from zero on
  /// every call; parameter gradients accumulate.
  void backward(const Var& loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Adds `g` into the gradient slot of node `id` if it tracks gradients.
  void accumulate(std::size_t id, const Matrix& g);
  Matrix& grad_slot(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Plain-value kernels (no tape).

/// Matrix product with fixed k-ascending accumulation per output entry.
Matrix gemm(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& z);
Matrix log_softmax_rows(const Matrix& z);

// ---------------------------------------------------------------------------
// Differentiable ops. Every op requires its inputs to share a tape.

Var matmul(const Var& a, const Var& b);
/// x[B x n] + b[1 x n] broadcast over rows.
Var add_bias(const Var& x, const Var& b);
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Elementwise product with a constant of the same shape.
Var mul_const(const Var& a, const Matrix& c);
Var scale(const Var& a, Scalar s);
Var exp(const Var& a);
/// Sum of all entries in row-major order, as a 1x1 node.
Var sum(const Var& a);
Var log_softmax(const Var& z);
Var softmax(const Var& z);
/// Rows of `a` at `rows`, in the given order.
Var select_rows(const Var& a, std::span<const Index> rows);
/// out[i] = a(i, cols[i]); result is B x 1.
Var pick(const Var& a, std::span<const int> cols);
/// Same value, no gradient path.
Var detach(const Var& a);

// ---------------------------------------------------------------------------
// Batch normalization over the row (batch) axis.

enum class BnMode { train, eval };

struct DegenerateBatchError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct BatchNormState {
  RowVector running_mean;
  RowVector running_var;
  Scalar eps = 1e-5;
  Scalar momentum = 0.1;

  explicit BatchNormState(Index d = 0)
      : running_mean(RowVector::Zero(d)), running_var(RowVector::Ones(d)) {}
};

/// Train mode normalizes by the batch mean and biased variance and, when
/// `update_running` is set, moves the running statistics toward the batch
/// mean and unbiased variance with the configured momentum. Eval mode
/// normalizes by the running statistics. Train mode needs at least 2 rows.
Var batchnorm_forward(const Var& x, const Var& gamma, const Var& beta, BnMode mode,
                      BatchNormState& state, bool update_running = true);

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradCheckReport {
  Scalar max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_entry;
  Scalar tolerance = 0.0;
  bool passed = false;
};

struct GradCheckAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Relative error used by gradient_check: |a - n| / max(|a|, |n|, floor).
/// Central differences of an O(1) loss carry about 1e-11 of round-off at
/// step 1e-5, so entries whose true gradient is zero (e.g. a bias feeding
/// train-mode BN) need the floor.
Scalar relative_error(Scalar analytic, Scalar numeric, Scalar floor = 1e-4);

/// Compares reverse-mode gradients of the scalar graph built by `loss_fn`
/// against central differences over every entry of every non-frozen
/// parameter in `params`. Parameter grads are overwritten. Throws
/// GradCheckAborted when the loss is non-finite.
GradCheckReport gradient_check(const std::function<Var(Tape&)>& loss_fn,
                               std::span<Parameter* const> params, Scalar step = 1e-5,
                               Scalar tol = 1e-5);

}  // namespace sfda
