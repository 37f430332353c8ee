#pragma once

// Minimal tensor-level reverse-mode differentiation over fp64 matrices.
//
// A Tape records every op of one forward pass. Parameters enter as leaves
// bound to a Parameter; Tape::backward() accumulates into Parameter::grad.
// Constants never receive gradients. A tape built with requires_grad=false
// stores no backward closures and is used for inference.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cirl/matrix.hpp"

namespace cirl {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Logical tensor shape for persistence; defaults to {rows, cols}.
  std::vector<std::size_t> dims;

  Parameter() = default;
  Parameter(std::string n, Matrix v, std::vector<std::size_t> logical_dims = {})
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.rows(), value.cols()),
        dims(logical_dims.empty() ? std::vector<std::size_t>{value.rows(), value.cols()}
                                  : std::move(logical_dims)) {}
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  explicit Tape(bool requires_grad = true) : requires_grad_(requires_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Binds a leaf to `param`; repeated calls return the same leaf. The leaf
  // reads param.value in place, so it must not change while the tape lives.
  Var parameter(Parameter& param);

  // Records an op output. `fn` runs during backward with this node's gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  const Matrix& value(std::size_t id) const {
    const Node& node = nodes_[id];
    return node.external != nullptr ? *node.external : node.value;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id()); }
  // Gradient buffer of node `id`, zero-allocated on first touch.
  Matrix& grad_mut(std::size_t id);
  const Matrix* grad(std::size_t id) const;

  // Seeds d(loss)/d(loss) = 1 and propagates; loss must be 1 x 1.
  void backward(Var loss);

  bool requires_grad() const { return requires_grad_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;  // parameter storage, read in place
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  bool requires_grad_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

Var matmul(Var a, Var b);     // a[m x k] * b[k x n]
Var matmul_nt(Var a, Var b);  // a[m x k] * b[n x k]^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var scale(Var a, double s);
Var gelu(Var a);  // tanh approximation
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var gather_rows(Var table, std::span<const std::size_t> ids);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var weighted_row_sum(Var a, std::span<const double> weights);  // -> 1 x n

/// Scaled dot-product attention. q is [k x heads*dq], kmat is [n x heads*dq],
/// v is [n x heads*dv]. Scores are scaled by 1/sqrt(dq). With `causal`, row i
/// attends only to columns j <= i (requires k == n). If `capture` is set it
/// receives one [k x n] probability matrix per head.
Var attention(Var q, Var kmat, Var v, std::size_t heads, bool causal,
              std::vector<Matrix>* capture = nullptr);

}  // namespace ad
}  // namespace cirl
