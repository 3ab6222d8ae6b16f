// Small reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation applied to its Vars. backward() walks the
// record in reverse and accumulates gradients; parameters registered with
// Tape::param receive their gradient in Parameter::grad.
#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "neulns/vrp.hpp"

namespace neulns {

NEULNS_DEFINE_ERROR(NoGradPath);
NEULNS_DEFINE_ERROR(IsolatedNode);

namespace ad {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Gradient after Tape::backward; zero-sized if nothing flowed into this Var.
  const Tensor& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // Reads p.value; backward() adds the gradient into p.grad. With track=false
  // the parameter enters as a constant.
  Var param(Parameter& p, bool track = true);

  // For op implementations. `fn` is dropped when requires_grad is false.
  Var push(Tensor value, bool requires_grad, Backward fn);
  void accumulate(int id, const Tensor& g);

  // loss must be 1x1. Throws NoGradPath if it does not depend on any leaf.
  void backward(Var loss);

  const Tensor& value(int id) const { return entries_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const { return entries_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return entries_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::deque<Entry> entries_;
};

// CSR adjacency: node i attends over targets[offsets[i] .. offsets[i+1]).
struct Adjacency {
  std::vector<int> offsets;
  std::vector<int> targets;

  int nodes() const { return static_cast<int>(offsets.size()) - 1; }
  int arcs() const { return static_cast<int>(targets.size()); }
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                   // element-wise
Var add_row(Var a, Var row);             // row (1 x c) broadcast over a's rows
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var exp(Var a);
Var square(Var a);
Var sum(Var a);                          // 1 x 1
Var mean(Var a);                         // 1 x 1
Var mean_rows(Var a);                    // 1 x c
Var row(Var a, Eigen::Index i);          // 1 x c
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);

// Element-wise attention with edge terms. For every arc k = (i, j):
//   w_k = LeakyReLU(P_i + Q_j + E_k), normalised per coordinate over i's arcs,
//   out_i = X_i + sum_k w_k * X_j.
// P, Q, X are n x c; E is arcs x c in CSR order. Throws IsolatedNode for a
// node without arcs.
Var egate_attend(Var p, Var q, Var e, Var x, const Adjacency& adj, double slope);

// The normalised weights egate_attend uses, arcs x c. Values only.
Tensor egate_weights(const Tensor& p, const Tensor& q, const Tensor& e, const Adjacency& adj, double slope);

// log softmax(scores)[index] over the allowed entries of an n x 1 column.
Var log_softmax_pick(Var scores, const std::vector<char>& allowed, Eigen::Index index);

// Probabilities of the masked softmax; disallowed entries are 0.
std::vector<double> masked_softmax(const Tensor& scores, const std::vector<char>& allowed);

// min(rho * adv, clip(rho, 1 - eps, 1 + eps) * adv), rho = exp(logp - logp_old).
Var ppo_clip(Var logp, double logp_old, double advantage, double eps);

// Largest relative error between backward() gradients and central finite
// differences over every coordinate of `params`. Relative error of a
// coordinate: |analytic - numeric| / max(|analytic|, |numeric|, 1e-6), the
// smaller of the values at `step` and `step / 10`.
double grad_check(std::span<Parameter* const> params, const std::function<Var(Tape&)>& loss,
                  double step = 1e-4);

}  // namespace ad
}  // namespace neulns
