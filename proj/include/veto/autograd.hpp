#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "veto/rng.hpp"
#include "veto/tensor.hpp"

namespace veto {

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // same shape as value; allocated only when requires_grad
  bool requires_grad = false;
};
}  // namespace detail

// Shared handle to a value in the computation graph. Values are immutable
// after construction; only the gradient buffer accumulates.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  // The gradient buffer is shared node state: backward steps accumulate into
  // it through Var copies, so it stays writable through a const handle.
  Tensor& grad() const { return node_->grad; }
  void zero_grad() const;

  // Mutable value access; reserved for the optimizer and the finite-difference
  // checker, which deliberately step parameters in place.
  Tensor& mutable_value() { return node_->value; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode tape: ops append one backward step per recorded operation;
// backward() replays them last-to-first. No backward step is recorded when
// none of an op's inputs require gradients, so pure inference builds an
// empty tape.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  void backward(Var& loss);

 private:
  std::vector<std::function<void()>> steps_;
};

// ---- Operations. Forward semantics in the lhs comment, backward is analytic.

// [m×k]·[k×n] -> [m×n]; dA += dC·Bt, dB += At·dC.
Var matmul(Tape& tape, const Var& a, const Var& b);

// 2-D transpose.
Var transpose(Tape& tape, const Var& a);

// Elementwise, identical shapes.
Var add(Tape& tape, const Var& a, const Var& b);
Var sub(Tape& tape, const Var& a, const Var& b);
Var mul(Tape& tape, const Var& a, const Var& b);
Var scale(Tape& tape, const Var& a, double s);

// x[t×n] (or [n]) with w[m×n], b[m] -> x·wt + b.
Var linear(Tape& tape, const Var& x, const Var& w, const Var& b);

Var relu(Tape& tape, const Var& a);
Var gelu(Tape& tape, const Var& a);  // exact erf form

// Max-subtracted softmax along `axis`; rows of the axis sum to 1.
Var softmax(Tape& tape, const Var& a, int axis);

// Normalizes the last axis to mean 0 / variance 1, then applies gain & bias.
Var layer_norm(Tape& tape, const Var& x, const Var& gain, const Var& bias, double eps);

// [c×h×w] -> [c×p×p]; block b spans input rows [floor(b*h/p), floor((b+1)*h/p))
// and likewise for columns, so boundary blocks absorb remainders.
Var avg_pool(Tape& tape, const Var& x, std::int64_t p);

// Concatenation along `axis`; all other extents must agree.
Var concat(Tape& tape, const std::vector<Var>& parts, int axis);

// k vectors of length n -> [k×n].
Var stack_rows(Tape& tape, const std::vector<Var>& rows);

// Same numel, new shape; data order unchanged.
Var reshape(Tape& tape, const Var& a, Shape shape);

// Row r of a [rows×cols] matrix -> [cols]. Doubles as embedding lookup:
// the backward accumulates only into the selected row.
Var row(Tape& tape, const Var& a, std::int64_t r);

// [c×p×p] -> (p/k)^2 tiles of [c×k×k], row-major over the block grid.
std::vector<Var> split_blocks(Tape& tape, const Var& x, std::int64_t k);

// x[ci×h×w] * w[co×ci×kh×kw] + b[co], zero padding `pad`, stride 1.
Var conv2d(Tape& tape, const Var& x, const Var& w, const Var& b, std::int64_t pad);

// Inverted dropout; rate 0 is the identity and records nothing.
Var dropout(Tape& tape, const Var& a, double rate, RngStream& rng);

Var sum(Tape& tape, const Var& a);   // -> scalar
Var mean(Tape& tape, const Var& a);  // -> scalar

// Softmax cross-entropy. logits is [b×c] (or [c] for b=1); labels[i] indexes
// class of row i; result = sum_i weights[i]*ce_i / b with weights defaulting
// to 1. d logits_i = weights[i]/b * (softmax(logits_i) - onehot(labels[i])).
Var cross_entropy(Tape& tape, const Var& logits, const std::vector<int>& labels,
                  const std::vector<double>& weights = {});

}  // namespace veto
