#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msda/tensor.hpp"

namespace msda {

/// A named trainable array and its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Decoupled weight decay applies only when set; prototypes clear it.
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()),
        decay(wd) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
/// that produced it is alive and has not been cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  double item() const { return value().item(); }

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What an adjoint rule sees when it runs: the forward values and the
/// gradient flowing into its output. `input_grad(i)` is null for inputs that
/// do not require a gradient.
class AdjointContext {
 public:
  const Tensor& output() const { return *output_; }
  const Tensor& output_grad() const { return *output_grad_; }
  const Tensor& input(std::size_t i) const { return *inputs_[i]; }
  Tensor* input_grad(std::size_t i) const { return input_grads_[i]; }

 private:
  friend class Tape;
  const Tensor* output_ = nullptr;
  const Tensor* output_grad_ = nullptr;
  std::vector<const Tensor*> inputs_;
  std::vector<Tensor*> input_grads_;
};

using AdjointRule = std::function<void(const AdjointContext&)>;

/// Append-only record of a forward computation.
///
/// backward() walks nodes in exact reverse append order, so recording order
/// is a valid topological order by construction. Leaves bound to a
/// Parameter accumulate into Parameter::grad; free variables keep their
/// gradient on the tape (see grad()).
class Tape {
 public:
  // A tape with gradients disabled records parameters as constants; use it
  // for inference on frozen models.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Gradients of a leaf accumulate into param.grad on backward().
  Var leaf(const Parameter& param);
  bool grad_enabled() const { return grad_enabled_; }

  // Records an op. `rule` may be empty only when no input requires grad.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs,
             AdjointRule rule);

  void backward(Var root);

  // Gradient of the last backward() root w.r.t. `v`; zeros if none reached.
  Tensor grad(Var v) const;

  const Tensor& value(std::size_t id) const { return nodes_[id]->value; }
  bool requires_grad(std::size_t id) const {
    return nodes_[id]->requires_grad;
  }
  std::string_view op(std::size_t id) const { return nodes_[id]->op; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void clear();

  // Number of nodes visited by the most recent backward(), in visit order.
  const std::vector<std::size_t>& last_backward_order() const {
    return visit_order_;
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor adjoint;
    std::vector<std::size_t> inputs;
    AdjointRule rule;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(std::unique_ptr<Node> node);

  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::size_t> visit_order_;
  bool grad_enabled_ = true;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Shape violations throw ContractError; a
// non-finite result throws NumericError naming the op.
// ---------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);

Var matmul(Var a, Var b);  // [n,k] x [k,m]
Var bmm(Var a, Var b);     // [B,n,k] x [B,k,m]
Var add_bias(Var x, Var bias);  // [n,m] + [m]

Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
// log(max(a, eps)); zero gradient where clamped.
Var log_clamped(Var a, double eps);
Var pow(Var a, double p);

Var sum(Var a);
Var mean(Var a);
Var sum_last(Var a);  // reduce the trailing axis

Var softmax(Var a);        // along the trailing axis
Var log_sum_exp(Var a);    // along the trailing axis
Var frobenius_norm(Var a); // sqrt(sum a^2); subgradient 0 at the origin
Var row_norms(Var a);      // [n,d] -> [n]; subgradient 0 at the origin

// Pairwise squared Euclidean distances between rows: [n,d],[m,d] -> [n,m].
Var sqdist(Var a, Var b);
// Row-aligned squared distances: [n,d],[n,d] -> [n].
Var sqdist_rows(Var a, Var b);

// out.flat[i] = a.flat[index[i]], reshaped to `shape`.
Var gather(Var a, std::vector<std::size_t> index, Shape shape);
Var concat(std::span<const Var> parts);  // flattened concatenation
Var reshape(Var a, Shape shape);

// a[..., i, j] * v[..., i]  and  a[..., i, j] * v[..., j].
Var scale_rows(Var a, Var v);
Var scale_cols(Var a, Var v);

Var detach(Var a);

}  // namespace msda
