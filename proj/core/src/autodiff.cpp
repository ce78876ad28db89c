#include "msda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msda/errors.hpp"

namespace msda {

namespace {

void require(bool ok, std::string_view op, const std::string& what) {
  if (!ok) throw ContractError(std::string(op) + ": " + what);
}

void require_same_shape(std::string_view op, const Tensor& a,
                        const Tensor& b) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
}

void require_finite(std::string_view op, const Tensor& t,
                    const char* which) {
  if (!t.all_finite())
    throw NumericError(std::string(op) + ": non-finite " + which);
}

Tape& tape_of(Var a) {
  require(a.valid(), "op", "uninitialised Var");
  return a.tape();
}

Tape& tape_of(Var a, Var b) {
  require(a.valid() && b.valid(), "op", "uninitialised Var");
  require(&a.tape() == &b.tape(), "op", "operands recorded on different tapes");
  return a.tape();
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape
// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(std::unique_ptr<Node> node) {
  if (consumed_)
    throw ContractError("tape already consumed by backward(); clear() it first");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  require_finite("constant", value, "value");
  auto n = std::make_unique<Node>();
  n->op = "constant";
  n->value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  require_finite("variable", value, "value");
  auto n = std::make_unique<Node>();
  n->op = "variable";
  n->value = std::move(value);
  n->requires_grad = true;
  return push(std::move(n));
}

Var Tape::leaf(const Parameter& param) {
  require_finite("leaf", param.value, ("parameter " + param.name).c_str());
  if (!grad_enabled_) return constant(param.value);
  auto n = std::make_unique<Node>();
  n->op = "leaf";
  n->value = param.value;
  n->param = const_cast<Parameter*>(&param);
  n->requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs,
                 AdjointRule rule) {
  require_finite(op, value, "output");
  auto n = std::make_unique<Node>();
  n->op = std::string(op);
  n->value = std::move(value);
  for (const auto& in : inputs) {
    require(&in.tape() == this, op, "input from a different tape");
    n->inputs.push_back(in.id());
    n->requires_grad = n->requires_grad || nodes_[in.id()]->requires_grad;
  }
  if (n->requires_grad) {
    require(static_cast<bool>(rule), op, "missing adjoint rule");
    n->rule = std::move(rule);
  }
  return push(std::move(n));
}

void Tape::backward(Var root) {
  require(root.valid() && &root.tape() == this, "backward", "foreign root");
  require(root.size() == 1, "backward",
          "root must be scalar, got " + shape_string(root.shape()));
  require(!consumed_, "backward", "tape already consumed");
  consumed_ = true;
  visit_order_.clear();

  for (auto& n : nodes_) n->adjoint = Tensor();
  Node& r = *nodes_[root.id()];
  if (!r.requires_grad) return;
  r.adjoint = Tensor(r.value.shape(), 1.0);

  AdjointContext ctx;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = *nodes_[id];
    if (!n.requires_grad || n.adjoint.empty()) continue;
    visit_order_.push_back(id);
    if (n.param) {
      Tensor& g = n.param->grad;
      if (g.shape() != n.value.shape()) g = Tensor(n.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adjoint[i];
      continue;
    }
    if (!n.rule) continue;  // free variable
    ctx.output_ = &n.value;
    ctx.output_grad_ = &n.adjoint;
    ctx.inputs_.clear();
    ctx.input_grads_.clear();
    for (auto in : n.inputs) {
      Node& src = *nodes_[in];
      ctx.inputs_.push_back(&src.value);
      if (src.requires_grad) {
        if (src.adjoint.empty()) src.adjoint = Tensor(src.value.shape());
        ctx.input_grads_.push_back(&src.adjoint);
      } else {
        ctx.input_grads_.push_back(nullptr);
      }
    }
    n.rule(ctx);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = *nodes_[v.id()];
  if (n.adjoint.empty()) return Tensor(n.value.shape());
  return n.adjoint;
}

void Tape::clear() {
  nodes_.clear();
  visit_order_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t.record("add", std::move(out), {a, b}, [](const AdjointContext& c) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor* g = c.input_grad(k))
        for (std::size_t i = 0; i < g->size(); ++i)
          (*g)[i] += c.output_grad()[i];
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.record("sub", std::move(out), {a, b}, [](const AdjointContext& c) {
    if (Tensor* g = c.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.output_grad()[i];
    if (Tensor* g = c.input_grad(1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= c.output_grad()[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record("mul", std::move(out), {a, b}, [](const AdjointContext& c) {
    const Tensor& go = c.output_grad();
    if (Tensor* g = c.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += go[i] * c.input(1)[i];
    if (Tensor* g = c.input_grad(1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += go[i] * c.input(0)[i];
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return t.record("scale", std::move(out), {a}, [s](const AdjointContext& c) {
    Tensor* g = c.input_grad(0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * c.output_grad()[i];
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v += s;
  return t.record("add_scalar", std::move(out), {a}, [](const AdjointContext& c) {
    Tensor* g = c.input_grad(0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.output_grad()[i];
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return t.record("relu", std::move(out), {a}, [](const AdjointContext& c) {
    Tensor* g = c.input_grad(0);
    for (std::size_t i = 0; i < g->size(); ++i)
      if (c.input(0)[i] > 0.0) (*g)[i] += c.output_grad()[i];
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return t.record("tanh", std::move(out), {a}, [](const AdjointContext& c) {
    Tensor* g = c.input_grad(0);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double y = c.output()[i];
      (*g)[i] += c.output_grad()[i] * (1.0 - y * y);
    }
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  require_finite("exp", a.value(), "input");
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  return t.record("exp", std::move(out), {a}, [](const AdjointContext& c) {
    Tensor* g = c.input_grad(0);
    for (std::size_t i = 0; i < g->size(); ++i)
      (*g)[i] += c.output_grad()[i] * c.output()[i];
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  require_finite("log", a.value(), "input");
  Tensor out = a.value();
  for (auto& v : out.values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input");
    v = std::log(v);
  }
  return t.record("log", std::move(out), {a}, [](const AdjointContext& c) {
    Tensor* g = c.input_grad(0);
    for (std::size_t i = 0; i < g->size(); ++i)
      (*g)[i] += c.output_grad()[i] / c.input(0)[i];
  });
}

Var log_clamped(Var a, double eps) {
  Tape& t = tape_of(a);
  require(eps > 0.0, "log_clamped", "eps must be positive");
  require_finite("log_clamped", a.value(), "input");
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::log(std::max(v, eps));
  return t.record("log_clamped", std::move(out), {a},
                  [eps](const AdjointContext& c) {
                    Tensor* g = c.input_grad(0);
                    for (std::size_t i = 0; i < g->size(); ++i)
                      if (c.input(0)[i] > eps)
                        (*g)[i] += c.output_grad()[i] / c.input(0)[i];
                  });
}

Var pow(Var a, double p) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::pow(v, p);
  return t.record("pow", std::move(out), {a}, [p](const AdjointContext& c) {
    Tensor* g = c.input_grad(0);
    for (std::size_t i = 0; i < g->size(); ++i)
      (*g)[i] += c.output_grad()[i] * p * std::pow(c.input(0)[i], p - 1.0);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace {

// C[n,m] += A[n,k] * B[k,m] with optional transposes expressed by strides.
void gemm_acc(const double* a, const double* b, double* out, std::size_t n,
              std::size_t k, std::size_t m, bool ta, bool tb) {
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * n + i] : a[i * k + p];
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = b + p * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * b[j * k + p];
      }
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && B.rank() == 2, "matmul", "operands must be rank 2");
  require(A.dim(1) == B.dim(0), "matmul",
          "inner dims " + shape_string(A.shape()) + " x " +
              shape_string(B.shape()));
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
  Tensor out({n, m});
  gemm_acc(A.data().data(), B.data().data(), out.data().data(), n, k, m, false,
           false);
  return t.record("matmul", std::move(out), {a, b},
                  [n, k, m](const AdjointContext& c) {
                    const double* go = c.output_grad().data().data();
                    if (Tensor* g = c.input_grad(0))  // dA = G B^T
                      gemm_acc(go, c.input(1).data().data(), g->data().data(), n,
                               m, k, false, true);
                    if (Tensor* g = c.input_grad(1))  // dB = A^T G
                      gemm_acc(c.input(0).data().data(), go, g->data().data(), k,
                               n, m, true, false);
                  });
}

Var bmm(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 3 && B.rank() == 3, "bmm", "operands must be rank 3");
  require(A.dim(0) == B.dim(0) && A.dim(2) == B.dim(1), "bmm",
          "dims " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  const std::size_t bs = A.dim(0), n = A.dim(1), k = A.dim(2), m = B.dim(2);
  Tensor out({bs, n, m});
  for (std::size_t s = 0; s < bs; ++s)
    gemm_acc(A.data().data() + s * n * k, B.data().data() + s * k * m,
             out.data().data() + s * n * m, n, k, m, false, false);
  return t.record(
      "bmm", std::move(out), {a, b}, [bs, n, k, m](const AdjointContext& c) {
        const double* go = c.output_grad().data().data();
        for (std::size_t s = 0; s < bs; ++s) {
          if (Tensor* g = c.input_grad(0))
            gemm_acc(go + s * n * m, c.input(1).data().data() + s * k * m,
                     g->data().data() + s * n * k, n, m, k, false, true);
          if (Tensor* g = c.input_grad(1))
            gemm_acc(c.input(0).data().data() + s * n * k, go + s * n * m,
                     g->data().data() + s * k * m, k, n, m, true, false);
        }
      });
}

Var add_bias(Var x, Var bias) {
  Tape& t = tape_of(x, bias);
  const Tensor& X = x.value();
  require(X.rank() == 2 && bias.value().rank() == 1 &&
              bias.value().dim(0) == X.dim(1),
          "add_bias",
          shape_string(X.shape()) + " + " + shape_string(bias.shape()));
  const std::size_t n = X.dim(0), m = X.dim(1);
  Tensor out = X;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) += bias.value()[j];
  return t.record("add_bias", std::move(out), {x, bias},
                  [n, m](const AdjointContext& c) {
                    const Tensor& go = c.output_grad();
                    if (Tensor* g = c.input_grad(0))
                      for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i];
                    if (Tensor* g = c.input_grad(1))
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j)
                          (*g)[j] += go[i * m + j];
                  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record("sum", Tensor::scalar(s), {a}, [](const AdjointContext& c) {
    const double go = c.output_grad()[0];
    Tensor* g = c.input_grad(0);
    for (auto& v : g->values()) v += go;
  });
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var sum_last(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  require(A.rank() >= 1, "sum_last", "rank-0 input");
  const std::size_t inner = A.shape().back();
  const std::size_t outer = A.size() / inner;
  Shape os(A.shape().begin(), A.shape().end() - 1);
  Tensor out = os.empty() ? Tensor::scalar(0.0) : Tensor(os);
  for (std::size_t o = 0; o < outer; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += A[o * inner + i];
    out[o] = s;
  }
  return t.record("sum_last", std::move(out), {a},
                  [outer, inner](const AdjointContext& c) {
                    Tensor* g = c.input_grad(0);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t i = 0; i < inner; ++i)
                        (*g)[o * inner + i] += c.output_grad()[o];
                  });
}

Var softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  require(A.rank() >= 1, "softmax", "rank-0 input");
  require_finite("softmax", A, "input");
  const std::size_t inner = A.shape().back();
  const std::size_t outer = A.size() / inner;
  Tensor out = A;
  for (std::size_t o = 0; o < outer; ++o) {
    auto r = out.data().subspan(o * inner, inner);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (auto& v : r) s += (v = std::exp(v - mx));
    for (auto& v : r) v /= s;
  }
  return t.record("softmax", std::move(out), {a},
                  [outer, inner](const AdjointContext& c) {
                    Tensor* g = c.input_grad(0);
                    const Tensor& y = c.output();
                    const Tensor& go = c.output_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                      const std::size_t base = o * inner;
                      double dot = 0.0;
                      for (std::size_t i = 0; i < inner; ++i)
                        dot += go[base + i] * y[base + i];
                      for (std::size_t i = 0; i < inner; ++i)
                        (*g)[base + i] += y[base + i] * (go[base + i] - dot);
                    }
                  });
}

Var log_sum_exp(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  require(A.rank() >= 1, "log_sum_exp", "rank-0 input");
  require_finite("log_sum_exp", A, "input");
  const std::size_t inner = A.shape().back();
  const std::size_t outer = A.size() / inner;
  Shape os(A.shape().begin(), A.shape().end() - 1);
  Tensor out = os.empty() ? Tensor::scalar(0.0) : Tensor(os);
  for (std::size_t o = 0; o < outer; ++o) {
    auto r = A.data().subspan(o * inner, inner);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    out[o] = mx + std::log(s);
  }
  return t.record("log_sum_exp", std::move(out), {a},
                  [outer, inner](const AdjointContext& c) {
                    Tensor* g = c.input_grad(0);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t i = 0; i < inner; ++i) {
                        const std::size_t k = o * inner + i;
                        (*g)[k] += c.output_grad()[o] *
                                   std::exp(c.input(0)[k] - c.output()[o]);
                      }
                  });
}

Var frobenius_norm(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return t.record("frobenius_norm", Tensor::scalar(std::sqrt(s)), {a},
                  [](const AdjointContext& c) {
                    const double nrm = c.output()[0];
                    if (nrm == 0.0) return;
                    Tensor* g = c.input_grad(0);
                    const double k = c.output_grad()[0] / nrm;
                    for (std::size_t i = 0; i < g->size(); ++i)
                      (*g)[i] += k * c.input(0)[i];
                  });
}

Var row_norms(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  require(A.rank() == 2, "row_norms", "input must be rank 2");
  const std::size_t n = A.dim(0), d = A.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : A.row(i)) s += v * v;
    out[i] = std::sqrt(s);
  }
  return t.record("row_norms", std::move(out), {a},
                  [n, d](const AdjointContext& c) {
                    Tensor* g = c.input_grad(0);
                    for (std::size_t i = 0; i < n; ++i) {
                      const double nrm = c.output()[i];
                      if (nrm == 0.0) continue;
                      const double k = c.output_grad()[i] / nrm;
                      for (std::size_t j = 0; j < d; ++j)
                        (*g)[i * d + j] += k * c.input(0)[i * d + j];
                    }
                  });
}

Var sqdist(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1), "sqdist",
          shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  const std::size_t n = A.dim(0), m = B.dim(0), d = A.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = A[i * d + k] - B[j * d + k];
        s += diff * diff;
      }
      out.at(i, j) = s;
    }
  return t.record("sqdist", std::move(out), {a, b},
                  [n, m, d](const AdjointContext& c) {
                    Tensor* ga = c.input_grad(0);
                    Tensor* gb = c.input_grad(1);
                    const Tensor& A = c.input(0);
                    const Tensor& B = c.input(1);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < m; ++j) {
                        const double go = 2.0 * c.output_grad()[i * m + j];
                        if (go == 0.0) continue;
                        for (std::size_t k = 0; k < d; ++k) {
                          const double diff = go * (A[i * d + k] - B[j * d + k]);
                          if (ga) (*ga)[i * d + k] += diff;
                          if (gb) (*gb)[j * d + k] -= diff;
                        }
                      }
                  });
}

Var sqdist_rows(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && A.shape() == B.shape(), "sqdist_rows",
          shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  const std::size_t n = A.dim(0), d = A.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = A[i * d + k] - B[i * d + k];
      s += diff * diff;
    }
    out[i] = s;
  }
  return t.record("sqdist_rows", std::move(out), {a, b},
                  [n, d](const AdjointContext& c) {
                    Tensor* ga = c.input_grad(0);
                    Tensor* gb = c.input_grad(1);
                    for (std::size_t i = 0; i < n; ++i) {
                      const double go = 2.0 * c.output_grad()[i];
                      for (std::size_t k = 0; k < d; ++k) {
                        const double diff =
                            go * (c.input(0)[i * d + k] - c.input(1)[i * d + k]);
                        if (ga) (*ga)[i * d + k] += diff;
                        if (gb) (*gb)[i * d + k] -= diff;
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Indexing and layout
// ---------------------------------------------------------------------------

Var gather(Var a, std::vector<std::size_t> index, Shape shape) {
  Tape& t = tape_of(a);
  require(shape_size(shape) == index.size(), "gather",
          "index count does not match shape " + shape_string(shape));
  const Tensor& A = a.value();
  std::vector<double> vals(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < A.size(), "gather", "index out of range");
    vals[i] = A[index[i]];
  }
  return t.record("gather", Tensor(std::move(shape), std::move(vals)), {a},
                  [idx = std::move(index)](const AdjointContext& c) {
                    Tensor* g = c.input_grad(0);
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      (*g)[idx[i]] += c.output_grad()[i];
                  });
}

Var concat(std::span<const Var> parts) {
  require(!parts.empty(), "concat", "no inputs");
  Tape& t = tape_of(parts.front());
  std::vector<double> vals;
  std::vector<Var> ins(parts.begin(), parts.end());
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require(&p.tape() == &t, "concat", "inputs from different tapes");
    offsets.push_back(vals.size());
    vals.insert(vals.end(), p.value().data().begin(), p.value().data().end());
  }
  const std::size_t total = vals.size();
  return t.record("concat", Tensor({total}, std::move(vals)), std::move(ins),
                  [offsets](const AdjointContext& c) {
                    for (std::size_t k = 0; k < offsets.size(); ++k)
                      if (Tensor* g = c.input_grad(k))
                        for (std::size_t i = 0; i < g->size(); ++i)
                          (*g)[i] += c.output_grad()[offsets[k] + i];
                  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  require(shape_size(shape) == a.size(), "reshape",
          shape_string(a.shape()) + " -> " + shape_string(shape));
  return t.record("reshape", a.value().reshaped(std::move(shape)), {a},
                  [](const AdjointContext& c) {
                    Tensor* g = c.input_grad(0);
                    for (std::size_t i = 0; i < g->size(); ++i)
                      (*g)[i] += c.output_grad()[i];
                  });
}

namespace {

Var scale_axis(Var a, Var v, bool rows) {
  const std::string_view op = rows ? "scale_rows" : "scale_cols";
  Tape& t = tape_of(a, v);
  const Tensor& A = a.value();
  const Tensor& V = v.value();
  require(A.rank() >= 2 && V.rank() == A.rank() - 1, op,
          shape_string(A.shape()) + " with " + shape_string(V.shape()));
  const std::size_t n = A.shape()[A.rank() - 2];
  const std::size_t m = A.shape().back();
  require(V.shape().back() == (rows ? n : m), op,
          shape_string(A.shape()) + " with " + shape_string(V.shape()));
  for (std::size_t i = 0; i + 1 < V.rank(); ++i)
    require(V.shape()[i] == A.shape()[i], op, "batch dims differ");
  const std::size_t batch = A.size() / (n * m);
  const std::size_t vlen = rows ? n : m;
  Tensor out = A;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        out[(b * n + i) * m + j] *= V[b * vlen + (rows ? i : j)];
  return t.record(op, std::move(out), {a, v},
                  [batch, n, m, vlen, rows](const AdjointContext& c) {
                    Tensor* ga = c.input_grad(0);
                    Tensor* gv = c.input_grad(1);
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) {
                          const std::size_t k = (b * n + i) * m + j;
                          const std::size_t vk = b * vlen + (rows ? i : j);
                          const double go = c.output_grad()[k];
                          if (ga) (*ga)[k] += go * c.input(1)[vk];
                          if (gv) (*gv)[vk] += go * c.input(0)[k];
                        }
                  });
}

}  // namespace

Var scale_rows(Var a, Var v) { return scale_axis(a, v, true); }
Var scale_cols(Var a, Var v) { return scale_axis(a, v, false); }

Var detach(Var a) { return tape_of(a).constant(a.value()); }

}  // namespace msda
