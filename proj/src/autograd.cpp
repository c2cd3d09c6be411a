// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace bimsmt {

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  if (params_.count(name)) throw ContractError("duplicate parameter " + name);
  Tensor value(shape);
  if (init == Init::kUniform) {
    for (auto& v : value.data()) v = rng.uniform(-kInitScale, kInitScale);
  }
  Tensor grad(shape);
  auto [it, _] = params_.emplace(name, Parameter{name, std::move(value), std::move(grad)});
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

std::size_t ParameterSet::coordinate_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

std::map<std::string, Tensor> ParameterSet::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params_) out.emplace(name, p.value);
  return out;
}

std::size_t ParameterSet::restore(const std::map<std::string, Tensor>& values,
                                  bool require_all) {
  std::size_t copied = 0;
  for (auto& [name, p] : params_) {
    auto it = values.find(name);
    if (it == values.end()) {
      if (require_all) throw ConfigError("checkpoint is missing parameter " + name);
      continue;
    }
    if (it->second.shape() != p.value.shape()) {
      throw ConfigError("parameter " + name + " has shape " + shape_string(p.value.shape()) +
                        " but checkpoint holds " + shape_string(it->second.shape()));
    }
    p.value = it->second;
    ++copied;
  }
  return copied;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.own = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.own = std::move(value);
  n.leaf = true;
  n.needs_grad = record_;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.leaf = true;
  n.needs_grad = record_;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
  Node n;
  n.own = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      n.inputs.push_back(in.id);
      n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

std::span<const double> Tape::grad_out(std::uint32_t id) const { return nodes_[id].grad; }

std::span<double> Tape::grad_in(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return {};
  if (n.param) return n.param->grad.data();
  if (n.grad.empty()) n.grad.assign(n.value_ref().size(), 0.0);
  return n.grad;
}

Tensor Tape::gradient(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.param) return n.param->grad;
  Tensor g(n.value_ref().shape());
  if (!n.grad.empty()) std::copy(n.grad.begin(), n.grad.end(), g.data().begin());
  return g;
}

void Tape::backward(Var loss) {
  if (!record_) throw ContractError("backward() on a tape that does not record gradients");
  if (loss.tape != this) throw ContractError("loss is not on this tape");
  const Node& ln = nodes_[loss.id];
  if (ln.value_ref().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(ln.value_ref().shape()));
  }
  for (auto& n : nodes_) {
    if (!n.leaf) n.grad.clear();
  }
  if (!ln.needs_grad) return;
  std::span<double> seed = grad_in(loss.id);
  seed[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.leaf || !n.backward || n.grad.empty()) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Tape& tape_of(Var a) {
  if (!a.tape) throw ContractError("operation on an unbound Var");
  return *a.tape;
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

[[noreturn]] void dim_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

template <typename F, typename D>
Var unary(Var a, F f, D deriv) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return t.record(std::move(out), {a}, [a, deriv](Tape& tape, std::uint32_t self) {
    auto g = tape.grad_out(self);
    auto ga = tape.grad_in(a.id);
    if (ga.empty()) return;
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(Var{&tape, self});
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || (bv.rank() != 1 && bv.rank() != 2) || av.cols() != bv.rows()) {
    dim_error("matmul", av, bv);
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(bv.rank() == 1 ? Shape{m} : Shape{m, n});
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tape, std::uint32_t self) {
    auto g = tape.grad_out(self);
    const double* A = tape.value(a).data().data();
    const double* B = tape.value(b).data().data();
    if (auto ga = tape.grad_in(a.id); !ga.empty()) {
      // dA = dC · Bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (auto gb = tape.grad_in(b.id); !gb.empty()) {
      // dB = Aᵀ · dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

namespace {

enum class Arith { kAdd, kSub, kMul };

Var arith(Var a, Var b, Arith op, const char* name) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool exact = av.shape() == bv.shape();
  const bool bias = !exact && op != Arith::kMul && av.rank() == 2 && bv.rank() == 1 &&
                    bv.rows() == av.rows();
  if (!exact && !bias) dim_error(name, av, bv);
  const std::size_t cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double y = exact ? bv[i] : bv[i / cols];
    switch (op) {
      case Arith::kAdd: out[i] = av[i] + y; break;
      case Arith::kSub: out[i] = av[i] - y; break;
      case Arith::kMul: out[i] = av[i] * y; break;
    }
  }
  return t.record(std::move(out), {a, b}, [a, b, op, exact, cols](Tape& tape, std::uint32_t self) {
    auto g = tape.grad_out(self);
    auto ga = tape.grad_in(a.id);
    auto gb = tape.grad_in(b.id);
    if (op == Arith::kMul) {
      const Tensor& av = tape.value(a);
      const Tensor& bv = tape.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!ga.empty()) ga[i] += g[i] * bv[i];
        if (!gb.empty()) gb[i] += g[i] * av[i];
      }
      return;
    }
    const double sign = op == Arith::kSub ? -1.0 : 1.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!ga.empty()) ga[i] += g[i];
      if (!gb.empty()) gb[exact ? i : i / cols] += sign * g[i];
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return arith(a, b, Arith::kAdd, "add"); }
Var sub(Var a, Var b) { return arith(a, b, Arith::kSub, "sub"); }
Var mul(Var a, Var b) { return arith(a, b, Arith::kMul, "mul"); }

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var one_minus(Var a) {
  return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(Tensor::scalar(s), {a}, [a](Tape& tape, std::uint32_t self) {
    const double g = tape.grad_out(self)[0];
    for (double& x : tape.grad_in(a.id)) x += g;
  });
}

Var dot(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size() || av.rank() != 1 || bv.rank() != 1) dim_error("dot", av, bv);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return tape_of(a).record(Tensor::scalar(s), {a, b}, [a, b](Tape& tape, std::uint32_t self) {
    const double g = tape.grad_out(self)[0];
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (auto ga = tape.grad_in(a.id); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
    if (auto gb = tape.grad_in(b.id); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
  });
}

std::vector<double> softmax_values(std::span<const double> v) {
  if (v.empty()) throw DimensionError("softmax of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (double& x : out) x /= z;
  return out;
}

Var softmax(Var v) {
  const Tensor& x = v.value();
  if (x.rank() != 1) throw DimensionError("softmax expects a vector, got " + shape_string(x.shape()));
  Tensor out = Tensor::vector(softmax_values(x.data()));
  return tape_of(v).record(std::move(out), {v}, [v](Tape& tape, std::uint32_t self) {
    auto gv = tape.grad_in(v.id);
    if (gv.empty()) return;
    auto g = tape.grad_out(self);
    const Tensor& y = tape.value(Var{&tape, self});
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * y[i];
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += y[i] * (g[i] - s);
  });
}

Var nll(Var logits, std::size_t target) {
  const Tensor& x = logits.value();
  if (x.rank() != 1 || x.size() == 0) throw DimensionError("nll expects a non-empty vector");
  if (target >= x.size()) throw ContractError("nll target id out of range");
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  double z = 0.0;
  for (double v : x.data()) z += std::exp(v - mx);
  const double loss = std::log(z) + mx - x[target];
  return tape_of(logits).record(Tensor::scalar(loss), {logits},
                                [logits, target](Tape& tape, std::uint32_t self) {
    auto gl = tape.grad_in(logits.id);
    if (gl.empty()) return;
    const double g = tape.grad_out(self)[0];
    auto p = softmax_values(tape.value(logits).data());
    for (std::size_t i = 0; i < p.size(); ++i) gl[i] += g * (p[i] - (i == target ? 1.0 : 0.0));
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  std::vector<double> out;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    const Tensor& v = p.value();
    if (v.rank() != 1) throw DimensionError("concat expects vectors");
    out.insert(out.end(), v.data().begin(), v.data().end());
  }
  return tape_of(parts.front()).record(Tensor::vector(std::move(out)), parts,
                                       [parts](Tape& tape, std::uint32_t self) {
    auto g = tape.grad_out(self);
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t n = tape.value(p).size();
      if (auto gp = tape.grad_in(p.id); !gp.empty())
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      off += n;
    }
  });
}

Var columns(const std::vector<Var>& cols) {
  if (cols.empty()) throw DimensionError("columns of nothing");
  const std::size_t d = cols.front().value().size();
  const std::size_t n = cols.size();
  Tensor out(Shape{d, n});
  for (std::size_t j = 0; j < n; ++j) {
    require_same_tape(cols.front(), cols[j]);
    const Tensor& c = cols[j].value();
    if (c.rank() != 1 || c.size() != d) dim_error("columns", cols.front().value(), c);
    for (std::size_t i = 0; i < d; ++i) out.at(i, j) = c[i];
  }
  return tape_of(cols.front()).record(std::move(out), cols,
                                      [cols, d, n](Tape& tape, std::uint32_t self) {
    auto g = tape.grad_out(self);
    for (std::size_t j = 0; j < n; ++j) {
      if (auto gc = tape.grad_in(cols[j].id); !gc.empty())
        for (std::size_t i = 0; i < d; ++i) gc[i] += g[i * n + j];
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose expects a matrix");
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  return tape_of(a).record(std::move(out), {a}, [a, r, c](Tape& tape, std::uint32_t self) {
    auto ga = tape.grad_in(a.id);
    if (ga.empty()) return;
    auto g = tape.grad_out(self);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Var reshape(Var a, Shape shape) {
  const Tensor& av = a.value();
  if (shape_size(shape) != av.size()) {
    throw DimensionError("reshape " + shape_string(av.shape()) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape), av.values());
  return tape_of(a).record(std::move(out), {a}, [a](Tape& tape, std::uint32_t self) {
    auto ga = tape.grad_in(a.id);
    if (ga.empty()) return;
    auto g = tape.grad_out(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var row(Var matrix, std::size_t index) {
  const Tensor& m = matrix.value();
  if (m.rank() != 2) throw DimensionError("row() expects a matrix");
  if (index >= m.rows()) throw ContractError("row index " + std::to_string(index) + " out of range");
  const std::size_t c = m.cols();
  std::vector<double> out(m.data().begin() + index * c, m.data().begin() + (index + 1) * c);
  return tape_of(matrix).record(Tensor::vector(std::move(out)), {matrix},
                                [matrix, index, c](Tape& tape, std::uint32_t self) {
    auto gm = tape.grad_in(matrix.id);
    if (gm.empty()) return;
    auto g = tape.grad_out(self);
    for (std::size_t j = 0; j < c; ++j) gm[index * c + j] += g[j];
  });
}

Var convex_combine(Var alpha, Var a, Var b) {
  require_same_tape(alpha, a);
  require_same_tape(a, b);
  const Tensor& al = alpha.value();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (al.shape() != av.shape() || av.shape() != bv.shape()) dim_error("convex_combine", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] == bv[i]) {
      out[i] = av[i];
      continue;
    }
    const double v = al[i] * av[i] + (1.0 - al[i]) * bv[i];
    out[i] = std::clamp(v, std::min(av[i], bv[i]), std::max(av[i], bv[i]));
  }
  return tape_of(a).record(std::move(out), {alpha, a, b}, [alpha, a, b](Tape& tape, std::uint32_t self) {
    auto g = tape.grad_out(self);
    const Tensor& al = tape.value(alpha);
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    auto gal = tape.grad_in(alpha.id);
    auto ga = tape.grad_in(a.id);
    auto gb = tape.grad_in(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!gal.empty()) gal[i] += g[i] * (av[i] - bv[i]);
      if (!ga.empty()) ga[i] += g[i] * al[i];
      if (!gb.empty()) gb[i] += g[i] * (1.0 - al[i]);
    }
  });
}

Var dropout(Var t, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!train || rate == 0.0) return t;
  const Tensor& tv = t.value();
  Tensor mask(tv.shape());
  const double keep = 1.0 / (1.0 - rate);
  for (auto& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
  Var mv = tape_of(t).constant(std::move(mask));
  return mul(t, mv);
}

}  // namespace bimsmt
