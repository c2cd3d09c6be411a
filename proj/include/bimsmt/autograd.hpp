// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "bimsmt/tensor.hpp"

namespace bimsmt {

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

enum class Init { kUniform, kZeros };

/// Range used for uniform initialisation of weight matrices.
inline constexpr double kInitScale = 0.08;

/// Named parameter collection with stable element addresses.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(const std::string& name, Shape shape, Init init, Rng& rng);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t coordinate_count() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::map<std::string, Tensor> snapshot() const;
  /// Copies every tensor in `values` whose name exists here; shape must match.
  /// Returns the number of tensors copied.
  std::size_t restore(const std::map<std::string, Tensor>& values, bool require_all = true);

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  bool valid() const { return tape != nullptr; }
};

/// Records operations in execution order; backward() replays them in exact
/// reverse order. Leaf gradients (variables and parameters) accumulate across
/// backward calls; interior gradients are recomputed on each call.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  Var parameter(Parameter& p);

  const Tensor& value(Var v) const { return nodes_[v.id].value_ref(); }
  bool requires_grad(Var v) const { return nodes_[v.id].needs_grad; }
  /// Gradient of the last backward() target with respect to `v`.
  Tensor gradient(Var v) const;

  void backward(Var loss);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Op construction. Used by the op library and by tests that define ops.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
  std::span<const double> grad_out(std::uint32_t id) const;
  /// Mutable gradient buffer of an input node; empty span when it needs none.
  std::span<double> grad_in(std::uint32_t id);
  const std::vector<std::uint32_t>& inputs(std::uint32_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor own;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    bool leaf = false;
    bool needs_grad = false;
    std::vector<double> grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;

    const Tensor& value_ref() const { return external ? *external : own; }
  };

  Var push(Node node);

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Vectors are rank-1 column vectors; matrices rank-2.

Var matmul(Var a, Var b);
Var add(Var a, Var b);  // exact shape, or matrix + column-broadcast vector
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var tanh(Var a);
Var sigmoid(Var a);
Var one_minus(Var a);
Var scale(Var a, double c);
Var sum(Var a);
Var dot(Var a, Var b);
Var softmax(Var v);
/// -log softmax(logits)[target], computed stably.
Var nll(Var logits, std::size_t target);
Var concat(const std::vector<Var>& parts);
/// Stacks equal-length vectors as the columns of a matrix.
Var columns(const std::vector<Var>& cols);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
/// Row `index` of a matrix as a vector (embedding lookup).
Var row(Var matrix, std::size_t index);
/// α⊙a + (1−α)⊙b for α in [0, 1]. Each output entry is clamped into the
/// interval spanned by a and b so equal inputs are returned bit-exactly.
Var convex_combine(Var alpha, Var a, Var b);
/// Inverted dropout. Identity when `train` is false or `rate` is 0.
Var dropout(Var t, double rate, bool train, Rng& rng);

/// Affine map W·x + b.
inline Var affine(Var w, Var x, Var b) { return add(matmul(w, x), b); }

/// Numerically stable softmax on raw values.
std::vector<double> softmax_values(std::span<const double> v);

}  // namespace bimsmt
