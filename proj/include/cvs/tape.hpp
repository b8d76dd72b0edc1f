#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cvs/tensor.hpp"

namespace cvs {

/// Handle to a value recorded on a GradTape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

class GradTape;
class Gradients;

/// Receives the upstream gradient of one node and accumulates into its inputs.
using BackwardFn = std::function<void(const Tensor& upstream, std::vector<Tensor>& grads)>;

/// Reverse-mode record of primitive ops. Nodes are appended in forward order;
/// backward() walks them in exact reverse.
class GradTape {
 public:
  /// Leaf that receives a gradient accumulator.
  Var parameter(Tensor value, std::string name = {});

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Appends an op node. `inputs` are only recorded for inspection.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Parameters in registration order.
  const std::vector<Var>& parameters() const noexcept { return parameters_; }
  const std::string& parameter_name(std::size_t index) const { return names_.at(index); }

 private:
  friend class Gradients;
  friend Gradients backward(const GradTape& tape, Var loss);

  struct Node {
    std::string op;
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Var> parameters_;
  std::vector<std::string> names_;
};

/// Result of a backward pass: one accumulator per registered parameter, each
/// shaped like the parameter.
class Gradients {
 public:
  const Tensor& of(Var parameter) const;
  const Tensor& at(std::size_t parameter_index) const { return per_parameter_.at(parameter_index); }
  std::size_t size() const noexcept { return per_parameter_.size(); }

  /// Node ids in the order the backward sweep visited them.
  const std::vector<std::size_t>& visit_order() const noexcept { return visit_order_; }

 private:
  friend Gradients backward(const GradTape& tape, Var loss);
  std::vector<Var> parameters_;
  std::vector<Tensor> per_parameter_;
  std::vector<std::size_t> visit_order_;
};

/// d loss / d p for every parameter on the tape. Throws ContractError when
/// `loss` is not a single-element tensor.
Gradients backward(const GradTape& tape, Var loss);

}  // namespace cvs
