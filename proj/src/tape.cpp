#include "cvs/tape.hpp"

#include "cvs/errors.hpp"

namespace cvs {

Var GradTape::parameter(Tensor value, std::string name) {
  Var v{nodes_.size()};
  nodes_.push_back({"parameter", std::move(value), {}, nullptr});
  parameters_.push_back(v);
  names_.push_back(name.empty() ? "p" + std::to_string(parameters_.size() - 1) : std::move(name));
  return v;
}

Var GradTape::constant(Tensor value) {
  Var v{nodes_.size()};
  nodes_.push_back({"constant", std::move(value), {}, nullptr});
  return v;
}

Var GradTape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Var v{nodes_.size()};
  nodes_.push_back({std::move(op), std::move(value), std::move(inputs), std::move(backward)});
  return v;
}

const Tensor& Gradients::of(Var parameter) const {
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    if (parameters_[i].id == parameter.id) return per_parameter_[i];
  }
  throw ContractError("not_a_parameter", "variable " + std::to_string(parameter.id) +
                                             " is not a registered parameter");
}

Gradients backward(const GradTape& tape, Var loss) {
  if (!loss.valid() || loss.id >= tape.nodes_.size()) {
    throw ContractError("invalid_loss", "loss variable is not on this tape");
  }
  if (tape.nodes_[loss.id].value.size() != 1) {
    throw ContractError("loss_not_scalar", "backward requires a scalar loss, got shape " +
                                               tape.nodes_[loss.id].value.shape_string());
  }

  std::vector<Tensor> grads(tape.nodes_.size());
  for (std::size_t i = 0; i <= loss.id; ++i) grads[i] = Tensor::zeros_like(tape.nodes_[i].value);
  grads[loss.id][0] = 1.0;

  Gradients out;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const auto& node = tape.nodes_[i];
    out.visit_order_.push_back(i);
    if (node.backward) node.backward(grads[i], grads);
  }

  out.parameters_ = tape.parameters_;
  for (Var p : tape.parameters_) {
    out.per_parameter_.push_back(p.id <= loss.id ? std::move(grads[p.id])
                                                 : Tensor::zeros_like(tape.nodes_[p.id].value));
  }
  return out;
}

}  // namespace cvs
