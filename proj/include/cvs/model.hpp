#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cvs/tape.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

using ClassId = std::uint32_t;

struct Hyperparameters {
  double alpha = 10.0;        // weight of the neighbor-model coherence term
  double beta = 1.0;          // weight of the inter-session data coherence term
  double margin = 0.1;        // triplet hinge margin
  double temperature = 0.05;  // normalized-softmax temperature
  std::size_t batch_size = 16;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 64;
  double learning_rate = 0.03;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t epochs_per_session = 30;
  std::uint64_t seed = 0;

  /// Throws ContractError unless T > 0, m >= 0, alpha, beta >= 0 and n >= 2.
  void validate() const;
};

/// Network weights. The classifier stores one l2-normalized-before-use weight
/// vector per registered class as a row (row k is w_k).
struct ModelParameters {
  Tensor w1;          // [input x hidden]
  Tensor b1;          // [hidden]
  Tensor w2;          // [hidden x embed]
  Tensor b2;          // [embed]
  Tensor classifier;  // [classes x embed]
};

/// The embedding network (input -> hidden ReLU -> embed -> l2-normalize) and
/// its growable normalized classifier head.
class ModelState {
 public:
  /// Seeded Kaiming-uniform layers, empty classifier head.
  ModelState(std::size_t input_dim, Hyperparameters hyper);

  /// Rebuilds a model from stored parameters (checkpoint loading).
  ModelState(Hyperparameters hyper, ModelParameters params, std::vector<ClassId> registry);

  std::size_t input_dim() const noexcept { return params_.w1.rows(); }
  std::size_t hidden_dim() const noexcept { return params_.w1.cols(); }
  std::size_t embed_dim() const noexcept { return params_.w2.cols(); }
  std::size_t num_classes() const noexcept { return registry_.size(); }

  const Hyperparameters& hyper() const noexcept { return hyper_; }
  const ModelParameters& parameters() const noexcept { return params_; }
  ModelParameters& parameters() noexcept { return params_; }

  const std::vector<ClassId>& class_registry() const noexcept { return registry_; }
  std::optional<std::size_t> class_index(ClassId id) const;

  /// Head row of a registered class; throws ContractError("unregistered_class").
  std::size_t require_class_index(ClassId id) const;

  /// Appends one seeded classifier row per id. Existing rows are not touched.
  /// Throws ContractError on an id that is already registered or repeated.
  void register_classes(std::span<const ClassId> new_ids);

 private:
  Hyperparameters hyper_;
  ModelParameters params_;
  std::vector<ClassId> registry_;
  std::unordered_map<ClassId, std::size_t> index_;
};

/// l2-normalized embedding of one input vector.
Tensor embed(const ModelState& model, std::span<const double> x);

/// Embeds every row of `inputs`, parallel over rows.
Tensor embed_batch(const ModelState& model, const Tensor& inputs);

/// Serial reference for embed_batch; bit-identical output.
Tensor embed_batch_reference(const ModelState& model, const Tensor& inputs);

/// Immutable frozen copy of a model, used as the teacher of the next session.
class ModelSnapshot {
 public:
  ModelSnapshot(const ModelState& model, std::size_t session)
      : state_(std::make_shared<const ModelState>(model)), session_(session) {}

  std::size_t session() const noexcept { return session_; }
  const ModelState& state() const noexcept { return *state_; }

  Tensor embed(std::span<const double> x) const { return cvs::embed(*state_, x); }
  Tensor embed_batch(const Tensor& inputs) const { return cvs::embed_batch(*state_, inputs); }

 private:
  std::shared_ptr<const ModelState> state_;
  std::size_t session_;
};

inline ModelSnapshot snapshot(const ModelState& model, std::size_t session) {
  return ModelSnapshot(model, session);
}

/// Tape handles for the model parameters, registered in the order
/// w1, b1, w2, b2, classifier.
struct TapeParameters {
  Var w1, b1, w2, b2, classifier;
};

TapeParameters bind_parameters(GradTape& tape, const ModelParameters& params);

/// Differentiable l2-normalized embeddings of every row of `inputs`.
Var embed_on_tape(GradTape& tape, const TapeParameters& params, const Tensor& inputs);

/// SGD with momentum: v = mu v + g + wd p; p -= lr v. Velocity buffers grow
/// with the classifier head.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum, double weight_decay = 0.0)
      : lr_(learning_rate), mu_(momentum), wd_(weight_decay) {}

  void step(ModelParameters& params, const Gradients& grads, const TapeParameters& handles);

 private:
  double lr_, mu_, wd_;
  std::vector<Tensor> velocity_;
};

}  // namespace cvs
