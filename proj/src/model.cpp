#include "cvs/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "cvs/errors.hpp"
#include "cvs/kernels.hpp"
#include "cvs/ops.hpp"
#include "cvs/rng.hpp"

namespace cvs {

namespace {

constexpr std::uint64_t kLayerStream = 0x1a7e5ULL;
constexpr std::uint64_t kClassStream = 0xc1a55ULL;

Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor w({fan_in, fan_out});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

// One row of the forward pass; shared by the serial and parallel embedders so
// both follow the tape's arithmetic exactly.
void embed_row(const ModelParameters& p, const Tensor& inputs, Tensor& hidden, Tensor& pre,
               Tensor& out, std::size_t r) {
  kernels::matmul_rows(inputs, p.w1, hidden, r, r + 1);
  auto h = hidden.row(r);
  for (std::size_t c = 0; c < h.size(); ++c) h[c] += p.b1[c];
  for (double& v : h) v = v > 0.0 ? v : 0.0;
  kernels::matmul_rows(hidden, p.w2, pre, r, r + 1);
  auto e = pre.row(r);
  for (std::size_t c = 0; c < e.size(); ++c) e[c] += p.b2[c];
  kernels::normalize_into(e, out.row(r));
}

void check_inputs(const ModelState& model, const Tensor& inputs) {
  if (inputs.rank() != 2 || inputs.cols() != model.input_dim()) {
    throw DimensionError("model expects inputs [n x " + std::to_string(model.input_dim()) +
                         "], got " + inputs.shape_string());
  }
}

}  // namespace

void Hyperparameters::validate() const {
  require(temperature > 0.0, "invalid_hyperparameter", "temperature must be positive");
  require(margin >= 0.0, "invalid_hyperparameter", "margin must be non-negative");
  require(alpha >= 0.0 && beta >= 0.0, "invalid_hyperparameter",
          "loss weights alpha and beta must be non-negative");
  require(batch_size >= 2, "invalid_hyperparameter", "batch size must be at least 2");
  require(embed_dim >= 1 && hidden_dim >= 1, "invalid_hyperparameter",
          "layer widths must be positive");
}

ModelState::ModelState(std::size_t input_dim, Hyperparameters hyper) : hyper_(hyper) {
  hyper_.validate();
  require(input_dim >= 1, "invalid_hyperparameter", "input dimension must be positive");
  Rng rng(derive_seed(hyper_.seed, kLayerStream));
  params_.w1 = kaiming_uniform(input_dim, hyper_.hidden_dim, rng);
  params_.b1 = Tensor({hyper_.hidden_dim});
  params_.w2 = kaiming_uniform(hyper_.hidden_dim, hyper_.embed_dim, rng);
  params_.b2 = Tensor({hyper_.embed_dim});
  params_.classifier = Tensor({0, hyper_.embed_dim});
}

ModelState::ModelState(Hyperparameters hyper, ModelParameters params,
                       std::vector<ClassId> registry)
    : hyper_(hyper), params_(std::move(params)), registry_(std::move(registry)) {
  const auto& p = params_;
  if (p.w1.rank() != 2 || p.w2.rank() != 2 || p.classifier.rank() != 2 ||
      p.b1.size() != p.w1.cols() || p.w2.rows() != p.w1.cols() || p.b2.size() != p.w2.cols() ||
      p.classifier.cols() != p.w2.cols() || p.classifier.rows() != registry_.size()) {
    throw DimensionError("inconsistent model parameter shapes");
  }
  for (std::size_t i = 0; i < registry_.size(); ++i) {
    if (!index_.emplace(registry_[i], i).second) {
      throw ContractError("duplicate_class", "class " + std::to_string(registry_[i]) +
                                                 " appears twice in the registry");
    }
  }
}

std::optional<std::size_t> ModelState::class_index(ClassId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ModelState::require_class_index(ClassId id) const {
  auto idx = class_index(id);
  if (!idx) {
    throw ContractError("unregistered_class",
                        "class " + std::to_string(id) + " is not registered in the head");
  }
  return *idx;
}

void ModelState::register_classes(std::span<const ClassId> new_ids) {
  std::unordered_set<ClassId> seen;
  for (ClassId id : new_ids) {
    if (index_.contains(id) || !seen.insert(id).second) {
      throw ContractError("duplicate_class", "class " + std::to_string(id) + " already registered");
    }
  }
  if (new_ids.empty()) return;

  const std::size_t dim = embed_dim();
  const std::size_t old_rows = registry_.size();
  std::vector<double> data = params_.classifier.values();
  data.resize((old_rows + new_ids.size()) * dim);
  for (std::size_t k = 0; k < new_ids.size(); ++k) {
    Rng rng(derive_seed(hyper_.seed, kClassStream ^ (std::uint64_t{new_ids[k]} << 20)));
    std::span<double> row(data.data() + (old_rows + k) * dim, dim);
    for (double& v : row) v = rng.uniform(-0.05, 0.05);
    kernels::normalize_into(row, row);
    index_.emplace(new_ids[k], registry_.size());
    registry_.push_back(new_ids[k]);
  }
  params_.classifier = Tensor({registry_.size(), dim}, std::move(data));
}

Tensor embed(const ModelState& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw DimensionError("embed expects " + std::to_string(model.input_dim()) +
                         " features, got " + std::to_string(x.size()));
  }
  Tensor row({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  Tensor out = embed_batch_reference(model, row);
  return Tensor({model.embed_dim()}, out.values());
}

Tensor embed_batch_reference(const ModelState& model, const Tensor& inputs) {
  check_inputs(model, inputs);
  const std::size_t n = inputs.rows();
  Tensor hidden({n, model.hidden_dim()});
  Tensor pre({n, model.embed_dim()});
  Tensor out({n, model.embed_dim()});
  for (std::size_t r = 0; r < n; ++r) embed_row(model.parameters(), inputs, hidden, pre, out, r);
  return out;
}

Tensor embed_batch(const ModelState& model, const Tensor& inputs) {
  check_inputs(model, inputs);
  const std::size_t n = inputs.rows();
  Tensor hidden({n, model.hidden_dim()});
  Tensor pre({n, model.embed_dim()});
  Tensor out({n, model.embed_dim()});
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    embed_row(model.parameters(), inputs, hidden, pre, out, static_cast<std::size_t>(r));
  }
  return out;
}

TapeParameters bind_parameters(GradTape& tape, const ModelParameters& params) {
  TapeParameters h;
  h.w1 = tape.parameter(params.w1, "w1");
  h.b1 = tape.parameter(params.b1, "b1");
  h.w2 = tape.parameter(params.w2, "w2");
  h.b2 = tape.parameter(params.b2, "b2");
  h.classifier = tape.parameter(params.classifier, "classifier");
  return h;
}

Var embed_on_tape(GradTape& tape, const TapeParameters& params, const Tensor& inputs) {
  Var x = tape.constant(inputs);
  Var hidden = ops::relu(tape, ops::add_row_bias(tape, ops::matmul(tape, x, params.w1), params.b1));
  Var pre = ops::add_row_bias(tape, ops::matmul(tape, hidden, params.w2), params.b2);
  return ops::l2_normalize(tape, pre);
}

void SgdMomentum::step(ModelParameters& params, const Gradients& grads,
                       const TapeParameters& handles) {
  Tensor* targets[] = {&params.w1, &params.b1, &params.w2, &params.b2, &params.classifier};
  const Var vars[] = {handles.w1, handles.b1, handles.w2, handles.b2, handles.classifier};
  velocity_.resize(std::size(targets));
  for (std::size_t k = 0; k < std::size(targets); ++k) {
    Tensor& p = *targets[k];
    const Tensor& g = grads.of(vars[k]);
    if (g.shape() != p.shape()) {
      throw DimensionError("gradient shape " + g.shape_string() + " for parameter " +
                           p.shape_string());
    }
    Tensor& v = velocity_[k];
    if (v.shape() != p.shape()) {
      // Head growth: keep the velocity of existing rows, zero for new ones.
      Tensor grown(p.shape());
      const std::size_t keep = std::min(v.size(), grown.size());
      std::copy_n(v.data().begin(), keep, grown.data().begin());
      v = std::move(grown);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu_ * v[i] + g[i] + wd_ * p[i];
      p[i] -= lr_ * v[i];
    }
  }
}

}  // namespace cvs
