#include "cvs/losses.hpp"

#include <algorithm>

#include "cvs/errors.hpp"
#include "cvs/kernels.hpp"
#include "cvs/ops.hpp"

namespace cvs {

BatchView make_batch(std::span<const LabeledInput> current, std::span<const LabeledInput> replayed) {
  const std::size_t n = current.size() + replayed.size();
  require(n >= 2, "batch_too_small", "a mini-batch needs at least two items");
  const std::size_t dim = current.empty() ? replayed.front().x.size() : current.front().x.size();
  BatchView batch;
  batch.inputs = Tensor({n, dim});
  batch.num_current = current.size();
  std::size_t row = 0;
  for (auto group : {current, replayed}) {
    for (const LabeledInput& item : group) {
      if (item.x.size() != dim) {
        throw DimensionError("batch item has " + std::to_string(item.x.size()) +
                             " features, expected " + std::to_string(dim));
      }
      std::ranges::copy(item.x, batch.inputs.row(row++).begin());
      batch.labels.push_back(item.label);
    }
  }
  return batch;
}

ClassIndexSets make_class_index_sets(const std::set<ClassId>& previous_classes,
                                     const std::set<ClassId>& current_classes) {
  ClassIndexSets sets;
  sets.gamma = previous_classes;
  std::ranges::set_intersection(previous_classes, current_classes,
                                std::inserter(sets.pi, sets.pi.begin()));
  return sets;
}

StudentPass forward_student(const ModelState& model, const BatchView& batch) {
  StudentPass pass;
  pass.params = bind_parameters(pass.tape, model.parameters());
  pass.embeddings = embed_on_tape(pass.tape, pass.params, batch.inputs);
  return pass;
}

Var intra_discrimination_term(StudentPass& pass, const ModelState& model, const BatchView& batch) {
  require(model.num_classes() > 0, "unregistered_class", "classifier head has no classes");
  std::vector<std::size_t> targets;
  targets.reserve(batch.size());
  for (ClassId label : batch.labels) targets.push_back(model.require_class_index(label));
  const double temperature = model.hyper().temperature;
  require(temperature > 0.0, "invalid_hyperparameter", "temperature must be positive");

  GradTape& t = pass.tape;
  Var weights = ops::l2_normalize(t, pass.params.classifier);
  Var logits = ops::matmul(t, pass.embeddings, ops::transpose(t, weights));
  return ops::softmax_cross_entropy(t, ops::scale(t, logits, 1.0 / temperature), std::move(targets));
}

std::optional<std::size_t> mine_hardest_negative(std::span<const double> student_anchor,
                                                 const Tensor& candidate_embeddings,
                                                 std::span<const ClassId> candidate_classes,
                                                 ClassId anchor_class) {
  std::optional<std::size_t> best;
  double best_distance = 0.0;
  for (std::size_t k = 0; k < candidate_classes.size(); ++k) {
    if (candidate_classes[k] == anchor_class) continue;
    const double d = kernels::squared_distance(student_anchor, candidate_embeddings.row(k));
    if (!best || d < best_distance) {
      best = k;
      best_distance = d;
    }
  }
  return best;
}

Var neighbor_model_coherence_term(StudentPass& pass, const Tensor& teacher_embeddings,
                                  const BatchView& batch, double margin,
                                  const CoherenceOptions& options, std::size_t* triplets) {
  GradTape& t = pass.tape;
  const Tensor& student = t.value(pass.embeddings);
  if (teacher_embeddings.shape() != student.shape()) {
    throw DimensionError("teacher embeddings " + teacher_embeddings.shape_string() +
                         " vs student " + student.shape_string());
  }
  const std::size_t pool = options.negatives_include_replayed ? batch.size() : batch.num_current;
  const std::span<const ClassId> pool_classes(batch.labels.data(), pool);
  const std::size_t anchor_count = options.anchors_include_replayed ? batch.size() : batch.num_current;

  std::vector<std::size_t> anchors, negatives;
  for (std::size_t a = 0; a < anchor_count; ++a) {
    auto n = mine_hardest_negative(student.row(a), teacher_embeddings, pool_classes, batch.labels[a]);
    if (!n) continue;
    anchors.push_back(a);
    negatives.push_back(*n);
  }
  if (triplets) *triplets = anchors.size();
  if (anchors.empty()) return t.constant(Tensor::scalar(0.0));

  Tensor positive_rows({anchors.size(), student.cols()});
  Tensor negative_rows({anchors.size(), student.cols()});
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    std::ranges::copy(teacher_embeddings.row(anchors[k]), positive_rows.row(k).begin());
    std::ranges::copy(teacher_embeddings.row(negatives[k]), negative_rows.row(k).begin());
  }
  Var anchor_rows = ops::gather_rows(t, pass.embeddings, anchors);
  Var d_pos = ops::row_squared_distances(t, anchor_rows, t.constant(std::move(positive_rows)));
  Var d_neg = ops::row_squared_distances(t, anchor_rows, t.constant(std::move(negative_rows)));
  Var hinge = ops::relu(t, ops::add_scalar(t, ops::sub(t, d_pos, d_neg), margin));
  return ops::scale(t, ops::sum(t, hinge), 1.0 / static_cast<double>(batch.size()));
}

DataCoherenceTerms inter_data_coherence_terms(StudentPass& pass, const BatchView& batch,
                                              const CentroidStore& centroids,
                                              const ClassIndexSets& sets) {
  GradTape& t = pass.tape;
  const std::size_t dim = t.value(pass.embeddings).cols();

  auto squared_sum = [&](bool replayed, const std::set<ClassId>& members, std::size_t& terms) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < batch.size(); ++r) {
      if (batch.is_replayed(r) == replayed && members.contains(batch.labels[r])) rows.push_back(r);
    }
    terms = rows.size();
    if (rows.empty()) return t.constant(Tensor::scalar(0.0));
    Tensor targets({rows.size(), dim});
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const Tensor& c = centroids.centroid(batch.labels[rows[k]]);
      if (c.size() != dim) {
        throw DimensionError("centroid of class " + std::to_string(batch.labels[rows[k]]) +
                             " has shape " + c.shape_string());
      }
      std::ranges::copy(c.data(), targets.row(k).begin());
    }
    Var selected = ops::gather_rows(t, pass.embeddings, std::move(rows));
    return ops::sum(t, ops::row_squared_distances(t, selected, t.constant(std::move(targets))));
  };

  DataCoherenceTerms out;
  out.inner = squared_sum(false, sets.pi, out.inner_terms);
  out.outer = squared_sum(true, sets.gamma, out.outer_terms);
  out.total = ops::scale(t, ops::add(t, out.inner, out.outer), 1.0 / static_cast<double>(batch.size()));
  return out;
}

double loss_intra_discrimination(const ModelState& model, const BatchView& batch) {
  StudentPass pass = forward_student(model, batch);
  return pass.tape.value(intra_discrimination_term(pass, model, batch)).item();
}

double loss_neighbor_model_coherence(const ModelState& model, const ModelSnapshot& teacher,
                                     const BatchView& batch, double margin,
                                     const CoherenceOptions& options) {
  StudentPass pass = forward_student(model, batch);
  const Tensor teacher_embeddings = teacher.embed_batch(batch.inputs);
  return pass.tape.value(neighbor_model_coherence_term(pass, teacher_embeddings, batch, margin, options))
      .item();
}

DataCoherenceValues loss_inter_data_coherence(const ModelState& model, const BatchView& batch,
                                              const CentroidStore& centroids,
                                              const ClassIndexSets& sets) {
  StudentPass pass = forward_student(model, batch);
  const auto terms = inter_data_coherence_terms(pass, batch, centroids, sets);
  return {pass.tape.value(terms.inner).item(), pass.tape.value(terms.outer).item(),
          pass.tape.value(terms.total).item()};
}

LossEvaluation total_loss(const ModelState& model, const ModelSnapshot* teacher,
                          const BatchView& batch, const CentroidStore* centroids,
                          const ClassIndexSets& sets, const Hyperparameters& hyper,
                          std::size_t session, const LossToggles& toggles,
                          const CoherenceOptions& options) {
  hyper.validate();
  LossEvaluation eval{{}, forward_student(model, batch), {}};
  GradTape& t = eval.pass.tape;
  LossReport& report = eval.report;

  Var l_c = intra_discrimination_term(eval.pass, model, batch);
  report.l_c = t.value(l_c).item();
  eval.total = l_c;

  const bool later_session = session >= 2 && teacher != nullptr;
  if (later_session && toggles.use_m && hyper.alpha > 0.0) {
    const Tensor teacher_embeddings = teacher->embed_batch(batch.inputs);
    Var l_m = neighbor_model_coherence_term(eval.pass, teacher_embeddings, batch, hyper.margin,
                                            options, &report.triplets);
    report.l_m = t.value(l_m).item();
    eval.total = ops::add(t, eval.total, ops::scale(t, l_m, hyper.alpha));
  }
  if (later_session && toggles.use_d && hyper.beta > 0.0) {
    require(centroids != nullptr, "missing_centroid", "data coherence term needs a centroid store");
    const auto terms = inter_data_coherence_terms(eval.pass, batch, *centroids, sets);
    report.l_d_inner = t.value(terms.inner).item();
    report.l_d_outer = t.value(terms.outer).item();
    report.l_d = t.value(terms.total).item();
    report.inner_terms = terms.inner_terms;
    report.outer_terms = terms.outer_terms;
    eval.total = ops::add(t, eval.total, ops::scale(t, terms.total, hyper.beta));
  }
  report.total = t.value(eval.total).item();
  return eval;
}

}  // namespace cvs
