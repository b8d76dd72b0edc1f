#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "cvs/model.hpp"
#include "cvs/replay.hpp"
#include "cvs/tape.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

/// One labeled input of a mini-batch.
struct LabeledInput {
  std::span<const double> x;
  ClassId label = 0;
};

/// A mini-batch. Rows [0, num_current) are current-session items, the rest
/// are replayed exemplars.
struct BatchView {
  Tensor inputs;
  std::vector<ClassId> labels;
  std::size_t num_current = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_replayed() const noexcept { return labels.size() - num_current; }
  bool is_replayed(std::size_t row) const noexcept { return row >= num_current; }
};

/// Throws ContractError unless the batch holds at least two items of equal width.
BatchView make_batch(std::span<const LabeledInput> current, std::span<const LabeledInput> replayed);

/// Old-class bookkeeping for session j+1: gamma holds every class seen in
/// sessions 1..j, pi = gamma intersected with the classes of session j+1.
struct ClassIndexSets {
  std::set<ClassId> pi;
  std::set<ClassId> gamma;
};

ClassIndexSets make_class_index_sets(const std::set<ClassId>& previous_classes,
                                     const std::set<ClassId>& current_classes);

/// Mining and anchor pools for the neighbor-model coherence term.
struct CoherenceOptions {
  bool negatives_include_replayed = true;
  bool anchors_include_replayed = true;
};

/// Which loss terms participate in sessions >= 2.
struct LossToggles {
  bool use_m = true;
  bool use_d = true;
};

struct LossReport {
  double l_c = 0.0;
  double l_m = 0.0;
  double l_d_inner = 0.0;
  double l_d_outer = 0.0;
  double l_d = 0.0;
  double total = 0.0;
  std::size_t triplets = 0;     // anchors that found a negative
  std::size_t inner_terms = 0;  // current items with class in pi
  std::size_t outer_terms = 0;  // replayed items with class in gamma
};

/// Student forward pass recorded on a tape.
struct StudentPass {
  GradTape tape;
  TapeParameters params;
  Var embeddings;
};

StudentPass forward_student(const ModelState& model, const BatchView& batch);

/// Normalized-softmax cross-entropy over the batch (tape form).
Var intra_discrimination_term(StudentPass& pass, const ModelState& model, const BatchView& batch);

/// Hinge triplet distillation against the teacher (tape form). `triplets`
/// receives the number of anchors that contributed a triplet.
Var neighbor_model_coherence_term(StudentPass& pass, const Tensor& teacher_embeddings,
                                  const BatchView& batch, double margin,
                                  const CoherenceOptions& options, std::size_t* triplets = nullptr);

struct DataCoherenceTerms {
  Var inner;  // sum over current items with class in pi
  Var outer;  // sum over replayed items with class in gamma
  Var total;  // (inner + outer) / n
  std::size_t inner_terms = 0;
  std::size_t outer_terms = 0;
};

/// Squared distances to the replayed-embedding attractors (tape form). The
/// centroids enter as constants.
DataCoherenceTerms inter_data_coherence_terms(StudentPass& pass, const BatchView& batch,
                                              const CentroidStore& centroids,
                                              const ClassIndexSets& sets);

/// Index of the candidate minimizing ||anchor - candidate||^2 among those whose
/// class differs from `anchor_class`; ties go to the lowest index.
std::optional<std::size_t> mine_hardest_negative(std::span<const double> student_anchor,
                                                 const Tensor& candidate_embeddings,
                                                 std::span<const ClassId> candidate_classes,
                                                 ClassId anchor_class);

/// Value-only evaluations of the individual terms.
double loss_intra_discrimination(const ModelState& model, const BatchView& batch);
double loss_neighbor_model_coherence(const ModelState& model, const ModelSnapshot& teacher,
                                     const BatchView& batch, double margin,
                                     const CoherenceOptions& options = {});

struct DataCoherenceValues {
  double inner = 0.0;
  double outer = 0.0;
  double total = 0.0;
};

DataCoherenceValues loss_inter_data_coherence(const ModelState& model, const BatchView& batch,
                                              const CentroidStore& centroids,
                                              const ClassIndexSets& sets);

/// Full objective recorded on a tape, ready for backward().
struct LossEvaluation {
  LossReport report;
  StudentPass pass;
  Var total;

  Gradients gradients() const { return backward(pass.tape, total); }
};

/// Session 1 (or no teacher): l_c only. Later sessions: l_c + alpha l_m +
/// beta l_d, where a term is skipped when its toggle is off or its weight is 0.
/// `centroids` may be null only when the l_d term is skipped.
LossEvaluation total_loss(const ModelState& model, const ModelSnapshot* teacher,
                          const BatchView& batch, const CentroidStore* centroids,
                          const ClassIndexSets& sets, const Hyperparameters& hyper,
                          std::size_t session, const LossToggles& toggles = {},
                          const CoherenceOptions& options = {});

}  // namespace cvs
