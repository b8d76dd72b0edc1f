#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "cvs/dataset.hpp"
#include "cvs/model.hpp"
#include "cvs/rng.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

/// How a class centroid aggregates its per-session means.
enum class CentroidDivisor {
  contributing_sessions,  // mean over the sessions in which the class appeared
  all_sessions,           // sum of per-session means divided by the session count j
  latest_session,         // only the most recent per-session mean (no aggregation)
};

struct SessionContribution {
  std::size_t session = 0;
  Tensor mean;
  std::size_t count = 0;
};

/// Replayed embeddings: one attractor per seen class, aggregated from the
/// frozen gallery embeddings of every session the class appeared in.
class CentroidStore {
 public:
  explicit CentroidStore(CentroidDivisor divisor = CentroidDivisor::contributing_sessions)
      : divisor_(divisor) {}

  CentroidDivisor divisor() const noexcept { return divisor_; }

  bool contains(ClassId label) const { return entries_.contains(label); }
  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<ClassId> classes() const;

  /// Throws ContractError("missing_centroid") for an unknown class.
  const Tensor& centroid(ClassId label) const;
  const std::vector<SessionContribution>& contributions(ClassId label) const;

  /// Highest session index recorded so far (0 when empty).
  std::size_t last_session() const noexcept { return last_session_; }

  /// Recomputes a centroid from its stored per-session means.
  Tensor recompute(ClassId label) const;

  /// Records the per-session means of `session` and refreshes the centroids.
  /// Sessions must be recorded in increasing order.
  void update(const std::map<ClassId, std::vector<Tensor>>& session_embeddings,
              std::size_t session);

  /// Restores a store from serialized contributions.
  void restore(ClassId label, std::vector<SessionContribution> contributions);
  void set_last_session(std::size_t session);

 private:
  struct Entry {
    Tensor centroid;
    std::vector<SessionContribution> contributions;
  };

  Tensor aggregate(const Entry& entry) const;

  CentroidDivisor divisor_;
  std::map<ClassId, Entry> entries_;
  std::size_t last_session_ = 0;
};

/// Records session `session` into the store (see CentroidStore::update).
inline void update_centroids(CentroidStore& store,
                             const std::map<ClassId, std::vector<Tensor>>& session_embeddings,
                             std::size_t session) {
  store.update(session_embeddings, session);
}

/// One stored raw sample. `rank` is its position in the distance-to-class-mean
/// ordering at mining time (0 = nearest).
struct Exemplar {
  ItemId id = 0;
  ClassId label = 0;
  std::vector<double> features;
  std::size_t origin_session = 0;
  std::size_t rank = 0;
};

/// Budgeted store of replayed raw samples shared by all sessions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t budget = 0) : budget_(budget) {}

  std::size_t budget() const noexcept { return budget_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Exemplar>& entries() const noexcept { return entries_; }

  std::size_t count(ClassId label) const;
  std::vector<ClassId> classes() const;

  /// Replaces the contents; throws ContractError if over budget.
  void assign(std::vector<Exemplar> entries);

 private:
  std::size_t budget_;
  std::vector<Exemplar> entries_;
};

/// Per class: rank items by squared distance of their embedding to the class
/// mean embedding, then draw `per_class_quota` of them uniformly from the
/// min(candidate_factor * quota, class size) nearest. Classes are visited in
/// ascending id order; results are sorted by rank within each class.
std::vector<Exemplar> mine_exemplars(const ModelState& model, std::span<const Item> items,
                                     std::size_t per_class_quota, Rng& rng,
                                     std::size_t origin_session = 0,
                                     std::size_t candidate_factor = 2);

/// Applies the per-class quota floor(budget / classes_known): stored classes
/// are trimmed to their lowest ranks, then every class is topped up from
/// `new_exemplars` in rank order. Never exceeds the budget.
void rebalance(ReplayBuffer& buffer, std::vector<Exemplar> new_exemplars,
               std::size_t classes_known);

}  // namespace cvs
