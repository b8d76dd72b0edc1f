#include "cvs/replay.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "cvs/errors.hpp"
#include "cvs/kernels.hpp"

namespace cvs {

namespace {

Tensor mean_of(std::span<const Tensor> vectors) {
  Tensor mean(vectors.front().shape());
  for (const Tensor& v : vectors) {
    if (v.shape() != mean.shape()) {
      throw DimensionError("embedding shapes differ within a class: " + v.shape_string() + " vs " +
                           mean.shape_string());
    }
    for (std::size_t i = 0; i < v.size(); ++i) mean[i] += v[i];
  }
  for (double& x : mean.data()) x /= static_cast<double>(vectors.size());
  return mean;
}

}  // namespace

std::vector<ClassId> CentroidStore::classes() const {
  std::vector<ClassId> out;
  for (const auto& [label, entry] : entries_) out.push_back(label);
  return out;
}

const Tensor& CentroidStore::centroid(ClassId label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) {
    throw ContractError("missing_centroid", "no replayed embedding for class " + std::to_string(label));
  }
  return it->second.centroid;
}

const std::vector<SessionContribution>& CentroidStore::contributions(ClassId label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) {
    throw ContractError("missing_centroid", "no replayed embedding for class " + std::to_string(label));
  }
  return it->second.contributions;
}

Tensor CentroidStore::aggregate(const Entry& entry) const {
  const auto& contribs = entry.contributions;
  if (divisor_ == CentroidDivisor::latest_session) return contribs.back().mean;
  Tensor sum(contribs.front().mean.shape());
  for (const auto& c : contribs) {
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += c.mean[i];
  }
  const double divisor = divisor_ == CentroidDivisor::all_sessions
                             ? static_cast<double>(last_session_)
                             : static_cast<double>(contribs.size());
  for (double& v : sum.data()) v /= divisor;
  return sum;
}

Tensor CentroidStore::recompute(ClassId label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) {
    throw ContractError("missing_centroid", "no replayed embedding for class " + std::to_string(label));
  }
  return aggregate(it->second);
}

void CentroidStore::update(const std::map<ClassId, std::vector<Tensor>>& session_embeddings,
                           std::size_t session) {
  require(session > last_session_, "session_order",
          "centroid session " + std::to_string(session) + " recorded after session " +
              std::to_string(last_session_));
  for (const auto& [label, vectors] : session_embeddings) {
    require(!vectors.empty(), "empty_class_embeddings",
            "no embeddings supplied for class " + std::to_string(label));
  }
  for (const auto& [label, vectors] : session_embeddings) {
    entries_[label].contributions.push_back({session, mean_of(vectors), vectors.size()});
  }
  last_session_ = session;
  // The all-sessions divisor changes with j, so every centroid is refreshed.
  for (auto& [label, entry] : entries_) entry.centroid = aggregate(entry);
}

void CentroidStore::restore(ClassId label, std::vector<SessionContribution> contributions) {
  require(!contributions.empty(), "empty_class_embeddings",
          "class " + std::to_string(label) + " restored without contributions");
  Entry& entry = entries_[label];
  entry.contributions = std::move(contributions);
  last_session_ = std::max(last_session_, entry.contributions.back().session);
  entry.centroid = aggregate(entry);
}

void CentroidStore::set_last_session(std::size_t session) {
  last_session_ = session;
  for (auto& [label, entry] : entries_) entry.centroid = aggregate(entry);
}

std::size_t ReplayBuffer::count(ClassId label) const {
  return static_cast<std::size_t>(
      std::ranges::count_if(entries_, [label](const Exemplar& e) { return e.label == label; }));
}

std::vector<ClassId> ReplayBuffer::classes() const {
  std::set<ClassId> labels;
  for (const auto& e : entries_) labels.insert(e.label);
  return {labels.begin(), labels.end()};
}

void ReplayBuffer::assign(std::vector<Exemplar> entries) {
  require(entries.size() <= budget_, "replay_over_budget",
          std::to_string(entries.size()) + " exemplars exceed budget " + std::to_string(budget_));
  entries_ = std::move(entries);
}

std::vector<Exemplar> mine_exemplars(const ModelState& model, std::span<const Item> items,
                                     std::size_t per_class_quota, Rng& rng,
                                     std::size_t origin_session, std::size_t candidate_factor) {
  std::map<ClassId, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < items.size(); ++i) by_class[items[i].label].push_back(i);

  std::vector<Exemplar> out;
  if (per_class_quota == 0) return out;
  for (const auto& [label, members] : by_class) {
    Tensor inputs({members.size(), model.input_dim()});
    for (std::size_t k = 0; k < members.size(); ++k) {
      std::ranges::copy(items[members[k]].features, inputs.row(k).begin());
    }
    const Tensor emb = embed_batch(model, inputs);
    std::vector<double> mean(emb.cols(), 0.0);
    for (std::size_t k = 0; k < emb.rows(); ++k) {
      auto row = emb.row(k);
      for (std::size_t c = 0; c < row.size(); ++c) mean[c] += row[c];
    }
    for (double& v : mean) v /= static_cast<double>(emb.rows());

    std::vector<double> dist(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) dist[k] = kernels::squared_distance(emb.row(k), mean);
    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), 0);
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

    // order[r] is the member at rank r. Draw the quota from the nearest pool.
    std::vector<std::size_t> ranks;
    if (per_class_quota >= members.size()) {
      ranks.resize(members.size());
      std::iota(ranks.begin(), ranks.end(), 0);
    } else {
      const std::size_t pool = std::min(candidate_factor * per_class_quota, members.size());
      std::vector<std::size_t> candidates(pool);
      std::iota(candidates.begin(), candidates.end(), 0);
      for (std::size_t k = 0; k < per_class_quota; ++k) {
        const std::size_t j = k + static_cast<std::size_t>(rng.index(pool - k));
        std::swap(candidates[k], candidates[j]);
      }
      ranks.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(per_class_quota));
      std::ranges::sort(ranks);
    }
    for (std::size_t r : ranks) {
      const Item& it = items[members[order[r]]];
      out.push_back({it.id, it.label, it.features, origin_session, r});
    }
  }
  return out;
}

void rebalance(ReplayBuffer& buffer, std::vector<Exemplar> new_exemplars,
               std::size_t classes_known) {
  const std::size_t quota = classes_known == 0 ? 0 : buffer.budget() / classes_known;

  std::map<ClassId, std::vector<Exemplar>> kept;
  for (const Exemplar& e : buffer.entries()) kept[e.label].push_back(e);
  std::map<ClassId, std::vector<Exemplar>> incoming;
  for (Exemplar& e : new_exemplars) incoming[e.label].push_back(std::move(e));

  std::set<ClassId> labels;
  for (const auto& [label, v] : kept) labels.insert(label);
  for (const auto& [label, v] : incoming) labels.insert(label);
  require(labels.size() <= classes_known || quota == 0, "replay_over_budget",
          "buffer holds " + std::to_string(labels.size()) + " classes but only " +
              std::to_string(classes_known) + " are known");

  auto by_rank = [](const Exemplar& a, const Exemplar& b) { return a.rank < b.rank; };
  std::vector<Exemplar> result;
  for (ClassId label : labels) {
    auto& mine = kept[label];
    std::ranges::stable_sort(mine, by_rank);
    if (mine.size() > quota) mine.resize(quota);
    auto& fresh = incoming[label];
    std::ranges::stable_sort(fresh, by_rank);
    for (auto& e : fresh) {
      if (mine.size() >= quota) break;
      mine.push_back(std::move(e));
    }
    for (auto& e : mine) result.push_back(std::move(e));
  }
  buffer.assign(std::move(result));
}

}  // namespace cvs
