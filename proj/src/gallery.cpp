#include "cvs/gallery.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <numeric>
#include <optional>
#include <set>

#include "cvs/errors.hpp"
#include "cvs/kernels.hpp"

namespace cvs {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

template <typename T>
void fnv_mix(std::uint64_t& h, const T& value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  for (unsigned char b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
}

// Ranks gallery rows for one similarity row: descending score, then index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t keep = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
  order.resize(keep);
  return order;
}

// Per query: smallest k for which the class is hit, i.e. 1 + the number of
// records ranked ahead of the best same-class record (SIZE_MAX if absent).
std::size_t first_hit_rank(std::span<const double> scores, std::span<const ClassId> gallery_labels,
                           ClassId label) {
  std::optional<std::size_t> best;
  for (std::size_t g = 0; g < scores.size(); ++g) {
    if (gallery_labels[g] != label) continue;
    if (!best || scores[g] > scores[*best]) best = g;
  }
  if (!best) return std::numeric_limits<std::size_t>::max();
  std::size_t ahead = 0;
  for (std::size_t g = 0; g < scores.size(); ++g) {
    if (scores[g] > scores[*best] || (scores[g] == scores[*best] && g < *best)) ++ahead;
  }
  return ahead + 1;
}

void check_queries(const Tensor& gallery, std::span<const ClassId> gallery_labels, const Tensor& queries,
                   std::span<const ClassId> labels) {
  require(gallery.rows() > 0 && gallery.size() > 0, "empty_gallery", "retrieval against an empty gallery");
  require(gallery.rows() == gallery_labels.size(), "dimension_mismatch", "one label per gallery row is required");
  require(queries.rows() == labels.size(), "dimension_mismatch", "one label per query is required");
  if (queries.cols() != gallery.cols()) {
    throw DimensionError("queries " + queries.shape_string() + " vs gallery " + gallery.shape_string());
  }
}

std::vector<double> hit_fractions(std::span<const std::size_t> hit_rank, std::span<const std::size_t> ks) {
  std::vector<double> out;
  for (std::size_t k : ks) {
    const auto hits = std::ranges::count_if(hit_rank, [k](std::size_t r) { return r <= k; });
    out.push_back(hit_rank.empty() ? 0.0
                                   : static_cast<double>(hits) / static_cast<double>(hit_rank.size()));
  }
  return out;
}

}  // namespace

void GallerySet::append_block(std::size_t session, std::span<const EmbeddingRecord> records) {
  require(blocks_.empty() || session > blocks_.rbegin()->first, "session_order",
          "gallery block " + std::to_string(session) + " appended out of order");
  std::set<ItemId> fresh;
  for (const auto& r : records) {
    require(r.session == session, "session_mismatch",
            "record produced in session " + std::to_string(r.session) + " appended to block " +
                std::to_string(session));
    require(!ids_.contains(r.id) && fresh.insert(r.id).second, "duplicate_item",
            "item " + std::to_string(r.id) + " already in the gallery");
    if (dim_ == 0 && meta_.empty()) dim_ = r.embedding.size();
    if (r.embedding.size() != dim_) {
      throw DimensionError("gallery embedding of size " + std::to_string(r.embedding.size()) +
                           ", expected " + std::to_string(dim_));
    }
  }
  const std::size_t begin = meta_.size();
  for (const auto& r : records) {
    ids_.emplace(r.id, meta_.size());
    meta_.push_back({r.id, r.label, r.session});
    flat_.insert(flat_.end(), r.embedding.begin(), r.embedding.end());
  }
  blocks_[session] = {begin, meta_.size()};
  hashes_[session] = compute_block_hash(session);
}

EmbeddingRecord GallerySet::record(std::size_t index) const {
  const auto e = embedding(index);
  return {meta_[index].id, meta_[index].label, meta_[index].session, {e.begin(), e.end()}};
}

std::span<const double> GallerySet::embedding(std::size_t index) const {
  return std::span<const double>(flat_).subspan(index * dim_, dim_);
}

Tensor GallerySet::embeddings() const { return Tensor({meta_.size(), dim_}, flat_); }

std::vector<ClassId> GallerySet::labels() const {
  std::vector<ClassId> out;
  out.reserve(meta_.size());
  for (const auto& m : meta_) out.push_back(m.label);
  return out;
}

std::size_t GallerySet::block_size(std::size_t session) const {
  auto it = blocks_.find(session);
  return it == blocks_.end() ? 0 : it->second.second - it->second.first;
}

std::uint64_t GallerySet::compute_block_hash(std::size_t session) const {
  auto it = blocks_.find(session);
  require(it != blocks_.end(), "unknown_session", "no gallery block for session " + std::to_string(session));
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = it->second.first; i < it->second.second; ++i) {
    fnv_mix(h, std::uint64_t{meta_[i].id});
    fnv_mix(h, std::uint32_t{meta_[i].label});
    fnv_mix(h, std::uint64_t{meta_[i].session});
    for (double v : embedding(i)) fnv_mix(h, v);
  }
  return h;
}

bool GallerySet::verify() const {
  return std::ranges::all_of(hashes_, [this](const auto& entry) {
    return compute_block_hash(entry.first) == entry.second;
  });
}

void extract_and_append(GallerySet& gallery, const ModelState& model, const Dataset& ds,
                        std::span<const ItemId> session_items, std::size_t session) {
  const Tensor emb = embed_batch(model, ds.stack(session_items));
  std::vector<EmbeddingRecord> records;
  records.reserve(session_items.size());
  for (std::size_t i = 0; i < session_items.size(); ++i) {
    const auto row = emb.row(i);
    records.push_back({session_items[i], ds.item(session_items[i]).label, session, {row.begin(), row.end()}});
  }
  gallery.append_block(session, records);
}

std::vector<std::size_t> retrieve(const GallerySet& gallery, std::span<const double> query,
                                  std::size_t k) {
  require(!gallery.empty(), "empty_gallery", "retrieval against an empty gallery");
  require(k >= 1, "invalid_k", "k must be at least 1");
  if (query.size() != gallery.dim()) {
    throw DimensionError("query of size " + std::to_string(query.size()) + " vs gallery dimension " +
                         std::to_string(gallery.dim()));
  }
  std::vector<double> unit(query.size());
  kernels::normalize_into(query, unit);
  std::vector<double> scores(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g) scores[g] = kernels::dot(unit, gallery.embedding(g));
  return top_k(scores, k);
}

std::vector<double> recall_at_ks(const Tensor& gallery, std::span<const ClassId> gallery_labels,
                                 const Tensor& queries, std::span<const ClassId> labels,
                                 std::span<const std::size_t> ks) {
  check_queries(gallery, gallery_labels, queries, labels);
  const Tensor scores = kernels::similarity_matrix_parallel(kernels::normalize_rows(queries), gallery);
  std::vector<std::size_t> hit_rank(labels.size());
  const auto n = static_cast<std::ptrdiff_t>(labels.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t q = 0; q < n; ++q) {
    const auto i = static_cast<std::size_t>(q);
    hit_rank[i] = first_hit_rank(scores.row(i), gallery_labels, labels[i]);
  }
  return hit_fractions(hit_rank, ks);
}

std::vector<double> recall_at_ks_reference(const Tensor& gallery, std::span<const ClassId> gallery_labels,
                                           const Tensor& queries, std::span<const ClassId> labels,
                                           std::span<const std::size_t> ks) {
  check_queries(gallery, gallery_labels, queries, labels);
  const Tensor scores = kernels::similarity_matrix(kernels::normalize_rows(queries), gallery);
  std::vector<double> out;
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < labels.size(); ++q) {
      const auto top = top_k(scores.row(q), k);
      if (std::ranges::any_of(top, [&](std::size_t g) { return gallery_labels[g] == labels[q]; })) ++hits;
    }
    out.push_back(labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size()));
  }
  return out;
}

std::vector<double> recall_at_ks(const GallerySet& gallery, const Tensor& queries,
                                 std::span<const ClassId> labels, std::span<const std::size_t> ks) {
  require(!gallery.empty(), "empty_gallery", "retrieval against an empty gallery");
  const auto gallery_labels = gallery.labels();
  return recall_at_ks(gallery.embeddings(), gallery_labels, queries, labels, ks);
}

std::vector<double> recall_at_ks_reference(const GallerySet& gallery, const Tensor& queries,
                                           std::span<const ClassId> labels,
                                           std::span<const std::size_t> ks) {
  require(!gallery.empty(), "empty_gallery", "retrieval against an empty gallery");
  const auto gallery_labels = gallery.labels();
  return recall_at_ks_reference(gallery.embeddings(), gallery_labels, queries, labels, ks);
}

double recall_at_k(const GallerySet& gallery, const Tensor& queries, std::span<const ClassId> labels,
                   std::size_t k) {
  require(!labels.empty(), "empty_queries", "recall@k needs at least one query");
  require(k >= 1, "invalid_k", "k must be at least 1");
  const std::size_t ks[] = {k};
  return recall_at_ks(gallery, queries, labels, ks).front();
}

double average_recall(std::span<const double> per_session_recalls) {
  require(!per_session_recalls.empty(), "empty_recalls", "average recall of an empty list");
  double s = 0.0;
  for (double r : per_session_recalls) s += r;
  return s / static_cast<double>(per_session_recalls.size());
}

double classification_accuracy(const ModelState& model, const Tensor& inputs,
                               std::span<const ClassId> labels) {
  require(inputs.rows() == labels.size(), "dimension_mismatch", "one label per input is required");
  require(!labels.empty(), "empty_queries", "accuracy of an empty test set");
  for (ClassId label : labels) model.require_class_index(label);
  const Tensor emb = embed_batch(model, inputs);
  const Tensor weights = kernels::normalize_rows(model.parameters().classifier);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    double best_score = 0.0;
    for (std::size_t k = 0; k < weights.rows(); ++k) {
      const double s = kernels::dot(weights.row(k), emb.row(i));
      if (k == 0 || s > best_score) {
        best = k;
        best_score = s;
      }
    }
    if (model.class_registry()[best] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace cvs
