#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "cvs/dataset.hpp"
#include "cvs/model.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

struct EmbeddingRecord {
  ItemId id = 0;
  ClassId label = 0;
  std::size_t session = 0;
  std::vector<double> embedding;
};

/// Append-only store of frozen gallery embeddings, grouped in one block per
/// session. A block's content hash is taken when it is appended; verify()
/// recomputes every hash from the stored bytes.
class GallerySet {
 public:
  std::size_t size() const noexcept { return meta_.size(); }
  bool empty() const noexcept { return meta_.empty(); }
  std::size_t dim() const noexcept { return dim_; }

  /// Appends the block of `session`. Sessions must increase; record sessions
  /// must equal `session`; item ids must be new. Throws ContractError.
  void append_block(std::size_t session, std::span<const EmbeddingRecord> records);

  EmbeddingRecord record(std::size_t index) const;
  ItemId id(std::size_t index) const { return meta_[index].id; }
  ClassId label(std::size_t index) const { return meta_[index].label; }
  std::size_t session(std::size_t index) const { return meta_[index].session; }
  std::span<const double> embedding(std::size_t index) const;

  /// Contiguous [size x dim] view of every embedding.
  Tensor embeddings() const;
  std::vector<ClassId> labels() const;

  /// Hash of each session block as recorded at append time.
  const std::map<std::size_t, std::uint64_t>& block_hashes() const noexcept { return hashes_; }

  /// FNV-1a over the current bytes of one session block.
  std::uint64_t compute_block_hash(std::size_t session) const;

  /// True iff every block still hashes to its append-time value.
  bool verify() const;

  /// Number of records in one session block.
  std::size_t block_size(std::size_t session) const;

 private:
  struct Meta {
    ItemId id;
    ClassId label;
    std::size_t session;
  };
  std::vector<Meta> meta_;
  std::vector<double> flat_;
  std::size_t dim_ = 0;
  std::map<std::size_t, std::uint64_t> hashes_;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> blocks_;  // session -> [begin, end)
  std::map<ItemId, std::size_t> ids_;
};

/// Embeds the session's items with `model` and appends them as block `session`.
void extract_and_append(GallerySet& gallery, const ModelState& model, const Dataset& ds,
                        std::span<const ItemId> session_items, std::size_t session);

/// Top-k record indices by descending cosine similarity; ties by insertion
/// order. k >= |gallery| yields the full ranking. Throws on an empty gallery.
std::vector<std::size_t> retrieve(const GallerySet& gallery, std::span<const double> query,
                                  std::size_t k);

/// Fraction of queries whose top-k holds a record of the query class, for
/// each k in `ks`. Parallel over queries.
std::vector<double> recall_at_ks(const GallerySet& gallery, const Tensor& queries,
                                 std::span<const ClassId> labels, std::span<const std::size_t> ks);

/// Serial reference for recall_at_ks.
std::vector<double> recall_at_ks_reference(const GallerySet& gallery, const Tensor& queries,
                                           std::span<const ClassId> labels,
                                           std::span<const std::size_t> ks);

/// Dense-gallery forms, used for validation against a not-yet-frozen block.
std::vector<double> recall_at_ks(const Tensor& gallery, std::span<const ClassId> gallery_labels,
                                 const Tensor& queries, std::span<const ClassId> labels,
                                 std::span<const std::size_t> ks);
std::vector<double> recall_at_ks_reference(const Tensor& gallery, std::span<const ClassId> gallery_labels,
                                           const Tensor& queries, std::span<const ClassId> labels,
                                           std::span<const std::size_t> ks);

double recall_at_k(const GallerySet& gallery, const Tensor& queries, std::span<const ClassId> labels,
                   std::size_t k);

/// Arithmetic mean of per-session recalls. Throws on an empty list.
double average_recall(std::span<const double> per_session_recalls);

/// Fraction of inputs whose arg-max normalized-classifier score is the true
/// class (ties to the lowest head row).
double classification_accuracy(const ModelState& model, const Tensor& inputs,
                               std::span<const ClassId> labels);

}  // namespace cvs
