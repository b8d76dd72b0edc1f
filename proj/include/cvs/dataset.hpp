#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "cvs/model.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

using ItemId = std::uint64_t;

enum class Split : std::uint8_t { train = 0, test = 1 };

struct Item {
  ItemId id = 0;
  ClassId label = 0;
  std::vector<double> features;
  Split split = Split::train;
};

/// Feature-vector dataset. Items of a class keep their insertion order, which
/// the session splits treat as arrival order.
class Dataset {
 public:
  Dataset() = default;

  /// Throws ContractError on duplicate ids or ragged feature widths.
  Dataset(std::vector<Item> items, std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return items_.size(); }
  const std::vector<Item>& items() const noexcept { return items_; }

  const Item& item(ItemId id) const;
  bool contains(ItemId id) const { return index_.contains(id); }

  /// Sorted distinct class ids.
  const std::vector<ClassId>& classes() const noexcept { return classes_; }
  std::size_t num_classes() const noexcept { return classes_.size(); }

  /// Ids of one split, grouped per class in insertion order.
  std::vector<ItemId> ids_of(ClassId label, Split split) const;
  std::vector<ItemId> ids_of(Split split) const;

  /// Throws ContractError unless every class has a train and a test item.
  void validate_splits() const;

  /// Stacks the feature vectors of `ids` into an [n x dim] matrix.
  Tensor stack(std::span<const ItemId> ids) const;

 private:
  std::vector<Item> items_;
  std::size_t dim_ = 0;
  std::unordered_map<ItemId, std::size_t> index_;
  std::vector<ClassId> classes_;
};

struct SyntheticSpec {
  std::size_t num_classes = 20;
  std::size_t dim = 32;
  std::size_t per_class = 100;
  double spread = 0.3;
  double drift = 0.0;
  std::uint64_t seed = 0;
};

/// Gaussian cluster per class. Class means lie on the unit sphere; with drift
/// > 0 each class mean moves linearly along a seeded unit direction, reaching
/// `drift` at the last item of the class, so later-arriving items are shifted.
/// Every fifth item of a class is a test item (80/20 split). Features are
/// rounded to float precision so the binary file format round-trips exactly.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Binary dataset file: header (magic "CVSD", u32 version, u64 items, u32 dim,
/// u32 classes) followed by records (u64 id, u32 class, f32[dim]) and a split
/// tag byte per item. All integers and floats little-endian.
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// CSV rows "id,class,f0,...,fD"; an optional header line is skipped. Every
/// fifth item of a class (in file order) is tagged test.
Dataset read_dataset_csv(const std::filesystem::path& path);
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);

}  // namespace cvs
