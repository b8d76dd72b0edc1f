#include "cvs/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "cvs/errors.hpp"
#include "cvs/kernels.hpp"
#include "cvs/rng.hpp"

namespace cvs {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'S', 'D'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw FormatError(std::string("truncated dataset file while reading ") + what);
  }
  return value;
}

// Every fifth item of a class goes to test; tiny classes still get one.
std::vector<Split> class_split_tags(std::size_t count) {
  std::vector<Split> tags(count, Split::train);
  bool any_test = false;
  for (std::size_t k = 0; k < count; ++k) {
    if (k % 5 == 4) {
      tags[k] = Split::test;
      any_test = true;
    }
  }
  if (!any_test && count >= 2) tags.back() = Split::test;
  return tags;
}

}  // namespace

Dataset::Dataset(std::vector<Item> items, std::size_t dim) : items_(std::move(items)), dim_(dim) {
  std::vector<ClassId> labels;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Item& it = items_[i];
    if (it.features.size() != dim_) {
      throw DimensionError("item " + std::to_string(it.id) + " has " +
                           std::to_string(it.features.size()) + " features, expected " +
                           std::to_string(dim_));
    }
    if (!index_.emplace(it.id, i).second) {
      throw ContractError("duplicate_item", "item id " + std::to_string(it.id) + " repeated");
    }
    labels.push_back(it.label);
  }
  std::ranges::sort(labels);
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  classes_ = std::move(labels);
}

const Item& Dataset::item(ItemId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw ContractError("unknown_item", "item id " + std::to_string(id) + " not in dataset");
  }
  return items_[it->second];
}

std::vector<ItemId> Dataset::ids_of(ClassId label, Split split) const {
  std::vector<ItemId> ids;
  for (const Item& it : items_) {
    if (it.label == label && it.split == split) ids.push_back(it.id);
  }
  return ids;
}

std::vector<ItemId> Dataset::ids_of(Split split) const {
  std::vector<ItemId> ids;
  for (ClassId c : classes_) {
    auto part = ids_of(c, split);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

void Dataset::validate_splits() const {
  std::map<ClassId, std::pair<std::size_t, std::size_t>> counts;
  for (const Item& it : items_) {
    auto& [train, test] = counts[it.label];
    (it.split == Split::train ? train : test)++;
  }
  for (const auto& [label, c] : counts) {
    if (c.first == 0 || c.second == 0) {
      throw ContractError("class_missing_split",
                          "class " + std::to_string(label) + " needs at least one train and one test item");
    }
  }
}

Tensor Dataset::stack(std::span<const ItemId> ids) const {
  Tensor out({ids.size(), dim_});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& f = item(ids[i]).features;
    std::ranges::copy(f, out.row(i).begin());
  }
  return out;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  require(spec.num_classes > 0 && spec.dim > 0 && spec.per_class > 0, "invalid_synthetic_spec",
          "synthetic dataset counts must be positive");
  Rng rng(derive_seed(spec.seed, 0x5e7ULL));
  const auto tags = class_split_tags(spec.per_class);
  std::vector<Item> items;
  items.reserve(spec.num_classes * spec.per_class);
  std::vector<double> mean(spec.dim), direction(spec.dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (double& v : mean) v = rng.normal();
    kernels::normalize_into(mean, mean);
    for (double& v : direction) v = rng.normal();
    kernels::normalize_into(direction, direction);
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      const double phase =
          spec.per_class > 1 ? static_cast<double>(k) / static_cast<double>(spec.per_class - 1) : 0.0;
      Item it;
      it.id = static_cast<ItemId>(c * spec.per_class + k);
      it.label = static_cast<ClassId>(c);
      it.split = tags[k];
      it.features.resize(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d) {
        const double v = mean[d] + spec.drift * phase * direction[d] + spec.spread * rng.normal();
        it.features[d] = static_cast<double>(static_cast<float>(v));
      }
      items.push_back(std::move(it));
    }
  }
  return Dataset(std::move(items), spec.dim);
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, ds.size());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.dim()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.num_classes()));
  for (const Item& it : ds.items()) {
    put<std::uint64_t>(os, it.id);
    put<std::uint32_t>(os, it.label);
    for (double v : it.features) put<float>(os, static_cast<float>(v));
  }
  for (const Item& it : ds.items()) put<std::uint8_t>(os, static_cast<std::uint8_t>(it.split));
  if (!os) throw FormatError("failed writing " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + " is not a dataset file (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(is, "item count");
  const auto dim = get<std::uint32_t>(is, "dimension");
  const auto declared_classes = get<std::uint32_t>(is, "class count");
  std::vector<Item> items(count);
  for (Item& it : items) {
    it.id = get<std::uint64_t>(is, "item id");
    it.label = get<std::uint32_t>(is, "class id");
    it.features.resize(dim);
    for (double& v : it.features) v = static_cast<double>(get<float>(is, "features"));
  }
  for (Item& it : items) {
    const auto tag = get<std::uint8_t>(is, "split tags");
    if (tag > 1) throw FormatError("invalid split tag " + std::to_string(tag));
    it.split = static_cast<Split>(tag);
  }
  Dataset ds(std::move(items), dim);
  if (ds.num_classes() != declared_classes) {
    throw FormatError("header declares " + std::to_string(declared_classes) + " classes, found " +
                      std::to_string(ds.num_classes()));
  }
  return ds;
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<Item> items;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw FormatError("line " + std::to_string(line_no) + ": too few columns");
    Item it;
    try {
      it.id = std::stoull(cells[0]);
      it.label = static_cast<ClassId>(std::stoul(cells[1]));
      for (std::size_t k = 2; k < cells.size(); ++k) it.features.push_back(std::stod(cells[k]));
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header
      throw FormatError("line " + std::to_string(line_no) + ": unparsable value");
    }
    if (items.empty()) dim = it.features.size();
    items.push_back(std::move(it));
  }
  std::map<ClassId, std::vector<std::size_t>> per_class;
  for (std::size_t i = 0; i < items.size(); ++i) per_class[items[i].label].push_back(i);
  for (const auto& [label, idx] : per_class) {
    const auto tags = class_split_tags(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) items[idx[k]].split = tags[k];
  }
  return Dataset(std::move(items), dim);
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << "id,class";
  for (std::size_t d = 0; d < ds.dim(); ++d) os << ",f" << d;
  os << '\n';
  os.precision(17);
  for (const Item& it : ds.items()) {
    os << it.id << ',' << it.label;
    for (double v : it.features) os << ',' << v;
    os << '\n';
  }
}

}  // namespace cvs
