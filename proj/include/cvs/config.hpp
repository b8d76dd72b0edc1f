#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvs/dataset.hpp"
#include "cvs/losses.hpp"
#include "cvs/model.hpp"
#include "cvs/replay.hpp"
#include "cvs/sessions.hpp"

namespace cvs {

enum class Method { cvs, finetune, joint };

std::string to_string(Method method);
Method parse_method(const std::string& name);
std::string to_string(CentroidDivisor divisor);
CentroidDivisor parse_centroid_divisor(const std::string& name);

/// Either a synthetic generator or a dataset file (.csv or binary).
struct DatasetSource {
  SyntheticSpec synthetic;
  bool synthetic_seed_set = false;  // otherwise the run seed is used
  std::string path;                 // empty: synthetic

  bool is_synthetic() const noexcept { return path.empty(); }
};

struct RunToggles {
  bool use_m = true;
  bool use_d = true;
  bool use_replay_data = true;
  bool use_replayed_embedding = true;
  bool negatives_include_replayed = true;
  bool anchors_include_replayed = true;
};

// Setup default for a run: (4, 4, 30, 5) over the 20-class synthetic pool.
inline SetupDescriptor default_run_setup() {
  SetupDescriptor s;
  s.initial_classes = 4;
  s.classes_per_session = 4;
  s.old_percent = 30.0;
  return s;
}

inline DatasetSource default_run_dataset() {
  DatasetSource d;
  d.synthetic.drift = 1.0;
  return d;
}

/// Defaults form the 20-class drifting synthetic benchmark.
struct RunConfig {
  DatasetSource dataset = default_run_dataset();
  SetupDescriptor setup = default_run_setup();
  ValidationSpec validation;
  Hyperparameters hyper;
  std::optional<std::size_t> replay_budget;  // absolute item count
  double replay_budget_fraction = 0.05;      // of all train items, when no count is given
  RunToggles toggles;
  CentroidDivisor centroid_divisor = CentroidDivisor::contributing_sessions;
  double replay_batch_fraction = 0.25;
  std::size_t candidate_pool_factor = 2;
  bool select_best_epoch = true;
  Method method = Method::cvs;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  /// Applies the method invariants (finetune drops l_m, l_d and replay).
  RunConfig normalized() const;

  /// Throws ContractError on out-of-range values.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);

/// Missing keys keep their defaults; unknown keys and wrong types are errors.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Loads or generates the dataset described by the config.
Dataset materialize_dataset(const RunConfig& config);

}  // namespace cvs
