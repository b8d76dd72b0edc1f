#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvs/config.hpp"
#include "cvs/dataset.hpp"
#include "cvs/gallery.hpp"
#include "cvs/losses.hpp"
#include "cvs/model.hpp"
#include "cvs/replay.hpp"
#include "cvs/sessions.hpp"

namespace cvs {

inline constexpr std::size_t kRecallKs[] = {1, 2, 4};

struct SessionMetrics {
  std::size_t session = 0;
  std::vector<double> recalls;  // one per kRecallKs entry
  double accuracy = 0.0;
  double validation_recall = 0.0;  // recall@1 of the selected epoch (0 without queries)
  std::size_t selected_epoch = 0;  // 0 = initial weights
  std::size_t train_items = 0;
  std::size_t test_queries = 0;
  std::size_t gallery_size = 0;
  std::size_t replay_size = 0;
  std::vector<LossReport> epoch_losses;  // per-epoch means of the batch reports
};

struct RunReport {
  RunConfig config;
  std::vector<SessionMetrics> sessions;
  std::vector<double> average_recalls;  // AR@K per kRecallKs entry
  std::map<std::size_t, std::uint64_t> gallery_hashes;
  bool gallery_verified = false;
  double wall_seconds = 0.0;
};

/// State carried across sessions: the model, its replay buffer, the
/// replayed embeddings and the append-only gallery.
struct ExperimentState {
  ModelState model;
  ReplayBuffer buffer;
  CentroidStore centroids;
  GallerySet gallery;
  std::size_t completed_sessions = 0;
};

/// One continual run over a session plan. Sessions must be trained in order.
class Experiment {
 public:
  /// Builds the plan; an infeasible plan throws ContractError before training.
  Experiment(RunConfig config, Dataset dataset);

  const RunConfig& config() const noexcept { return config_; }
  const Dataset& dataset() const noexcept { return dataset_; }
  const SessionPlan& plan() const noexcept { return plan_; }
  const ExperimentState& state() const noexcept { return state_; }
  std::size_t num_sessions() const noexcept { return plan_.sessions.size(); }
  std::size_t replay_budget() const noexcept { return state_.buffer.budget(); }

  /// Trains session j (1-based) and evaluates it. For the joint method the
  /// first call trains on all sessions' data; every call then appends the
  /// session's block extracted by that single model.
  SessionMetrics train_session(std::size_t j);

  /// Runs every remaining session and assembles the report.
  RunReport run();

  /// Test items (ids) evaluated after session j.
  std::vector<ItemId> test_scope(std::size_t j) const;

 private:
  double validation_recall(const ModelState& model, std::size_t j) const;
  void fit(const std::vector<ItemId>& train_ids, std::size_t j, SessionMetrics& metrics);
  SessionMetrics evaluate(std::size_t j, SessionMetrics metrics) const;

  RunConfig config_;
  Dataset dataset_;
  SessionPlan plan_;
  ExperimentState state_;
  std::vector<SessionMetrics> history_;
};

/// Builds the dataset and runs every session.
RunReport run_experiment(const RunConfig& config);
RunReport run_experiment(const RunConfig& config, const Dataset& dataset);

nlohmann::json summary_json(const RunReport& report);
std::string metrics_csv(const RunReport& report);

/// Writes metrics.csv, summary.json and checkpoint.json into `out_dir`.
void write_run_outputs(const RunReport& report, const ExperimentState& state,
                       const std::filesystem::path& out_dir);

/// One row of the loss ablation matrix.
struct AblationRow {
  std::string name;
  bool use_m = false;
  bool use_d = false;
  bool use_replay_data = false;
};

/// The five loss ablation rows: l_c, l_c + l_m, l_c + l_d without replay,
/// l_c + l_d, and the full objective.
std::vector<AblationRow> ablation_rows();

RunConfig apply_ablation(RunConfig config, const AblationRow& row);

struct SweepResult {
  std::string row;
  std::uint64_t seed = 0;
  std::vector<double> average_recalls;
};

/// Runs every ablation row for every seed.
std::vector<SweepResult> run_sweep(const RunConfig& base, const std::vector<std::uint64_t>& seeds);

std::string sweep_csv(const std::vector<SweepResult>& results);

}  // namespace cvs
