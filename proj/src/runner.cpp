#include "cvs/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cvs/checkpoint.hpp"
#include "cvs/errors.hpp"

namespace cvs {

using nlohmann::json;

namespace {

// Independent random streams of one run.
constexpr std::uint64_t kPlanStream = 1;
constexpr std::uint64_t kValidationStream = 2;
constexpr std::uint64_t kModelStream = 3;
constexpr std::uint64_t kBatchStream = 100;
constexpr std::uint64_t kMiningStream = 200;

std::size_t total_train_items(const SessionPlan& plan) {
  std::size_t n = 0;
  for (const auto& s : plan.sessions) n += s.train_ids.size();
  return n;
}

Hyperparameters model_hyper(const RunConfig& config) {
  Hyperparameters h = config.hyper;
  h.seed = derive_seed(config.seed, kModelStream);
  return h;
}

std::vector<ClassId> labels_of(const Dataset& ds, std::span<const ItemId> ids) {
  std::vector<ClassId> out;
  out.reserve(ids.size());
  for (ItemId id : ids) out.push_back(ds.item(id).label);
  return out;
}

void accumulate(LossReport& sum, const LossReport& r) {
  sum.l_c += r.l_c;
  sum.l_m += r.l_m;
  sum.l_d_inner += r.l_d_inner;
  sum.l_d_outer += r.l_d_outer;
  sum.l_d += r.l_d;
  sum.total += r.total;
  sum.triplets += r.triplets;
  sum.inner_terms += r.inner_terms;
  sum.outer_terms += r.outer_terms;
}

LossReport mean_of(LossReport sum, std::size_t batches) {
  if (batches == 0) return sum;
  const double n = static_cast<double>(batches);
  sum.l_c /= n;
  sum.l_m /= n;
  sum.l_d_inner /= n;
  sum.l_d_outer /= n;
  sum.l_d /= n;
  sum.total /= n;
  return sum;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

Experiment::Experiment(RunConfig config, Dataset dataset)
    : config_(config.normalized()),
      dataset_(std::move(dataset)),
      state_{ModelState(dataset_.dim(), model_hyper(config_)), ReplayBuffer(0),
             CentroidStore(config_.toggles.use_replayed_embedding ? config_.centroid_divisor
                                                                  : CentroidDivisor::latest_session),
             GallerySet{}, 0} {
  config_.validate();
  dataset_.validate_splits();
  Rng plan_rng(derive_seed(config_.seed, kPlanStream));
  plan_ = make_plan(dataset_, config_.setup, plan_rng);
  Rng validation_rng(derive_seed(config_.seed, kValidationStream));
  sample_validation_queries(plan_, config_.validation, config_.setup.kind != SetupKind::blurry, dataset_,
                            validation_rng);
  for (const auto& s : plan_.sessions) {
    require(!s.train_ids.empty(), "infeasible_plan",
            "session " + std::to_string(s.index) + " has no training items");
  }
  const std::size_t budget =
      config_.replay_budget
          ? *config_.replay_budget
          : static_cast<std::size_t>(config_.replay_budget_fraction * static_cast<double>(total_train_items(plan_)));
  state_.buffer = ReplayBuffer(config_.toggles.use_replay_data ? budget : 0);
}

std::vector<ItemId> Experiment::test_scope(std::size_t j) const {
  const std::set<ClassId> classes =
      config_.setup.kind == SetupKind::blurry ? plan_.all_classes() : plan_.classes_up_to(j);
  std::vector<ItemId> ids;
  for (ClassId c : classes) {
    const auto test = dataset_.ids_of(c, Split::test);
    ids.insert(ids.end(), test.begin(), test.end());
  }
  return ids;
}

double Experiment::validation_recall(const ModelState& model, std::size_t j) const {
  const bool joint = config_.method == Method::joint;
  const auto& queries = joint ? plan_.sessions.back().validation_ids : plan_.sessions[j - 1].validation_ids;
  if (queries.empty()) return 0.0;

  // Frozen blocks of earlier sessions followed by the current session's train
  // items embedded by the candidate model.
  std::vector<ItemId> fresh;
  std::vector<double> flat;
  std::vector<ClassId> gallery_labels;
  if (joint) {
    for (const auto& s : plan_.sessions) fresh.insert(fresh.end(), s.train_ids.begin(), s.train_ids.end());
  } else {
    const Tensor frozen = state_.gallery.embeddings();
    flat.assign(frozen.data().begin(), frozen.data().end());
    gallery_labels = state_.gallery.labels();
    fresh = plan_.sessions[j - 1].train_ids;
  }
  const Tensor current = embed_batch(model, dataset_.stack(fresh));
  flat.insert(flat.end(), current.data().begin(), current.data().end());
  const auto fresh_labels = labels_of(dataset_, fresh);
  gallery_labels.insert(gallery_labels.end(), fresh_labels.begin(), fresh_labels.end());

  const Tensor gallery({gallery_labels.size(), model.embed_dim()}, std::move(flat));
  const Tensor q = embed_batch(model, dataset_.stack(queries));
  const std::size_t ks[] = {1};
  return recall_at_ks(gallery, gallery_labels, q, labels_of(dataset_, queries), ks).front();
}

void Experiment::fit(const std::vector<ItemId>& train_ids, std::size_t j, SessionMetrics& metrics) {
  const Hyperparameters& hyper = state_.model.hyper();
  const bool cvs = config_.method == Method::cvs;
  std::optional<ModelSnapshot> teacher;
  if (cvs && j >= 2) teacher = snapshot(state_.model, j - 1);

  // Previously seen classes are those with a replayed embedding; a class whose
  // earlier items were all withheld for validation has none yet.
  const auto with_centroid = state_.centroids.classes();
  const ClassIndexSets sets = make_class_index_sets({with_centroid.begin(), with_centroid.end()},
                                                    plan_.sessions[j - 1].classes);
  const LossToggles toggles{config_.toggles.use_m, config_.toggles.use_d};
  const CoherenceOptions options{config_.toggles.negatives_include_replayed,
                                 config_.toggles.anchors_include_replayed};
  const auto& replay = state_.buffer.entries();
  const bool mix_replay = cvs && config_.toggles.use_replay_data && !replay.empty();

  const std::size_t n = hyper.batch_size;
  std::size_t replay_slots = 0;
  if (mix_replay && config_.replay_batch_fraction > 0.0) {
    replay_slots = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(config_.replay_batch_fraction * static_cast<double>(n))));
    replay_slots = std::min({replay_slots, replay.size(), n - 1});
  }
  const std::size_t current_slots = n - replay_slots;

  Rng rng(derive_seed(config_.seed, kBatchStream + j));
  SgdMomentum optimizer(hyper.learning_rate, hyper.momentum, hyper.weight_decay);
  std::vector<std::size_t> order(train_ids.size());
  std::vector<std::size_t> replay_order(replay.size());
  std::iota(replay_order.begin(), replay_order.end(), 0);

  std::optional<ModelState> best;
  double best_recall = -1.0;
  const bool select = config_.select_best_epoch &&
                      !(config_.method == Method::joint ? plan_.sessions.back() : plan_.sessions[j - 1])
                           .validation_ids.empty();

  for (std::size_t epoch = 1; epoch <= hyper.epochs_per_session; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    LossReport sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += current_slots) {
      const std::size_t end = std::min(order.size(), start + current_slots);
      std::vector<LabeledInput> current, replayed;
      for (std::size_t k = start; k < end; ++k) {
        const Item& item = dataset_.item(train_ids[order[k]]);
        current.push_back({item.features, item.label});
      }
      // Partial Fisher-Yates: the first replay_slots positions are a uniform
      // draw without replacement.
      for (std::size_t k = 0; k < replay_slots; ++k) {
        const std::size_t pick = k + static_cast<std::size_t>(rng.index(replay_order.size() - k));
        std::swap(replay_order[k], replay_order[pick]);
        const Exemplar& e = replay[replay_order[k]];
        replayed.push_back({e.features, e.label});
      }
      if (current.size() + replayed.size() < 2) continue;
      const BatchView batch = make_batch(current, replayed);
      LossEvaluation eval = total_loss(state_.model, teacher ? &*teacher : nullptr, batch, &state_.centroids,
                                       sets, hyper, j, toggles, options);
      const Gradients grads = eval.gradients();
      optimizer.step(state_.model.parameters(), grads, eval.pass.params);
      accumulate(sum, eval.report);
      ++batches;
    }
    metrics.epoch_losses.push_back(mean_of(sum, batches));

    if (select) {
      const double recall = validation_recall(state_.model, j);
      if (recall > best_recall) {
        best_recall = recall;
        best = state_.model;
        metrics.selected_epoch = epoch;
      }
    }
  }
  if (best) {
    state_.model = std::move(*best);
    metrics.validation_recall = best_recall;
  } else {
    metrics.selected_epoch = hyper.epochs_per_session;
  }
}

SessionMetrics Experiment::evaluate(std::size_t j, SessionMetrics metrics) const {
  const auto ids = test_scope(j);
  require(!ids.empty(), "empty_queries", "session " + std::to_string(j) + " has no test queries");
  const Tensor inputs = dataset_.stack(ids);
  const auto labels = labels_of(dataset_, ids);
  const Tensor queries = embed_batch(state_.model, inputs);
  metrics.recalls = recall_at_ks(state_.gallery, queries, labels, kRecallKs);
  metrics.accuracy = classification_accuracy(state_.model, inputs, labels);
  metrics.test_queries = ids.size();
  metrics.gallery_size = state_.gallery.size();
  metrics.replay_size = state_.buffer.size();
  return metrics;
}

SessionMetrics Experiment::train_session(std::size_t j) {
  require(j == state_.completed_sessions + 1 && j <= plan_.sessions.size(), "session_order",
          "session " + std::to_string(j) + " requested after " + std::to_string(state_.completed_sessions) +
              " completed sessions of " + std::to_string(plan_.sessions.size()));
  const SessionSpec& spec = plan_.sessions[j - 1];
  SessionMetrics metrics;
  metrics.session = j;
  metrics.train_items = spec.train_ids.size();

  if (config_.method == Method::joint) {
    if (j == 1) {
      const auto all = plan_.all_classes();
      const std::vector<ClassId> ids(all.begin(), all.end());
      state_.model.register_classes(ids);
      std::vector<ItemId> everything;
      for (const auto& s : plan_.sessions) everything.insert(everything.end(), s.train_ids.begin(), s.train_ids.end());
      fit(everything, 1, metrics);
    } else {
      metrics.selected_epoch = history_.front().selected_epoch;
      metrics.validation_recall = history_.front().validation_recall;
    }
  } else {
    std::vector<ClassId> fresh;
    if (config_.setup.kind == SetupKind::blurry) {
      if (j == 1) {
        const auto all = plan_.all_classes();
        fresh.assign(all.begin(), all.end());
      }
    } else {
      for (ClassId c : spec.classes) {
        if (!state_.model.class_index(c)) fresh.push_back(c);
      }
    }
    state_.model.register_classes(fresh);
    fit(spec.train_ids, j, metrics);
  }

  extract_and_append(state_.gallery, state_.model, dataset_, spec.train_ids, j);

  if (state_.buffer.budget() > 0) {
    std::vector<Item> items;
    for (ItemId id : spec.train_ids) items.push_back(dataset_.item(id));
    Rng mining_rng(derive_seed(config_.seed, kMiningStream + j));
    const std::size_t known = plan_.classes_up_to(j).size();
    auto exemplars = mine_exemplars(state_.model, items, state_.buffer.budget() / known, mining_rng, j,
                                    config_.candidate_pool_factor);
    rebalance(state_.buffer, std::move(exemplars), known);
  }

  std::map<ClassId, std::vector<Tensor>> block;
  for (std::size_t i = 0; i < state_.gallery.size(); ++i) {
    if (state_.gallery.session(i) != j) continue;
    const auto e = state_.gallery.embedding(i);
    block[state_.gallery.label(i)].push_back(Tensor({e.size()}, {e.begin(), e.end()}));
  }
  state_.centroids.update(block, j);

  state_.completed_sessions = j;
  metrics = evaluate(j, std::move(metrics));
  history_.push_back(metrics);
  return metrics;
}

RunReport Experiment::run() {
  const auto started = std::chrono::steady_clock::now();
  while (state_.completed_sessions < plan_.sessions.size()) train_session(state_.completed_sessions + 1);

  RunReport report;
  report.config = config_;
  report.sessions = history_;
  for (std::size_t k = 0; k < std::size(kRecallKs); ++k) {
    std::vector<double> per_session;
    for (const auto& s : history_) per_session.push_back(s.recalls[k]);
    report.average_recalls.push_back(average_recall(per_session));
  }
  report.gallery_hashes = state_.gallery.block_hashes();
  report.gallery_verified = state_.gallery.verify();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

RunReport run_experiment(const RunConfig& config, const Dataset& dataset) {
  Experiment experiment(config, dataset);
  return experiment.run();
}

RunReport run_experiment(const RunConfig& config) { return run_experiment(config, materialize_dataset(config)); }

json summary_json(const RunReport& report) {
  json sessions = json::array();
  for (const auto& s : report.sessions) {
    json losses = json::array();
    for (const auto& l : s.epoch_losses) {
      losses.push_back({{"l_c", l.l_c},
                        {"l_m", l.l_m},
                        {"l_d", l.l_d},
                        {"l_d_inner", l.l_d_inner},
                        {"l_d_outer", l.l_d_outer},
                        {"total", l.total}});
    }
    json recalls;
    for (std::size_t k = 0; k < std::size(kRecallKs); ++k) recalls["R@" + std::to_string(kRecallKs[k])] = s.recalls[k];
    sessions.push_back({{"session", s.session},
                        {"recall", recalls},
                        {"accuracy", s.accuracy},
                        {"validation_recall_at_1", s.validation_recall},
                        {"selected_epoch", s.selected_epoch},
                        {"train_items", s.train_items},
                        {"test_queries", s.test_queries},
                        {"gallery_size", s.gallery_size},
                        {"replay_size", s.replay_size},
                        {"epoch_losses", losses}});
  }
  json ar;
  for (std::size_t k = 0; k < std::size(kRecallKs); ++k) {
    ar["AR@" + std::to_string(kRecallKs[k])] = report.average_recalls[k];
  }
  json hashes;
  for (const auto& [session, hash] : report.gallery_hashes) hashes[std::to_string(session)] = hash_hex(hash);
  return {{"setup", to_string(report.config.setup.kind)},
          {"method", to_string(report.config.method)},
          {"average_recall", ar},
          {"sessions", sessions},
          {"gallery_block_hashes", hashes},
          {"gallery_verified", report.gallery_verified},
          {"wall_seconds", report.wall_seconds},
          {"learning_rate_schedule", "constant; the cosine schedule is not used at this scale"},
          {"config", to_json(report.config)}};
}

std::string metrics_csv(const RunReport& report) {
  std::ostringstream out;
  out << "session,setup,method,R@1,R@2,R@4,accuracy\n";
  for (const auto& s : report.sessions) {
    out << s.session << ',' << to_string(report.config.setup.kind) << ',' << to_string(report.config.method);
    for (double r : s.recalls) out << ',' << fixed6(r);
    out << ',' << fixed6(s.accuracy) << '\n';
  }
  return out.str();
}

void write_run_outputs(const RunReport& report, const ExperimentState& state,
                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(out_dir / name, std::ios::binary);
    if (!out) throw FormatError("cannot write " + (out_dir / name).string());
    out << text;
  };
  write("metrics.csv", metrics_csv(report));
  write("summary.json", summary_json(report).dump(2) + "\n");
  write_checkpoint(state, out_dir / "checkpoint.json");
}

std::vector<AblationRow> ablation_rows() {
  return {{"Lc", false, false, false},
          {"Lc+Lm", true, false, true},
          {"Lc+Ld w/o replay", false, true, false},
          {"Lc+Ld", false, true, true},
          {"Lc+Lm+Ld", true, true, true}};
}

RunConfig apply_ablation(RunConfig config, const AblationRow& row) {
  config.method = Method::cvs;
  config.toggles.use_m = row.use_m;
  config.toggles.use_d = row.use_d;
  config.toggles.use_replay_data = row.use_replay_data;
  return config;
}

std::vector<SweepResult> run_sweep(const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepResult> out;
  for (const auto& row : ablation_rows()) {
    for (std::uint64_t seed : seeds) {
      RunConfig config = apply_ablation(base, row);
      config.seed = seed;
      out.push_back({row.name, seed, run_experiment(config).average_recalls});
    }
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepResult>& results) {
  std::ostringstream out;
  out << "row,seed,AR@1,AR@2,AR@4\n";
  for (const auto& r : results) {
    out << r.row << ',' << r.seed;
    for (double v : r.average_recalls) out << ',' << fixed6(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace cvs
