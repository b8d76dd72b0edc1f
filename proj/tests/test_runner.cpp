#include <doctest.h>

#include <filesystem>

#include "cvs/checkpoint.hpp"
#include "cvs/errors.hpp"
#include "cvs/gradcheck.hpp"
#include "cvs/runner.hpp"

using namespace cvs;

namespace {

RunConfig small_config(std::uint64_t seed = 0) {
  RunConfig c;
  c.dataset.synthetic = {8, 8, 30, 0.3, 1.0, 0};
  c.setup.kind = SetupKind::general;
  c.setup.initial_classes = 2;
  c.setup.classes_per_session = 2;
  c.setup.old_percent = 30;
  c.setup.general_sessions = 4;
  c.hyper.epochs_per_session = 3;
  c.hyper.hidden_dim = 16;
  c.hyper.embed_dim = 8;
  c.seed = seed;
  return c;
}

bool same_parameters(const ModelState& a, const ModelState& b) {
  const auto& p = a.parameters();
  const auto& q = b.parameters();
  return p.w1.identical(q.w1) && p.b1.identical(q.b1) && p.w2.identical(q.w2) && p.b2.identical(q.b2) &&
         p.classifier.identical(q.classifier);
}

}  // namespace

TEST_CASE("session 1 trains the classification term only") {
  Experiment e(small_config(), materialize_dataset(small_config()));
  const SessionMetrics m = e.train_session(1);
  REQUIRE(m.epoch_losses.size() == 3);
  for (const auto& l : m.epoch_losses) {
    CHECK(l.l_m == 0.0);
    CHECK(l.l_d == 0.0);
    CHECK(l.total == l.l_c);
  }
  const SessionMetrics second = e.train_session(2);
  bool distilled = false;
  for (const auto& l : second.epoch_losses) distilled = distilled || l.l_m > 0.0 || l.l_d > 0.0;
  CHECK(distilled);
}

TEST_CASE("sessions run in order") {
  Experiment e(small_config(), materialize_dataset(small_config()));
  CHECK_THROWS_AS(e.train_session(2), ContractError);
  e.train_session(1);
  CHECK_THROWS_AS(e.train_session(1), ContractError);
  CHECK_THROWS_AS(e.train_session(5), ContractError);
}

TEST_CASE("zero epochs leave the network unchanged but still extract") {
  RunConfig c = small_config();
  c.hyper.epochs_per_session = 0;
  const Dataset ds = materialize_dataset(c);
  Experiment e(c, ds);
  const ModelState initial = e.state().model;
  e.train_session(1);
  CHECK(e.state().model.parameters().w1.identical(initial.parameters().w1));
  CHECK(e.state().model.parameters().w2.identical(initial.parameters().w2));
  CHECK(e.state().gallery.size() == e.plan().sessions[0].train_ids.size());
}

TEST_CASE("end-to-end state audit") {
  const RunConfig c = small_config(3);
  Experiment e(c, materialize_dataset(c));
  e.train_session(1);
  const auto first_hash = e.state().gallery.block_hashes().at(1);
  e.train_session(2);
  CHECK(e.state().gallery.block_hashes().at(1) == first_hash);
  CHECK(e.state().gallery.compute_block_hash(1) == first_hash);
  CHECK(e.state().buffer.size() <= e.replay_budget());
  CHECK(e.state().buffer.size() > 0);
  const auto seen = e.plan().classes_up_to(2);
  const auto centroid_classes = e.state().centroids.classes();
  CHECK(std::set<ClassId>(centroid_classes.begin(), centroid_classes.end()) == seen);
  std::size_t train = 0;
  for (std::size_t j = 0; j < 2; ++j) train += e.plan().sessions[j].train_ids.size();
  CHECK(e.state().gallery.size() == train);
}

TEST_CASE("full run: cumulative gallery and averaged recalls") {
  const RunConfig c = small_config(4);
  Experiment e(c, materialize_dataset(c));
  const RunReport r = e.run();
  REQUIRE(r.sessions.size() == 4);
  CHECK(r.gallery_verified);
  CHECK(r.gallery_hashes.size() == 4);
  for (std::size_t k = 0; k < 3; ++k) {
    double sum = 0;
    for (const auto& s : r.sessions) sum += s.recalls[k];
    CHECK(r.average_recalls[k] == doctest::Approx(sum / 4).epsilon(1e-15));
  }
  std::size_t train = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    train += e.plan().sessions[j].train_ids.size();
    CHECK(r.sessions[j].gallery_size == train);
  }
  CHECK(r.sessions.back().test_queries == e.test_scope(4).size());
}

TEST_CASE("runs are deterministic") {
  const RunReport a = run_experiment(small_config(5));
  const RunReport b = run_experiment(small_config(5));
  CHECK(metrics_csv(a) == metrics_csv(b));
  CHECK(a.gallery_hashes == b.gallery_hashes);
  const RunReport c = run_experiment(small_config(6));
  CHECK(a.gallery_hashes != c.gallery_hashes);
}

TEST_CASE("finetune equals the full objective with zero weights and no replay") {
  RunConfig ft = small_config(7);
  ft.method = Method::finetune;
  RunConfig zero = small_config(7);
  zero.hyper.alpha = 0.0;
  zero.hyper.beta = 0.0;
  zero.replay_budget = 0;
  const Dataset ds = materialize_dataset(ft);
  Experiment a(ft, ds), b(zero, ds);
  for (std::size_t j = 1; j <= 2; ++j) {
    a.train_session(j);
    b.train_session(j);
    CHECK(same_parameters(a.state().model, b.state().model));
  }
  CHECK(a.config().toggles.use_m == false);
  CHECK(a.config().toggles.use_d == false);
}

TEST_CASE("an infeasible plan fails before training") {
  RunConfig c = small_config();
  c.setup.general_sessions = 10;
  try {
    Experiment e(c, materialize_dataset(c));
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    CHECK_FALSE(e.code().empty());
  }
}

TEST_CASE("blurry evaluates every class from the first session") {
  RunConfig c = small_config();
  c.setup.kind = SetupKind::blurry;
  c.setup.num_sessions = 2;
  c.hyper.epochs_per_session = 1;
  Experiment e(c, materialize_dataset(c));
  e.train_session(1);
  CHECK(e.state().model.num_classes() == 8);
  CHECK(e.test_scope(1).size() == e.dataset().ids_of(Split::test).size());
}

TEST_CASE("joint trains one model and beats chance on 20 classes") {
  RunConfig c;
  c.dataset.synthetic = {20, 32, 100, 0.3, 1.0, 0};
  c.setup.initial_classes = 4;
  c.setup.classes_per_session = 4;
  c.setup.old_percent = 30;
  c.setup.general_sessions = 5;
  c.method = Method::joint;
  c.hyper.epochs_per_session = 10;
  const RunReport r = run_experiment(c);
  CHECK(r.average_recalls[0] > 3.0 / 20.0);
  for (const auto& s : r.sessions) CHECK(s.selected_epoch == r.sessions.front().selected_epoch);
}

TEST_CASE("config JSON round-trips and rejects unknown keys") {
  RunConfig c = small_config(9);
  c.replay_budget = 12;
  c.validation.per_class = 2;
  c.centroid_divisor = CentroidDivisor::all_sessions;
  const auto j = to_json(c);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  auto bad = j;
  bad["hyper"]["alpah"] = 1.0;
  CHECK_THROWS_AS(run_config_from_json(bad), ContractError);
  bad = j;
  bad["hyper"]["alpha"] = "ten";
  CHECK_THROWS_AS(run_config_from_json(bad), ContractError);
  bad = j;
  bad["method"] = "magic";
  CHECK_THROWS_AS(run_config_from_json(bad), ContractError);
  bad = j;
  bad["hyper"]["temperature"] = 0.0;
  CHECK_THROWS_AS(run_config_from_json(bad), ContractError);
  CHECK(run_config_from_json(nlohmann::json::object()).hyper.alpha == 10.0);
}

TEST_CASE("checkpoint round-trip and tamper detection") {
  const RunConfig c = small_config(10);
  Experiment e(c, materialize_dataset(c));
  e.run();
  const auto j = checkpoint_json(e.state());
  const ExperimentState back = state_from_checkpoint(j);
  CHECK(same_parameters(back.model, e.state().model));
  CHECK(back.gallery.block_hashes() == e.state().gallery.block_hashes());
  CHECK(back.buffer.size() == e.state().buffer.size());
  for (ClassId k : e.state().centroids.classes()) {
    CHECK(back.centroids.centroid(k).identical(e.state().centroids.centroid(k)));
  }
  CHECK(checkpoint_json(back) == j);

  auto tampered = j;
  tampered["gallery"]["embeddings"]["data"][0] = 0.123;
  CHECK_THROWS_AS(state_from_checkpoint(tampered), FormatError);
  auto wrong = j;
  wrong["version"] = 99;
  CHECK_THROWS_AS(state_from_checkpoint(wrong), FormatError);
}

TEST_CASE("outputs are written") {
  const RunConfig c = small_config(11);
  Experiment e(c, materialize_dataset(c));
  const RunReport r = e.run();
  const auto dir = std::filesystem::temp_directory_path() / "cvs_test_runner_out";
  write_run_outputs(r, e.state(), dir);
  for (const char* name : {"metrics.csv", "summary.json", "checkpoint.json"}) {
    CHECK(std::filesystem::exists(dir / name));
  }
  const auto summary = summary_json(r);
  CHECK(summary["average_recall"]["AR@1"] == r.average_recalls[0]);
  CHECK(summary["learning_rate_schedule"].get<std::string>().find("constant") == 0);
  const ExperimentState back = read_checkpoint(dir / "checkpoint.json");
  CHECK(back.gallery.block_hashes() == r.gallery_hashes);
}

TEST_CASE("ablation rows") {
  const auto rows = ablation_rows();
  REQUIRE(rows.size() == 5);
  CHECK((!rows[0].use_m && !rows[0].use_d && !rows[0].use_replay_data));
  CHECK((rows[1].use_m && !rows[1].use_d && rows[1].use_replay_data));
  CHECK((!rows[2].use_m && rows[2].use_d && !rows[2].use_replay_data));
  CHECK((!rows[3].use_m && rows[3].use_d && rows[3].use_replay_data));
  CHECK((rows[4].use_m && rows[4].use_d && rows[4].use_replay_data));
  RunConfig base = small_config();
  base.method = Method::finetune;
  const RunConfig applied = apply_ablation(base, rows[2]);
  CHECK(applied.method == Method::cvs);
  CHECK(applied.toggles.use_d);
  CHECK_FALSE(applied.toggles.use_replay_data);
}

TEST_CASE("gradient check suite") {
  GradCheckConfig g;
  g.instances = 30;
  const GradCheckReport a = grad_check_suite(g);
  CHECK(a.passed());
  CHECK(a.terms.size() == 4);
  const GradCheckReport b = grad_check_suite(g);
  for (std::size_t i = 0; i < a.terms.size(); ++i) CHECK(a.terms[i].max_relative_error == b.terms[i].max_relative_error);
  g.alpha = 0.0;
  g.beta = 0.0;
  const GradCheckReport only_c = grad_check_suite(g);
  REQUIRE(only_c.terms.size() == 2);
  CHECK(only_c.terms[0].term == "l_c");
  CHECK(only_c.terms[1].term == "total");
}

TEST_CASE("blurry run where validation takes every early item of a class") {
  RunConfig c;
  c.setup.kind = SetupKind::blurry;
  c.setup.num_sessions = 5;
  c.hyper.epochs_per_session = 2;
  Experiment e(c, materialize_dataset(c));
  // Some class has no train items in session 1 but appears in session 2.
  const auto first = e.plan().sessions[0];
  std::set<ClassId> trained;
  for (ItemId id : first.train_ids) trained.insert(e.dataset().item(id).label);
  CHECK(trained.size() < 20);
  const RunReport r = e.run();
  CHECK(r.gallery_verified);
  const auto classes = e.state().centroids.classes();
  CHECK(classes.size() == 20);
}
