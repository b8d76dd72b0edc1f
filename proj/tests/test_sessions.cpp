#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cvs/errors.hpp"
#include "cvs/sessions.hpp"

using namespace cvs;

namespace {

Dataset pool(std::size_t classes, std::size_t per_class = 100, std::uint64_t seed = 0) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.dim = 4;
  spec.per_class = per_class;
  spec.seed = seed;
  return make_synthetic(spec);
}

// Every train item of the dataset lands in exactly one session allocation.
void check_partition(const Dataset& ds, const SessionPlan& plan, bool require_all) {
  std::set<ItemId> seen;
  for (const auto& s : plan.sessions) {
    for (ItemId id : s.allocated_ids) {
      CHECK(seen.insert(id).second);
      CHECK(ds.item(id).split == Split::train);
    }
    std::multiset<ItemId> joined(s.train_ids.begin(), s.train_ids.end());
    joined.insert(s.validation_own.begin(), s.validation_own.end());
    CHECK(joined == std::multiset<ItemId>(s.allocated_ids.begin(), s.allocated_ids.end()));
  }
  if (require_all) CHECK(seen.size() == ds.ids_of(Split::train).size());
}

SessionPlan general(const Dataset& ds, std::size_t s, std::size_t c, double m, std::size_t l, std::uint64_t seed = 1) {
  Rng rng(seed);
  return general_split(ds, s, c, m, l, rng);
}

// Old-class share of each later session is M% of its items, within one item,
// and the cumulative class count grows by C.
void audit_general(const Dataset& ds, std::size_t s, std::size_t c, double m, std::size_t l) {
  const SessionPlan plan = general(ds, s, c, m, l);
  REQUIRE(plan.sessions.size() == l);
  check_partition(ds, plan, false);
  std::set<ClassId> seen;
  for (std::size_t i = 0; i < l; ++i) {
    const auto& sess = plan.sessions[i];
    CHECK(sess.new_classes.size() == (i == 0 ? s : c));
    for (ClassId k : sess.new_classes) CHECK_FALSE(seen.contains(k));
    std::size_t old_items = 0, new_items = 0;
    const std::set<ClassId> fresh(sess.new_classes.begin(), sess.new_classes.end());
    for (ItemId id : sess.allocated_ids) {
      const ClassId k = ds.item(id).label;
      if (fresh.contains(k)) {
        ++new_items;
      } else {
        CHECK(seen.contains(k));
        ++old_items;
      }
    }
    CHECK(old_items == sess.old_items);
    CHECK(new_items == sess.new_items);
    if (i == 0) {
      CHECK(old_items == 0);
    } else {
      const double total = static_cast<double>(old_items + new_items);
      CHECK(std::abs(static_cast<double>(old_items) - m / 100.0 * total) <= 1.0);
    }
    seen.insert(sess.new_classes.begin(), sess.new_classes.end());
    CHECK(plan.classes_up_to(i + 1).size() == s + c * i);
  }
}

}  // namespace

TEST_CASE("synthetic data is seeded and split 80/20") {
  const Dataset a = pool(5, 50, 3), b = pool(5, 50, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.items()[i].features == b.items()[i].features);
  CHECK(a.ids_of(0, Split::test).size() == 10);
  CHECK(a.ids_of(0, Split::train).size() == 40);
  CHECK_NOTHROW(a.validate_splits());
}

TEST_CASE("zero spread is separable by raw 1-NN") {
  SyntheticSpec spec;
  spec.num_classes = 10;
  spec.spread = 0.0;
  spec.per_class = 10;
  const Dataset ds = make_synthetic(spec);
  std::size_t correct = 0, total = 0;
  for (ItemId q : ds.ids_of(Split::test)) {
    double best = 1e300;
    ClassId guess = 0;
    for (ItemId g : ds.ids_of(Split::train)) {
      double d = 0;
      for (std::size_t k = 0; k < ds.dim(); ++k) {
        const double diff = ds.item(q).features[k] - ds.item(g).features[k];
        d += diff * diff;
      }
      if (d < best) best = d, guess = ds.item(g).label;
    }
    correct += guess == ds.item(q).label;
    ++total;
  }
  CHECK(correct == total);
}

TEST_CASE("dataset files round-trip") {
  const Dataset ds = pool(3, 10, 4);
  const auto dir = std::filesystem::temp_directory_path() / "cvs_test_sessions";
  std::filesystem::create_directories(dir);
  write_dataset(ds, dir / "d.bin");
  write_dataset_csv(ds, dir / "d.csv");
  for (const Dataset& back : {read_dataset(dir / "d.bin"), read_dataset_csv(dir / "d.csv")}) {
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back.items()[i].id == ds.items()[i].id);
      CHECK(back.items()[i].label == ds.items()[i].label);
      CHECK(back.items()[i].split == ds.items()[i].split);
      CHECK(back.items()[i].features == ds.items()[i].features);
    }
  }
  std::ofstream(dir / "bad.bin") << "nope";
  CHECK_THROWS_AS(read_dataset(dir / "bad.bin"), FormatError);
}

TEST_CASE("dataset contract") {
  std::vector<Item> items = {{1, 0, {1.0, 2.0}, Split::train}, {1, 0, {1.0, 2.0}, Split::test}};
  CHECK_THROWS_AS(Dataset(items, 2), ContractError);
  items[1].id = 2;
  items[1].features = {1.0};
  CHECK_THROWS_AS(Dataset(items, 2), ContractError);
  items[1].features = {1.0, 1.0};
  items[1].split = Split::train;
  CHECK_THROWS_AS(Dataset(items, 2).validate_splits(), ContractError);
}

TEST_CASE("disjoint: 100 classes in 5 sessions") {
  const Dataset ds = pool(100, 10);
  Rng rng(1);
  const SessionPlan plan = disjoint_split(ds, 5, rng);
  check_partition(ds, plan, true);
  for (const auto& s : plan.sessions) CHECK(s.classes.size() == 20);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = i + 1; k < 5; ++k) {
      std::vector<ClassId> both;
      std::ranges::set_intersection(plan.sessions[i].classes, plan.sessions[k].classes, std::back_inserter(both));
      CHECK(both.empty());
    }
  }
  CHECK(plan.all_classes().size() == 100);
}

TEST_CASE("disjoint: uneven split and limits") {
  const Dataset ds = pool(10, 10);
  Rng rng(2);
  const SessionPlan plan = disjoint_split(ds, 3, rng);
  CHECK(plan.sessions[0].classes.size() == 4);
  CHECK(plan.sessions[1].classes.size() == 3);
  CHECK(plan.sessions[2].classes.size() == 3);
  check_partition(ds, plan, true);
  CHECK(disjoint_split(ds, 1, rng).sessions.front().classes.size() == 10);
  CHECK_THROWS_AS(disjoint_split(ds, 11, rng), ContractError);
}

TEST_CASE("plans are deterministic in the seed") {
  const Dataset ds = pool(20, 20);
  Rng a(7), b(7);
  const auto p = general_split(ds, 4, 4, 30, 5, a);
  const auto q = general_split(ds, 4, 4, 30, 5, b);
  for (std::size_t i = 0; i < p.sessions.size(); ++i) CHECK(p.sessions[i].allocated_ids == q.sessions[i].allocated_ids);
}

TEST_CASE("blurry: per-class counts are conserved at 90/10 and 70/30") {
  for (const auto& [classes, sessions, fraction] :
       std::vector<std::tuple<std::size_t, std::size_t, double>>{{100, 5, 0.9}, {200, 10, 0.7}}) {
    const Dataset ds = pool(classes, 100);
    Rng rng(3);
    const SessionPlan plan = blurry_split(ds, sessions, fraction, rng);
    check_partition(ds, plan, true);
    std::map<ClassId, std::vector<std::size_t>> per_session;
    for (const auto& s : plan.sessions) {
      CHECK(s.classes.size() == classes);
      for (ItemId id : s.allocated_ids) {
        auto& counts = per_session[ds.item(id).label];
        counts.resize(sessions);
        ++counts[s.index - 1];
      }
    }
    std::vector<std::size_t> majors_per_session(sessions);
    for (ClassId c : ds.classes()) {
      const auto& counts = per_session[c];
      const std::size_t n = ds.ids_of(c, Split::train).size();
      std::size_t sum = 0;
      for (std::size_t v : counts) sum += v;
      CHECK(sum == n);
      const auto major = std::ranges::max_element(counts);
      CHECK(*major == static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
      ++majors_per_session[static_cast<std::size_t>(major - counts.begin())];
      // Minor share spread evenly: session counts differ by at most one.
      std::vector<std::size_t> minors;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        if (k != static_cast<std::size_t>(major - counts.begin())) minors.push_back(counts[k]);
      }
      CHECK(*std::ranges::max_element(minors) - *std::ranges::min_element(minors) <= 1);
    }
    for (std::size_t m : majors_per_session) CHECK(m == classes / sessions);
  }
}

TEST_CASE("blurry: a fraction of one reduces to a disjoint item assignment") {
  const Dataset ds = pool(10, 20);
  Rng rng(4);
  const SessionPlan plan = blurry_split(ds, 5, 1.0, rng);
  std::map<ClassId, std::set<std::size_t>> where;
  for (const auto& s : plan.sessions) {
    for (ItemId id : s.allocated_ids) where[ds.item(id).label].insert(s.index);
  }
  for (const auto& [c, sessions] : where) CHECK(sessions.size() == 1);
}

TEST_CASE("general (20,20,10,5) on 100 classes") {
  const Dataset ds = pool(100, 100);
  audit_general(ds, 20, 20, 10, 5);
  const SessionPlan plan = general(ds, 20, 20, 10, 5);
  const std::size_t expected[] = {20, 40, 60, 80, 100};
  for (std::size_t j = 1; j <= 5; ++j) CHECK(plan.classes_up_to(j).size() == expected[j - 1]);
}

TEST_CASE("general (20,20,30,10) on 200 classes") { audit_general(pool(200, 100), 20, 20, 30, 10); }

TEST_CASE("general (4,2,30,3) on 10 classes") { audit_general(pool(10, 100), 4, 2, 30, 3); }

TEST_CASE("general (4,4,30,5) on 20 classes") { audit_general(pool(20, 100), 4, 4, 30, 5); }

TEST_CASE("general with M = 0 carries only new classes") {
  const Dataset ds = pool(10, 20);
  const SessionPlan plan = general(ds, 2, 2, 0, 5);
  for (const auto& s : plan.sessions) {
    CHECK(s.old_items == 0);
    CHECK(s.classes.size() == 2);
  }
  check_partition(ds, plan, true);
}

TEST_CASE("general errors") {
  const Dataset ds = pool(10, 20);
  Rng rng(1);
  CHECK_THROWS_AS(general_split(ds, 4, 4, 30, 3, rng), ContractError);
  // Tiny classes cannot feed a 90% old-class share.
  const Dataset tiny = pool(6, 5);
  try {
    general_split(tiny, 1, 1, 90, 6, rng);
    FAIL("expected an infeasible plan");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("session") != std::string::npos);
  }
}

TEST_CASE("validation: ten percent of 100-item classes") {
  const Dataset ds = pool(10, 125);  // 100 train items per class
  Rng rng(5);
  SessionPlan plan = disjoint_split(ds, 2, rng);
  sample_validation_queries(plan, {0.1, std::nullopt}, true, ds, rng);
  for (const auto& s : plan.sessions) {
    std::map<ClassId, std::size_t> per_class;
    for (ItemId id : s.validation_own) ++per_class[ds.item(id).label];
    for (ClassId c : s.classes) CHECK(per_class[c] == 10);
    CHECK(s.train_ids.size() == s.allocated_ids.size() - s.validation_own.size());
  }
  check_partition(ds, plan, true);
}

TEST_CASE("validation accumulates over sessions") {
  const Dataset ds = pool(12, 50);
  Rng rng(6);
  SessionPlan plan = disjoint_split(ds, 3, rng);
  sample_validation_queries(plan, {0.1, std::nullopt}, true, ds, rng);
  std::size_t running = 0;
  for (const auto& s : plan.sessions) {
    running += s.validation_own.size();
    CHECK(s.validation_ids.size() == running);
  }
}

TEST_CASE("validation: blurry draws one fixed set") {
  const Dataset ds = pool(10, 50);
  Rng rng(7);
  SessionPlan plan = blurry_split(ds, 5, 0.9, rng);
  sample_validation_queries(plan, {0.1, std::nullopt}, false, ds, rng);
  for (const auto& s : plan.sessions) CHECK(s.validation_ids == plan.sessions.front().validation_ids);
  CHECK(plan.sessions.front().validation_ids.size() == 40);
  check_partition(ds, plan, true);
}

TEST_CASE("validation: zero fraction and oversized requests") {
  const Dataset ds = pool(4, 10);
  Rng rng(8);
  SessionPlan plan = disjoint_split(ds, 2, rng);
  sample_validation_queries(plan, {0.0, std::nullopt}, true, ds, rng);
  for (const auto& s : plan.sessions) CHECK(s.validation_ids.empty());
  CHECK_THROWS_AS(sample_validation_queries(plan, {0.1, std::size_t{8}}, true, ds, rng), ContractError);
}
