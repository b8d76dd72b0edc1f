#include <doctest.h>

#include <cmath>

#include "cvs/errors.hpp"
#include "cvs/kernels.hpp"
#include "cvs/losses.hpp"
#include "cvs/rng.hpp"

using namespace cvs;

namespace {

constexpr double kOffset = 2.0;

// A model whose embedding is normalize(x W) for unit-scale x: the hidden layer
// is x + offset (the ReLU never clips) and the output bias removes the offset.
ModelState linear_model(const std::vector<double>& w, std::size_t dim, double temperature = 0.05,
                        std::size_t classes = 0) {
  Hyperparameters h;
  h.embed_dim = dim;
  h.hidden_dim = dim;
  h.temperature = temperature;
  ModelParameters p;
  p.w1 = Tensor({dim, dim});
  for (std::size_t i = 0; i < dim; ++i) p.w1.at(i, i) = 1.0;
  p.b1 = Tensor({dim}, std::vector<double>(dim, kOffset));
  p.w2 = Tensor({dim, dim}, w);
  p.b2 = Tensor({dim});
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t r = 0; r < dim; ++r) p.b2[c] -= kOffset * p.w2.at(r, c);
  }
  p.classifier = Tensor({classes, dim});
  std::vector<ClassId> registry;
  for (std::size_t k = 0; k < classes; ++k) registry.push_back(static_cast<ClassId>(k));
  return ModelState(h, std::move(p), registry);
}

std::vector<double> identity(std::size_t dim) {
  std::vector<double> w(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = 1.0;
  return w;
}

BatchView batch_of(const std::vector<std::vector<double>>& xs, const std::vector<ClassId>& labels,
                   std::size_t num_current) {
  std::vector<LabeledInput> current, replayed;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    (i < num_current ? current : replayed).push_back({xs[i], labels[i]});
  }
  return make_batch(current, replayed);
}

void set_classifier(ModelState& m, const std::vector<double>& rows) {
  m.parameters().classifier = Tensor(m.parameters().classifier.shape(), rows);
}

const std::vector<std::vector<double>> kCompass = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
const std::vector<ClassId> kCompassLabels = {0, 1, 0, 1};
// Row-vector rotation by 90 degrees: (x, y) -> (-y, x).
const std::vector<double> kRotate = {0, 1, -1, 0};

}  // namespace

TEST_CASE("a batch needs two items") {
  const std::vector<double> x = {1.0, 0.0};
  const LabeledInput one[] = {{x, 0}};
  CHECK_THROWS_AS(make_batch(one, {}), ContractError);
}

TEST_CASE("classification term: two classes at T = 1") {
  ModelState m = linear_model(identity(2), 2, 1.0, 2);
  set_classifier(m, {1, 0, 0, 1});
  const BatchView b = batch_of({{1, 0}, {0, 1}}, {0, 1}, 2);
  CHECK(loss_intra_discrimination(m, b) ==
        doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));
  CHECK(loss_intra_discrimination(m, b) == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("classification term: equal logits give ln K") {
  ModelState m = linear_model(identity(3), 3, 0.05, 3);
  set_classifier(m, {1, 0, 0, 0, 1, 0, -1, 0, 0});
  const BatchView b = batch_of({{0, 0, 1}, {0, 0, -1}}, {2, 0}, 2);
  CHECK(std::abs(loss_intra_discrimination(m, b) - std::log(3.0)) < 1e-12);
}

TEST_CASE("classification term: classifier rows are normalized before use") {
  ModelState m = linear_model(identity(2), 2, 1.0, 2);
  set_classifier(m, {7, 0, 0, 0.25});
  const BatchView b = batch_of({{1, 0}, {0, 1}}, {0, 1}, 2);
  CHECK(std::abs(loss_intra_discrimination(m, b) - std::log(1.0 + std::exp(-1.0))) < 1e-12);
}

TEST_CASE("classification term rejects unregistered labels") {
  ModelState m = linear_model(identity(2), 2, 1.0, 2);
  const BatchView b = batch_of({{1, 0}, {0, 1}}, {0, 5}, 2);
  CHECK_THROWS_AS(loss_intra_discrimination(m, b), ContractError);
}

TEST_CASE("hardest negative mining") {
  const std::vector<double> anchor = {0.0, 0.0};
  const ClassId one_class[] = {1};
  CHECK(mine_hardest_negative(anchor, Tensor::matrix(1, 2, {3, 0}), one_class, 0) == 0u);
  // Squared distances 0.5 and 0.1.
  const Tensor two = Tensor::matrix(3, 2, {0, 0, std::sqrt(0.5), 0, 0, std::sqrt(0.1)});
  const ClassId classes[] = {0, 1, 2};
  CHECK(mine_hardest_negative(anchor, two, classes, 0) == 2u);
  const ClassId same[] = {0, 0, 0};
  CHECK_FALSE(mine_hardest_negative(anchor, two, same, 0).has_value());
  const Tensor tie = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const ClassId tie_classes[] = {1, 1};
  CHECK(mine_hardest_negative(anchor, tie, tie_classes, 0) == 0u);
}

TEST_CASE("hardest negative mining matches an exhaustive scan") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor cand({8, 3});
    for (double& v : cand.data()) v = rng.normal();
    std::vector<ClassId> classes(8);
    for (auto& c : classes) c = static_cast<ClassId>(rng.index(3));
    std::vector<double> anchor(3);
    for (double& v : anchor) v = rng.normal();
    const ClassId anchor_class = static_cast<ClassId>(rng.index(3));
    std::optional<std::size_t> expected;
    double best = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      if (classes[k] == anchor_class) continue;
      double d = 0;
      for (std::size_t c = 0; c < 3; ++c) d += (anchor[c] - cand.at(k, c)) * (anchor[c] - cand.at(k, c));
      if (!expected || d < best) expected = k, best = d;
    }
    CHECK(mine_hardest_negative(anchor, cand, classes, anchor_class) == expected);
  }
}

TEST_CASE("distillation term: identical models with distant negatives give zero") {
  const ModelState m = linear_model(identity(2), 2);
  const ModelSnapshot teacher = snapshot(m, 1);
  const BatchView b = batch_of({{1, 0}, {0, 1}}, {0, 1}, 2);
  CHECK(loss_neighbor_model_coherence(m, teacher, b, 0.1) == 0.0);
}

TEST_CASE("distillation term: both distances zero leave the margin") {
  const ModelState m = linear_model(identity(2), 2);
  const ModelSnapshot teacher = snapshot(m, 1);
  const BatchView b = batch_of({{0.6, 0.8}, {0.6, 0.8}}, {0, 1}, 2);
  // Two anchors each contribute m, divided by n = 2.
  CHECK(std::abs(loss_neighbor_model_coherence(m, teacher, b, 0.1) - 0.1) < 1e-12);
}

TEST_CASE("distillation term: four-sample batch by hand") {
  // Student embeds the compass points as given; the teacher rotates them by
  // 90 degrees. Every anchor has d(a, a) = 2 and a hardest negative at
  // distance 0, so each hinge is 2 + 0.1.
  const ModelState student = linear_model(identity(2), 2);
  const ModelSnapshot teacher = snapshot(linear_model(kRotate, 2), 1);
  const BatchView all_current = batch_of(kCompass, kCompassLabels, 4);
  CHECK(std::abs(loss_neighbor_model_coherence(student, teacher, all_current, 0.1) - 8.4 / 4) < 1e-12);

  const BatchView half_replayed = batch_of(kCompass, kCompassLabels, 2);
  CHECK(std::abs(loss_neighbor_model_coherence(student, teacher, half_replayed, 0.1) - 2.1) < 1e-12);
  // Anchors 0 and 1 only.
  CHECK(std::abs(loss_neighbor_model_coherence(student, teacher, half_replayed, 0.1, {true, false}) - 4.2 / 4) <
        1e-12);
  // Negatives from rows 0 and 1 only: anchors 0 and 3 then meet a negative at
  // distance 4 and their hinges vanish.
  CHECK(std::abs(loss_neighbor_model_coherence(student, teacher, half_replayed, 0.1, {false, true}) - 4.2 / 4) <
        1e-12);
}

TEST_CASE("distillation term: anchors without a negative are skipped") {
  const ModelState m = linear_model(identity(2), 2);
  const BatchView b = batch_of({{1, 0}, {0, 1}}, {0, 0}, 2);
  StudentPass pass = forward_student(m, b);
  std::size_t triplets = 99;
  const Var l = neighbor_model_coherence_term(pass, snapshot(m, 1).embed_batch(b.inputs), b, 0.1, {}, &triplets);
  CHECK(triplets == 0);
  CHECK(pass.tape.value(l).item() == 0.0);
}

TEST_CASE("coherence term: perfect coherence is zero") {
  const ModelState m = linear_model(identity(2), 2);
  CentroidStore store;
  store.update({{0, {Tensor::vector({1, 0})}}, {1, {Tensor::vector({0, 1})}}}, 1);
  const BatchView b = batch_of({{1, 0}, {0, 1}}, {0, 1}, 1);
  const auto v = loss_inter_data_coherence(m, b, store, make_class_index_sets({0, 1}, {0}));
  CHECK(v.inner == 0.0);
  CHECK(v.outer == 0.0);
  CHECK(v.total == 0.0);
}

TEST_CASE("coherence term: empty pi and no replay") {
  const ModelState m = linear_model(identity(2), 2);
  CentroidStore store;
  store.update({{0, {Tensor::vector({0, 1})}}}, 1);
  const BatchView b = batch_of({{1, 0}, {0, 1}}, {2, 3}, 2);
  const auto v = loss_inter_data_coherence(m, b, store, make_class_index_sets({0}, {2, 3}));
  CHECK(v.inner == 0.0);
  CHECK(v.total == 0.0);
}

TEST_CASE("coherence term: three-item batch by hand") {
  const ModelState m = linear_model(identity(2), 2);
  CentroidStore store;
  store.update({{0, {Tensor::vector({0, 1})}}, {1, {Tensor::vector({0, 1})}}, {2, {Tensor::vector({1, 0})}}}, 1);
  // Rows 0, 1 are current (classes 0, 1); row 2 is a replayed class-2 item.
  const BatchView b = batch_of({{1, 0}, {0, 1}, {-1, 0}}, {0, 1, 2}, 2);
  const ClassIndexSets sets = make_class_index_sets({0, 2}, {0, 1});
  CHECK(sets.pi == std::set<ClassId>{0});
  CHECK(sets.gamma == std::set<ClassId>{0, 2});
  const auto v = loss_inter_data_coherence(m, b, store, sets);
  CHECK(std::abs(v.inner - 2.0) < 1e-12);  // ||(1,0) - (0,1)||^2
  CHECK(std::abs(v.outer - 4.0) < 1e-12);  // ||(-1,0) - (1,0)||^2
  CHECK(std::abs(v.total - 2.0) < 1e-12);  // (2 + 4) / 3
}

TEST_CASE("coherence term: a referenced class without a centroid is an error") {
  const ModelState m = linear_model(identity(2), 2);
  CentroidStore store;
  const BatchView b = batch_of({{1, 0}, {0, 1}}, {0, 1}, 2);
  CHECK_THROWS_AS(loss_inter_data_coherence(m, b, store, make_class_index_sets({0}, {0, 1})), ContractError);
}

TEST_CASE("total objective") {
  ModelState student = linear_model(identity(2), 2, 0.05, 2);
  set_classifier(student, {1, 0, 0, 1});
  const ModelSnapshot teacher = snapshot(linear_model(kRotate, 2, 0.05, 2), 1);
  CentroidStore store;
  store.update({{0, {Tensor::vector({0, 1})}}, {1, {Tensor::vector({1, 0})}}}, 1);
  const BatchView b = batch_of(kCompass, kCompassLabels, 2);
  const ClassIndexSets sets = make_class_index_sets({0, 1}, {0, 1});
  Hyperparameters h = student.hyper();

  SUBCASE("session 1 is the classification term alone") {
    const auto r = total_loss(student, &teacher, b, &store, sets, h, 1).report;
    CHECK(r.total == r.l_c);
    CHECK(r.l_m == 0.0);
    CHECK(r.l_d == 0.0);
  }
  SUBCASE("zero weights leave the classification term") {
    h.alpha = 0.0;
    h.beta = 0.0;
    const auto r = total_loss(student, &teacher, b, &store, sets, h, 2).report;
    CHECK(r.total == r.l_c);
  }
  SUBCASE("weighted sum with the default weights") {
    const auto r = total_loss(student, &teacher, b, &store, sets, h, 2).report;
    CHECK(h.alpha == 10.0);
    CHECK(h.beta == 1.0);
    CHECK(std::abs(r.l_m - 2.1) < 1e-12);
    // Inner: rows 0, 1 against centroids (0,1), (1,0): 2 + 2. Outer: rows 2, 3
    // against the same centroids: 4 + 4. Divided by n = 4.
    CHECK(std::abs(r.l_d_inner - 4.0) < 1e-12);
    CHECK(std::abs(r.l_d_outer - 4.0) < 1e-12);
    CHECK(std::abs(r.l_d - 2.0) < 1e-12);
    CHECK(std::abs(r.total - (r.l_c + 10.0 * 2.1 + 2.0)) < 1e-12);
    CHECK(r.triplets == 4);
    CHECK(r.inner_terms == 2);
    CHECK(r.outer_terms == 2);
  }
  SUBCASE("toggles drop terms") {
    const auto r = total_loss(student, &teacher, b, &store, sets, h, 2, {false, true}).report;
    CHECK(r.l_m == 0.0);
    CHECK(std::abs(r.total - (r.l_c + r.l_d)) < 1e-12);
  }
}

TEST_CASE("weighted sum 0.5 + 10 * 0.02 + 1 * 0.3") {
  // Components chosen by construction: classification 0.5, distillation 0.02,
  // coherence 0.3 combine to 1.0 under the default weights.
  const Hyperparameters h;
  CHECK(std::abs(0.5 + h.alpha * 0.02 + h.beta * 0.3 - 1.0) < 1e-12);
}

TEST_CASE("report invariant on random batches") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Hyperparameters h;
    h.embed_dim = 3;
    h.hidden_dim = 5;
    h.seed = trial;
    ModelState m(4, h);
    const ClassId ids[] = {0, 1, 2};
    m.register_classes(ids);
    ModelState t = m;
    for (double& v : t.parameters().w2.data()) v += 0.2 * rng.normal();
    const ModelSnapshot teacher = snapshot(t, 1);
    std::vector<std::vector<double>> xs(6, std::vector<double>(4));
    std::vector<ClassId> labels(6);
    for (std::size_t i = 0; i < 6; ++i) {
      for (double& v : xs[i]) v = rng.normal();
      labels[i] = static_cast<ClassId>(rng.index(3));
    }
    CentroidStore store;
    store.update({{0, {Tensor::vector({1, 0, 0})}}, {1, {Tensor::vector({0, 1, 0})}}, {2, {Tensor::vector({0, 0, 1})}}},
                 1);
    const BatchView b = batch_of(xs, labels, 4);
    const auto r = total_loss(m, &teacher, b, &store, make_class_index_sets({0, 1, 2}, {0, 1}), h, 2).report;
    CHECK(std::abs(r.total - (r.l_c + h.alpha * r.l_m + h.beta * r.l_d)) < 1e-12);
    CHECK(r.l_c == doctest::Approx(loss_intra_discrimination(m, b)).epsilon(1e-15));
  }
}
