#include "cvs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>

#include "cvs/kernels.hpp"
#include "cvs/losses.hpp"
#include "cvs/rng.hpp"

namespace cvs {

namespace {

constexpr double kKinkClearance = 1e-3;

struct Instance {
  ModelState model;
  ModelSnapshot teacher;
  BatchView batch;
  CentroidStore centroids;
  ClassIndexSets sets;
};

Tensor& parameter_at(ModelParameters& p, std::size_t i) {
  switch (i) {
    case 0: return p.w1;
    case 1: return p.b1;
    case 2: return p.w2;
    case 3: return p.b2;
    default: return p.classifier;
  }
}

std::size_t draw_between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.index(hi - lo + 1));
}

void add_noise(Tensor& t, Rng& rng, double scale) {
  for (double& v : t.data()) v += scale * rng.normal();
}

// True when no ReLU input, hinge argument or hardest-negative choice lies
// within kKinkClearance of a switch, so a 1e-5 step cannot cross one.
bool smooth(const Instance& in, double margin) {
  const auto& p = in.model.parameters();
  const Tensor pre = kernels::matmul(in.batch.inputs, p.w1);
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    for (std::size_t c = 0; c < pre.cols(); ++c) {
      if (std::abs(pre.at(r, c) + p.b1[c]) < kKinkClearance) return false;
    }
  }
  const Tensor student = embed_batch(in.model, in.batch.inputs);
  const Tensor teacher = in.teacher.embed_batch(in.batch.inputs);
  for (std::size_t a = 0; a < in.batch.size(); ++a) {
    std::vector<double> distances;
    for (std::size_t k = 0; k < in.batch.size(); ++k) {
      if (in.batch.labels[k] != in.batch.labels[a]) {
        distances.push_back(kernels::squared_distance(student.row(a), teacher.row(k)));
      }
    }
    if (distances.empty()) continue;
    std::ranges::sort(distances);
    if (distances.size() > 1 && distances[1] - distances[0] < kKinkClearance) return false;
    const double d_pos = kernels::squared_distance(student.row(a), teacher.row(a));
    if (std::abs(d_pos - distances[0] + margin) < kKinkClearance) return false;
  }
  return true;
}

Instance draw_instance(Rng& rng, const GradCheckConfig& config) {
  Hyperparameters h;
  h.alpha = config.alpha;
  h.beta = config.beta;
  h.margin = config.margin;
  h.temperature = config.temperature;
  h.embed_dim = draw_between(rng, 2, std::max<std::size_t>(2, config.max_embed_dim));
  h.hidden_dim = draw_between(rng, 3, 6);
  h.seed = rng.index(UINT64_MAX);
  const std::size_t input_dim = draw_between(rng, 2, 5);
  const std::size_t classes = draw_between(rng, 2, 4);
  const std::size_t n = draw_between(rng, 3, std::max<std::size_t>(3, config.max_batch));
  h.batch_size = n;

  ModelState model(input_dim, h);
  std::vector<ClassId> ids(classes);
  for (std::size_t c = 0; c < classes; ++c) ids[c] = static_cast<ClassId>(c);
  model.register_classes(ids);
  add_noise(model.parameters().b1, rng, 0.3);
  add_noise(model.parameters().b2, rng, 0.3);

  ModelState teacher_state = model;
  for (std::size_t i = 0; i < 5; ++i) add_noise(parameter_at(teacher_state.parameters(), i), rng, 0.3);

  std::vector<std::vector<double>> rows(n, std::vector<double>(input_dim));
  std::vector<ClassId> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (double& v : rows[r]) v = rng.normal();
    labels[r] = static_cast<ClassId>(r < 2 ? r % classes : rng.index(classes));
  }
  const std::size_t num_current = draw_between(rng, 1, n - 1);
  std::vector<LabeledInput> current, replayed;
  for (std::size_t r = 0; r < n; ++r) {
    (r < num_current ? current : replayed).push_back({rows[r], labels[r]});
  }

  CentroidStore centroids;
  std::map<ClassId, std::vector<Tensor>> block;
  std::set<ClassId> previous;
  for (ClassId c : ids) {
    std::vector<double> v(h.embed_dim);
    for (double& x : v) x = rng.normal();
    kernels::normalize_into(v, v);
    block[c].push_back(Tensor::vector(v));
    if (c == 0 || rng.uniform() < 0.6) previous.insert(c);
  }
  centroids.update(block, 1);
  std::set<ClassId> current_classes(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(num_current));

  BatchView batch = make_batch(current, replayed);
  return {std::move(model), snapshot(teacher_state, 1), std::move(batch), std::move(centroids),
          make_class_index_sets(previous, current_classes)};
}

// Largest per-tensor relative error ||a - n|| / (||a|| + ||n||). Tensors whose
// gradients both vanish (norm sum below 1e-7) are compared absolutely.
double relative_error(const Instance& in, const Gradients& analytic,
                      const std::function<double(const ModelState&)>& f, double h) {
  double worst = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const Tensor& a = analytic.at(i);
    double diff = 0.0, na = 0.0, nn = 0.0;
    ModelState probe = in.model;
    Tensor& p = parameter_at(probe.parameters(), i);
    for (std::size_t e = 0; e < p.size(); ++e) {
      const double original = p[e];
      p[e] = original + h;
      const double up = f(probe);
      p[e] = original - h;
      const double down = f(probe);
      p[e] = original;
      const double numeric = (up - down) / (2.0 * h);
      diff += (a[e] - numeric) * (a[e] - numeric);
      na += a[e] * a[e];
      nn += numeric * numeric;
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    const double err = denom < 1e-7 ? std::sqrt(diff) : std::sqrt(diff) / denom;
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

bool GradCheckReport::passed() const {
  return !terms.empty() && std::ranges::all_of(terms, [](const TermCheck& t) { return t.passed; });
}

GradCheckReport grad_check_suite(const GradCheckConfig& config) {
  GradCheckReport report;
  const bool check_m = config.alpha > 0.0;
  const bool check_d = config.beta > 0.0;
  TermCheck c{"l_c"}, m{"l_m"}, d{"l_d"}, total{"total"};
  const CoherenceOptions options;
  const double h = config.step;

  Rng rng(derive_seed(config.seed, 0x6772));
  std::size_t accepted = 0;
  while (accepted < config.instances) {
    Instance in = draw_instance(rng, config);
    if (!smooth(in, config.margin)) {
      ++report.rejected_instances;
      continue;
    }
    ++accepted;
    const Hyperparameters& hyper = in.model.hyper();

    {
      StudentPass pass = forward_student(in.model, in.batch);
      const Var term = intra_discrimination_term(pass, in.model, in.batch);
      c.max_relative_error = std::max(
          c.max_relative_error,
          relative_error(in, backward(pass.tape, term),
                         [&](const ModelState& s) { return loss_intra_discrimination(s, in.batch); }, h));
      ++c.instances;
    }
    if (check_m) {
      StudentPass pass = forward_student(in.model, in.batch);
      const Tensor teacher = in.teacher.embed_batch(in.batch.inputs);
      const Var term = neighbor_model_coherence_term(pass, teacher, in.batch, hyper.margin, options);
      m.max_relative_error = std::max(
          m.max_relative_error,
          relative_error(in, backward(pass.tape, term),
                         [&](const ModelState& s) {
                           return loss_neighbor_model_coherence(s, in.teacher, in.batch, hyper.margin, options);
                         },
                         h));
      ++m.instances;
    }
    if (check_d) {
      StudentPass pass = forward_student(in.model, in.batch);
      const auto terms = inter_data_coherence_terms(pass, in.batch, in.centroids, in.sets);
      d.max_relative_error = std::max(
          d.max_relative_error,
          relative_error(in, backward(pass.tape, terms.total),
                         [&](const ModelState& s) {
                           return loss_inter_data_coherence(s, in.batch, in.centroids, in.sets).total;
                         },
                         h));
      ++d.instances;
    }
    {
      const auto eval = total_loss(in.model, &in.teacher, in.batch, &in.centroids, in.sets, hyper, 2);
      total.max_relative_error = std::max(
          total.max_relative_error,
          relative_error(in, eval.gradients(),
                         [&](const ModelState& s) {
                           return total_loss(s, &in.teacher, in.batch, &in.centroids, in.sets, hyper, 2)
                               .report.total;
                         },
                         h));
      ++total.instances;
    }
  }

  for (TermCheck* t : {&c, &m, &d, &total}) {
    if (t->instances == 0) continue;
    t->passed = t->max_relative_error < config.tolerance;
    report.terms.push_back(*t);
  }
  return report;
}

}  // namespace cvs
