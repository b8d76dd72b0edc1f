#include "cvs/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cvs/errors.hpp"

namespace cvs::ops {

namespace {

void accumulate(Tensor& into, const Tensor& delta) {
  auto dst = into.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " " + a.shape_string() + " vs " + b.shape_string());
  }
}

Tensor transposed(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
  return out;
}

}  // namespace

Var matmul(GradTape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Tensor out = kernels::matmul(av, bv);
  return tape.record("matmul", std::move(out), {a, b},
                     [a, b, at = transposed(av), bt = transposed(bv)](const Tensor& g,
                                                                      std::vector<Tensor>& grads) {
                       accumulate(grads[a.id], kernels::matmul(g, bt));
                       accumulate(grads[b.id], kernels::matmul(at, g));
                     });
}

Var add_row_bias(GradTape& tape, Var a, Var bias) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(bias);
  if (av.rank() != 2 || bv.size() != av.cols()) {
    throw DimensionError("add_row_bias " + av.shape_string() + " + " + bv.shape_string());
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return tape.record("add_row_bias", std::move(out), {a, bias},
                     [a, bias](const Tensor& g, std::vector<Tensor>& grads) {
                       accumulate(grads[a.id], g);
                       Tensor& gb = grads[bias.id];
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         auto row = g.row(r);
                         for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
                       }
                     });
}

Var relu(GradTape& tape, Var a) {
  Tensor out = tape.value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  Tensor mask = out;
  for (double& v : mask.data()) v = v > 0.0 ? 1.0 : 0.0;
  return tape.record("relu", std::move(out), {a},
                     [a, mask = std::move(mask)](const Tensor& g, std::vector<Tensor>& grads) {
                       Tensor& ga = grads[a.id];
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                     });
}

Var l2_normalize(GradTape& tape, Var v, double eps) {
  const Tensor& input = tape.value(v);
  if (input.size() == 0) throw DimensionError("l2_normalize of an empty tensor");
  Tensor out(input.shape());
  std::vector<double> norms(input.rows());
  for (std::size_t r = 0; r < input.rows(); ++r) {
    norms[r] = kernels::normalize_into(input.row(r), out.row(r), eps);
  }
  Tensor unit = out;
  return tape.record(
      "l2_normalize", std::move(out), {v},
      [v, eps, unit = std::move(unit), norms = std::move(norms)](const Tensor& g,
                                                                 std::vector<Tensor>& grads) {
        Tensor& gv = grads[v.id];
        for (std::size_t r = 0; r < unit.rows(); ++r) {
          auto u = unit.row(r);
          auto gr = g.row(r);
          auto dst = gv.row(r);
          if (norms[r] >= eps) {
            // (I - u u^T) g / ||v||
            const double ug = kernels::dot(u, gr);
            for (std::size_t i = 0; i < u.size(); ++i) dst[i] += (gr[i] - u[i] * ug) / norms[r];
          } else {
            for (std::size_t i = 0; i < u.size(); ++i) dst[i] += gr[i] / eps;
          }
        }
      });
}

Var transpose(GradTape& tape, Var a) {
  const Tensor& av = tape.value(a);
  if (av.rank() != 2) throw DimensionError("transpose of " + av.shape_string());
  return tape.record("transpose", transposed(av), {a},
                     [a](const Tensor& g, std::vector<Tensor>& grads) {
                       accumulate(grads[a.id], transposed(g));
                     });
}

Var scale(GradTape& tape, Var a, double factor) {
  Tensor out = tape.value(a);
  for (double& v : out.data()) v *= factor;
  return tape.record("scale", std::move(out), {a},
                     [a, factor](const Tensor& g, std::vector<Tensor>& grads) {
                       Tensor& ga = grads[a.id];
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                     });
}

Var add_scalar(GradTape& tape, Var a, double offset) {
  Tensor out = tape.value(a);
  for (double& v : out.data()) v += offset;
  return tape.record("add_scalar", std::move(out), {a},
                     [a](const Tensor& g, std::vector<Tensor>& grads) {
                       accumulate(grads[a.id], g);
                     });
}

Var add(GradTape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  Tensor out = tape.value(a);
  accumulate(out, tape.value(b));
  return tape.record("add", std::move(out), {a, b},
                     [a, b](const Tensor& g, std::vector<Tensor>& grads) {
                       accumulate(grads[a.id], g);
                       accumulate(grads[b.id], g);
                     });
}

Var sub(GradTape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "sub");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.record("sub", std::move(out), {a, b},
                     [a, b](const Tensor& g, std::vector<Tensor>& grads) {
                       accumulate(grads[a.id], g);
                       Tensor& gb = grads[b.id];
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                     });
}

Var sum(GradTape& tape, Var a) {
  double s = 0.0;
  for (double v : tape.value(a).data()) s += v;
  return tape.record("sum", Tensor::scalar(s), {a},
                     [a](const Tensor& g, std::vector<Tensor>& grads) {
                       for (double& v : grads[a.id].data()) v += g[0];
                     });
}

Var squared_norm(GradTape& tape, Var a) {
  const Tensor& av = tape.value(a);
  double s = 0.0;
  for (double v : av.data()) s += v * v;
  return tape.record("squared_norm", Tensor::scalar(s), {a},
                     [a, av](const Tensor& g, std::vector<Tensor>& grads) {
                       Tensor& ga = grads[a.id];
                       for (std::size_t i = 0; i < av.size(); ++i) ga[i] += 2.0 * av[i] * g[0];
                     });
}

Var row_squared_distances(GradTape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_same_shape(av, bv, "row_squared_distances");
  const std::size_t m = av.rows();
  Tensor out({m});
  Tensor diff(av.shape());
  for (std::size_t r = 0; r < m; ++r) {
    auto ar = av.row(r);
    auto br = bv.row(r);
    auto dr = diff.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < ar.size(); ++c) {
      dr[c] = ar[c] - br[c];
      s += dr[c] * dr[c];
    }
    out[r] = s;
  }
  return tape.record("row_squared_distances", std::move(out), {a, b},
                     [a, b, diff = std::move(diff)](const Tensor& g, std::vector<Tensor>& grads) {
                       Tensor& ga = grads[a.id];
                       Tensor& gb = grads[b.id];
                       for (std::size_t r = 0; r < diff.rows(); ++r) {
                         auto dr = diff.row(r);
                         auto gar = ga.row(r);
                         auto gbr = gb.row(r);
                         for (std::size_t c = 0; c < dr.size(); ++c) {
                           const double d = 2.0 * dr[c] * g[r];
                           gar[c] += d;
                           gbr[c] -= d;
                         }
                       }
                     });
}

Var gather_rows(GradTape& tape, Var a, std::vector<std::size_t> rows) {
  const Tensor& av = tape.value(a);
  if (av.rank() != 2) throw DimensionError("gather_rows of " + av.shape_string());
  Tensor out({rows.size(), av.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw DimensionError("gather_rows index " + std::to_string(rows[i]) + " out of " +
                           av.shape_string());
    }
    std::ranges::copy(av.row(rows[i]), out.row(i).begin());
  }
  return tape.record("gather_rows", std::move(out), {a},
                     [a, rows = std::move(rows)](const Tensor& g, std::vector<Tensor>& grads) {
                       Tensor& ga = grads[a.id];
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                         auto src = g.row(i);
                         auto dst = ga.row(rows[i]);
                         for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                       }
                     });
}

Var softmax_cross_entropy(GradTape& tape, Var logits, std::vector<std::size_t> targets) {
  const Tensor& lv = tape.value(logits);
  if (lv.rank() != 2 || lv.rows() != targets.size() || lv.rows() == 0) {
    throw DimensionError("softmax_cross_entropy logits " + lv.shape_string() + " with " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t m = lv.rows();
  Tensor probs(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] >= lv.cols()) {
      throw DimensionError("softmax_cross_entropy target " + std::to_string(targets[r]) +
                           " out of " + std::to_string(lv.cols()) + " classes");
    }
    auto row = lv.row(r);
    const double peak = *std::ranges::max_element(row);
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - peak);
    const double log_denom = std::log(denom);
    auto pr = probs.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) pr[c] = std::exp(row[c] - peak - log_denom);
    total += -(row[targets[r]] - peak - log_denom);
  }
  return tape.record("softmax_cross_entropy", Tensor::scalar(total / static_cast<double>(m)),
                     {logits},
                     [logits, probs = std::move(probs), targets = std::move(targets)](
                         const Tensor& g, std::vector<Tensor>& grads) {
                       Tensor& gl = grads[logits.id];
                       const double w = g[0] / static_cast<double>(targets.size());
                       for (std::size_t r = 0; r < probs.rows(); ++r) {
                         auto pr = probs.row(r);
                         auto dst = gl.row(r);
                         for (std::size_t c = 0; c < pr.size(); ++c) {
                           dst[c] += w * (pr[c] - (c == targets[r] ? 1.0 : 0.0));
                         }
                       }
                     });
}

}  // namespace cvs::ops
