// Times the OpenMP kernels against their serial references and checks that
// both produce identical bytes.
#include <chrono>
#include <cstdio>
#include <functional>
#include <omp.h>

#include "cvs/gallery.hpp"
#include "cvs/kernels.hpp"
#include "cvs/model.hpp"
#include "cvs/rng.hpp"

namespace {

cvs::Tensor random_matrix(std::size_t rows, std::size_t cols, cvs::Rng& rng) {
  cvs::Tensor t({rows, cols});
  for (double& v : t.data()) v = rng.normal();
  return t;
}

double best_ms(const std::function<void()>& fn, int repeats = 5) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void report(const char* name, double serial, double parallel, bool identical) {
  std::printf("%-22s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %s\n", name, serial, parallel,
              serial / parallel, identical ? "identical" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  cvs::Rng rng(7);
  bool ok = true;

  {
    const auto a = random_matrix(2048, 128, rng);
    const auto b = random_matrix(128, 128, rng);
    cvs::Tensor s, p;
    const double ts = best_ms([&] { s = cvs::kernels::matmul(a, b); });
    const double tp = best_ms([&] { p = cvs::kernels::matmul_parallel(a, b); });
    report("matmul 2048x128x128", ts, tp, s.identical(p));
    ok = ok && s.identical(p);
  }
  {
    const auto q = cvs::kernels::normalize_rows(random_matrix(1000, 32, rng));
    const auto g = cvs::kernels::normalize_rows(random_matrix(20000, 32, rng));
    cvs::Tensor s, p;
    const double ts = best_ms([&] { s = cvs::kernels::similarity_matrix(q, g); });
    const double tp = best_ms([&] { p = cvs::kernels::similarity_matrix_parallel(q, g); });
    report("similarity 1000x20000", ts, tp, s.identical(p));
    ok = ok && s.identical(p);
  }
  {
    cvs::Hyperparameters h;
    h.hidden_dim = 256;
    h.embed_dim = 64;
    const cvs::ModelState model(64, h);
    const auto x = random_matrix(20000, 64, rng);
    cvs::Tensor s, p;
    const double ts = best_ms([&] { s = cvs::embed_batch_reference(model, x); });
    const double tp = best_ms([&] { p = cvs::embed_batch(model, x); });
    report("embed 20000x64", ts, tp, s.identical(p));
    ok = ok && s.identical(p);
  }
  {
    const auto g = cvs::kernels::normalize_rows(random_matrix(10000, 32, rng));
    const auto q = random_matrix(1000, 32, rng);
    std::vector<cvs::ClassId> gl(g.rows()), ql(q.rows());
    for (auto& l : gl) l = static_cast<cvs::ClassId>(rng.index(50));
    for (auto& l : ql) l = static_cast<cvs::ClassId>(rng.index(50));
    const std::size_t ks[] = {1, 2, 4};
    std::vector<double> s, p;
    const double ts = best_ms([&] { s = cvs::recall_at_ks_reference(g, gl, q, ql, ks); }, 3);
    const double tp = best_ms([&] { p = cvs::recall_at_ks(g, gl, q, ql, ks); }, 3);
    report("recall@{1,2,4} 1000q", ts, tp, s == p);
    ok = ok && s == p;
  }
  return ok ? 0 : 1;
}
