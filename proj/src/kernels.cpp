#include "cvs/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "cvs/errors.hpp"

namespace cvs::kernels {

namespace {

void check_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul " + a.shape_string() + " x " + b.shape_string());
  }
}

void check_similarity(const Tensor& queries, const Tensor& gallery) {
  if (queries.cols() != gallery.cols()) {
    throw DimensionError("similarity " + queries.shape_string() + " vs " + gallery.shape_string());
  }
}

void similarity_rows(const Tensor& queries, const Tensor& gallery, Tensor& out, std::size_t q) {
  const auto query = queries.row(q);
  auto dst = out.row(q);
  for (std::size_t g = 0; g < gallery.rows(); ++g) dst[g] = dot(query, gallery.row(g));
}

}  // namespace

void matmul_rows(const Tensor& a, const Tensor& b, Tensor& out, std::size_t row_begin,
                 std::size_t row_end) {
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  const double* bd = b.data().data();
  for (std::size_t i = row_begin; i < row_end; ++i) {
    const double* arow = a.data().data() + i * inner;
    double* orow = out.data().data() + i * n;
    std::fill(orow, orow + n, 0.0);
    for (std::size_t p = 0; p < inner; ++p) {
      const double aip = arow[p];
      const double* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul(a, b);
  Tensor out({a.rows(), b.cols()});
  matmul_rows(a, b, out, 0, a.rows());
  return out;
}

Tensor matmul_parallel(const Tensor& a, const Tensor& b) {
  check_matmul(a, b);
  Tensor out({a.rows(), b.cols()});
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    matmul_rows(a, b, out, static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1);
  }
  return out;
}

double normalize_into(std::span<const double> in, std::span<double> out, double eps) {
  double sq = 0.0;
  for (double v : in) sq += v * v;
  const double norm = std::sqrt(sq);
  const double denom = std::max(norm, eps);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] / denom;
  return norm;
}

Tensor normalize_rows(const Tensor& a, double eps) {
  Tensor out(a.shape());
  for (std::size_t r = 0; r < a.rows(); ++r) normalize_into(a.row(r), out.row(r), eps);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

Tensor similarity_matrix(const Tensor& queries, const Tensor& gallery) {
  check_similarity(queries, gallery);
  Tensor out({queries.rows(), gallery.rows()});
  for (std::size_t q = 0; q < queries.rows(); ++q) similarity_rows(queries, gallery, out, q);
  return out;
}

Tensor similarity_matrix_parallel(const Tensor& queries, const Tensor& gallery) {
  check_similarity(queries, gallery);
  Tensor out({queries.rows(), gallery.rows()});
  const auto rows = static_cast<std::ptrdiff_t>(queries.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t q = 0; q < rows; ++q) {
    similarity_rows(queries, gallery, out, static_cast<std::size_t>(q));
  }
  return out;
}

}  // namespace cvs::kernels
