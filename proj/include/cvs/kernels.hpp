#pragma once

#include <cstddef>
#include <span>

#include "cvs/tensor.hpp"

// Forward kernels shared by the gradient tape and by tape-free inference.
// Every kernel processes rows independently with a fixed summation order, so
// the OpenMP variants produce bit-identical output to the serial reference.
namespace cvs::kernels {

inline constexpr double kNormEps = 1e-12;

/// out[row_begin:row_end) = a[row_begin:row_end) * b. `out` must be pre-sized.
void matmul_rows(const Tensor& a, const Tensor& b, Tensor& out, std::size_t row_begin,
                 std::size_t row_end);

/// Serial reference matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Row-parallel matrix product.
Tensor matmul_parallel(const Tensor& a, const Tensor& b);

/// Writes in / max(||in||, eps) into out and returns ||in||.
double normalize_into(std::span<const double> in, std::span<double> out, double eps = kNormEps);

/// Row-wise l2 normalization of a matrix (a vector is one row).
Tensor normalize_rows(const Tensor& a, double eps = kNormEps);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);

/// Dense query-by-gallery dot products, serial reference.
Tensor similarity_matrix(const Tensor& queries, const Tensor& gallery);

/// Dense query-by-gallery dot products, parallel over queries.
Tensor similarity_matrix_parallel(const Tensor& queries, const Tensor& gallery);

}  // namespace cvs::kernels
