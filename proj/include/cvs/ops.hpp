#pragma once

#include <cstddef>
#include <vector>

#include "cvs/kernels.hpp"
#include "cvs/tape.hpp"

// Differentiable primitives. Each op computes its forward value with the
// shared kernels and records an exact analytic backward on the tape.
namespace cvs::ops {

/// [m x k] * [k x n]. Throws DimensionError on inner-dimension mismatch.
Var matmul(GradTape& tape, Var a, Var b);

/// Adds a length-n bias to every row of an [m x n] matrix.
Var add_row_bias(GradTape& tape, Var a, Var bias);

/// Elementwise max(0, x); the subgradient at 0 is 0.
Var relu(GradTape& tape, Var a);

/// v / max(||v||, eps), applied per row for matrices.
Var l2_normalize(GradTape& tape, Var v, double eps = kernels::kNormEps);

Var transpose(GradTape& tape, Var a);
Var scale(GradTape& tape, Var a, double factor);
Var add_scalar(GradTape& tape, Var a, double offset);
Var add(GradTape& tape, Var a, Var b);
Var sub(GradTape& tape, Var a, Var b);

/// Sum of all elements, as a scalar.
Var sum(GradTape& tape, Var a);

/// Sum of squares of all elements, as a scalar.
Var squared_norm(GradTape& tape, Var a);

/// Vector of ||a_i - b_i||^2 over matching rows of two [m x n] matrices.
Var row_squared_distances(GradTape& tape, Var a, Var b);

/// Rows of `a` selected by index (repeats allowed).
Var gather_rows(GradTape& tape, Var a, std::vector<std::size_t> rows);

/// Mean over rows of -log softmax(logits_i)[target_i].
Var softmax_cross_entropy(GradTape& tape, Var logits, std::vector<std::size_t> targets);

}  // namespace cvs::ops
