#pragma once

// Dense kernels used by the transformer runtime.
//
// Every kernel comes in two flavours: a plain serial loop nest (`*_serial`),
// kept as the reference the tests compare against, and an OpenMP version
// that splits the output rows across threads. Rows are independent and each
// output element is accumulated in the same order in both versions, so the
// two are bit-identical for any thread count.

#include <span>

#include "crispr/matrix.hpp"

namespace crispr::kernels {

// out = x * w + bias, with x [n x in], w [in x out], bias [out] (may be empty).
void linear_serial(const Matrix& x, const Matrix& w, std::span<const double> bias,
                   Matrix& out);
void linear(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out);

// dx = dy * w^T, with dy [n x out], w [in x out].
void linear_backward_input_serial(const Matrix& dy, const Matrix& w, Matrix& dx);
void linear_backward_input(const Matrix& dy, const Matrix& w, Matrix& dx);

// Work (multiply-adds) below which the OpenMP kernels stay on one thread.
inline constexpr long kParallelThreshold = 1L << 15;

}  // namespace crispr::kernels
