#pragma once

#include <span>

#include "sgmil/matrix.hpp"

// Dense kernels used by the model. The top-level functions split work across
// OpenMP threads by output row; every output element is accumulated in the
// same order as the serial reference versions, so results do not depend on
// the thread count. The reference namespace keeps the naive loops for tests
// and benchmarks.
namespace sgmil::kernels {

/// out = a * b, or out += a * b when accumulate is set.
void matmul(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

/// out = a^T * b (a is k x m, b is k x n).
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

/// out = a * b^T (a is m x k, b is n x k).
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

/// Adds bias (length cols) to every row.
void add_row_bias(Matrix& m, std::span<const double> bias);

/// out[j] += sum_i m(i, j).
void accumulate_column_sums(const Matrix& m, std::span<double> out);

Matrix transpose(const Matrix& m);

namespace reference {

void matmul(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

}  // namespace reference

}  // namespace sgmil::kernels
