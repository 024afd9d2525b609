#include "sgmil/kernels.hpp"

#include <vector>

#include "sgmil/error.hpp"

namespace sgmil::kernels {

namespace {

constexpr std::size_t kParallelWork = 1 << 15;

void check(bool ok, const char* what) {
  if (!ok) fail(ErrorKind::InvalidInput, what);
}

void prepare(Matrix& out, std::size_t rows, std::size_t cols, bool accumulate) {
  if (accumulate) {
    check(out.rows() == rows && out.cols() == cols, "accumulate target has wrong shape");
  } else if (out.rows() != rows || out.cols() != cols) {
    out.resize(rows, cols);
  }
}

// Row i of a * b, accumulated from zero in k order, then stored or added.
inline void row_times_matrix(const double* a_row, std::size_t inner, const Matrix& b,
                             double* acc, double* out_row, bool accumulate) {
  const std::size_t n = b.cols();
  for (std::size_t j = 0; j < n; ++j) acc[j] = 0.0;
  for (std::size_t k = 0; k < inner; ++k) {
    const double aik = a_row[k];
    const double* b_row = b.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += aik * b_row[j];
  }
  if (accumulate) {
    for (std::size_t j = 0; j < n; ++j) out_row[j] += acc[j];
  } else {
    for (std::size_t j = 0; j < n; ++j) out_row[j] = acc[j];
  }
}

}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t m = a.rows(), inner = a.cols(), n = b.cols();
  prepare(out, m, n, accumulate);
  const long rows = static_cast<long>(m);
#pragma omp parallel if (m * n * inner > kParallelWork)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (long i = 0; i < rows; ++i) {
      row_times_matrix(a.data() + i * inner, inner, b, acc.data(), out.data() + i * n, accumulate);
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  const std::size_t inner = a.rows(), m = a.cols(), n = b.cols();
  prepare(out, m, n, accumulate);
  const long rows = static_cast<long>(m);
#pragma omp parallel if (m * n * inner > kParallelWork)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (long i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < n; ++j) acc[j] = 0.0;
      for (std::size_t k = 0; k < inner; ++k) {
        const double aki = a(k, static_cast<std::size_t>(i));
        const double* b_row = b.data() + k * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += aki * b_row[j];
      }
      double* out_row = out.data() + i * n;
      if (accumulate) {
        for (std::size_t j = 0; j < n; ++j) out_row[j] += acc[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) out_row[j] = acc[j];
      }
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  const Matrix bt = transpose(b);
  matmul(a, bt, out, accumulate);
}

void add_row_bias(Matrix& m, std::span<const double> bias) {
  check(bias.size() == m.cols(), "bias length mismatch");
  const long rows = static_cast<long>(m.rows());
#pragma omp parallel for schedule(static) if (m.size() > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    auto r = m.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

void accumulate_column_sums(const Matrix& m, std::span<double> out) {
  check(out.size() == m.cols(), "column sum length mismatch");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  }
  return t;
}

namespace reference {

void matmul(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  prepare(out, a.rows(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = accumulate ? out(i, j) + acc : acc;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  prepare(out, a.cols(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) acc += a(k, i) * b(k, j);
      out(i, j) = accumulate ? out(i, j) + acc : acc;
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  prepare(out, a.rows(), b.rows(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
      out(i, j) = accumulate ? out(i, j) + acc : acc;
    }
  }
}

}  // namespace reference

}  // namespace sgmil::kernels
