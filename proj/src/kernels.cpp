#include "crispr/kernels.hpp"

#include <cassert>

namespace crispr::kernels {

namespace {

inline void linear_row(const Matrix& x, const Matrix& w, std::span<const double> bias,
                       Matrix& out, std::size_t i) {
  const std::size_t in = w.rows();
  const std::size_t width = w.cols();
  double* o = out.data() + i * width;
  for (std::size_t j = 0; j < width; ++j) o[j] = 0.0;
  const double* xi = x.data() + i * in;
  for (std::size_t k = 0; k < in; ++k) {
    const double a = xi[k];
    const double* wk = w.data() + k * width;
    for (std::size_t j = 0; j < width; ++j) o[j] += a * wk[j];
  }
  if (!bias.empty()) {
    for (std::size_t j = 0; j < width; ++j) o[j] += bias[j];
  }
}

inline void backward_row(const Matrix& dy, const Matrix& w, Matrix& dx, std::size_t i) {
  const std::size_t in = w.rows();
  const std::size_t width = w.cols();
  const double* g = dy.data() + i * width;
  double* d = dx.data() + i * in;
  for (std::size_t k = 0; k < in; ++k) {
    const double* wk = w.data() + k * width;
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) acc += g[j] * wk[j];
    d[k] = acc;
  }
}

void shape_output(const Matrix& x, const Matrix& w, std::span<const double> bias,
                  Matrix& out) {
  assert(x.cols() == w.rows());
  assert(bias.empty() || bias.size() == w.cols());
  (void)bias;
  if (out.rows() != x.rows() || out.cols() != w.cols()) out = Matrix(x.rows(), w.cols());
}

}  // namespace

void linear_serial(const Matrix& x, const Matrix& w, std::span<const double> bias,
                   Matrix& out) {
  shape_output(x, w, bias, out);
  for (std::size_t i = 0; i < x.rows(); ++i) linear_row(x, w, bias, out, i);
}

void linear(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& out) {
  shape_output(x, w, bias, out);
  const long n = static_cast<long>(x.rows());
  const long work = n * static_cast<long>(w.rows() * w.cols());
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (long i = 0; i < n; ++i) linear_row(x, w, bias, out, static_cast<std::size_t>(i));
}

void linear_backward_input_serial(const Matrix& dy, const Matrix& w, Matrix& dx) {
  assert(dy.cols() == w.cols());
  if (dx.rows() != dy.rows() || dx.cols() != w.rows()) dx = Matrix(dy.rows(), w.rows());
  for (std::size_t i = 0; i < dy.rows(); ++i) backward_row(dy, w, dx, i);
}

void linear_backward_input(const Matrix& dy, const Matrix& w, Matrix& dx) {
  assert(dy.cols() == w.cols());
  if (dx.rows() != dy.rows() || dx.cols() != w.rows()) dx = Matrix(dy.rows(), w.rows());
  const long n = static_cast<long>(dy.rows());
  const long work = n * static_cast<long>(w.rows() * w.cols());
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (long i = 0; i < n; ++i) backward_row(dy, w, dx, static_cast<std::size_t>(i));
}

}  // namespace crispr::kernels
