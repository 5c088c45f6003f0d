#include "cnpadv/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "cnpadv/errors.hpp"

#if CNPADV_USE_CBLAS
#include <cblas.h>
#endif

namespace cnpadv::diff {

namespace {

std::int64_t shape_product(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::zeros(int rows, int cols) { return Tensor({rows, cols}); }

Tensor Tensor::full(int rows, int cols, double value) {
  Tensor t({rows, cols});
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

int Tensor::rows() const {
  if (shape_.empty()) return 0;
  if (shape_.size() == 1) return 1;
  return shape_[0];
}

int Tensor::cols() const {
  if (shape_.empty()) return 0;
  return shape_.back();
}

double& Tensor::at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
double Tensor::at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
#if CNPADV_USE_CBLAS
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
#else
  // Portable fallback, ikj loop order over a beta-scaled accumulator.
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    if (beta == 0.0) {
      std::fill(crow, crow + n, 0.0);
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (int p = 0; p < k; ++p) {
      const double av = trans_a ? a[static_cast<std::size_t>(p) * lda + i]
                                : a[static_cast<std::size_t>(i) * lda + p];
      const double s = alpha * av;
      if (s == 0.0) continue;
      if (!trans_b) {
        const double* brow = b + static_cast<std::size_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += s * b[static_cast<std::size_t>(j) * ldb + p];
      }
    }
  }
#endif
}

}  // namespace cnpadv::diff
