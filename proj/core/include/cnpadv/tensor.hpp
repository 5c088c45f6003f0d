#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cnpadv::diff {

/// Dense row-major tensor of doubles. Everything in this project is rank 2
/// (matrices); scalars are 1x1 and vectors are 1xN rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(int rows, int cols);
  static Tensor full(int rows, int cols, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);           // 1xN
  static Tensor matrix(int rows, int cols, std::vector<double> values);
  static Tensor zeros_like(const Tensor& other);

  const std::vector<int>& shape() const { return shape_; }
  int rows() const;
  int cols() const;
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double& at(int r, int c);
  double at(int r, int c) const;
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  void fill(double value);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;  // e.g. "[3x4]"

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// C = alpha * op(A) * op(B) + beta * C, row-major with leading dimensions.
/// Backed by CBLAS when available, with a portable fallback.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

/// Overflow-safe logistic and log(1+exp(x)).
double stable_sigmoid(double x);
double stable_softplus(double x);

}  // namespace cnpadv::diff
