#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace costrgcn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. A rank-0 tensor (empty shape) is a scalar.
class Tensor {
 public:
  Tensor() : shape_{0}, data_{} {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor identity(std::size_t n);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double item() const;

  // Same data, new shape of equal size.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

// Multiply-add accounting. Counters are per thread; matmul-style kernels
// charge m*k*n to the active category.
enum class FlopKind : int { kGeneral = 0, kAttentionScores = 1, kAttentionValues = 2 };

class FlopCounter {
 public:
  static void add(std::uint64_t n);
  static std::uint64_t total();
  static std::uint64_t count(FlopKind kind);
  static void reset();
  static FlopKind current();

 private:
  friend class FlopScope;
  static void set_current(FlopKind kind);
};

// Routes multiply-adds issued while alive to one category.
class FlopScope {
 public:
  explicit FlopScope(FlopKind kind) : saved_(FlopCounter::current()) {
    FlopCounter::set_current(kind);
  }
  ~FlopScope() { FlopCounter::set_current(saved_); }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopKind saved_;
};

// Names the module reported by a NumericError raised while alive.
class GuardScope {
 public:
  explicit GuardScope(std::string where);
  ~GuardScope();
  GuardScope(const GuardScope&) = delete;
  GuardScope& operator=(const GuardScope&) = delete;

  static const std::string& where();

 private:
  std::string saved_;
};

// Throws NumericError naming `op` if t holds NaN/Inf.
void check_finite(const Tensor& t, const char* op);

namespace kernels {

// C (m x n) = op(A) * op(B) (+ C when accumulate). op(A) is m x k, op(B) is k x n.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate = false);

Tensor matmul(const Tensor& a, const Tensor& b);
// x (rows x in) * w (in x out) + bias (out); bias may be empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
void relu_inplace(Tensor& t);
// Normalizes each row of the last axis to zero mean and unit variance.
Tensor layer_norm_rows(const Tensor& x, double eps);
// Row-wise affine: x * gamma + beta over the last axis.
void affine_rows_inplace(Tensor& x, const Tensor& gamma, const Tensor& beta);
void softmax_rows_inplace(double* row, std::size_t n);

}  // namespace kernels

}  // namespace costrgcn
