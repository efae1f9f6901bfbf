#include "costrgcn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <sstream>

#include "costrgcn/errors.hpp"

namespace costrgcn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  // An all-ones exponent carries into bit 63 when 2^52 is added.
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL, kCarry = 1ULL << 52;
  std::uint64_t acc = 0;
  for (double v : data_) acc |= (std::bit_cast<std::uint64_t>(v) & kExp) + kCarry;
  return (acc >> 63) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// flop accounting

namespace {

struct FlopState {
  std::array<std::uint64_t, 3> counts{};
  FlopKind current = FlopKind::kGeneral;
};

FlopState& flop_state() {
  thread_local FlopState state;
  return state;
}

std::string& guard_where() {
  thread_local std::string where;
  return where;
}

}  // namespace

void FlopCounter::add(std::uint64_t n) {
  auto& s = flop_state();
  s.counts[static_cast<int>(s.current)] += n;
}

std::uint64_t FlopCounter::total() {
  const auto& c = flop_state().counts;
  return c[0] + c[1] + c[2];
}

std::uint64_t FlopCounter::count(FlopKind kind) {
  return flop_state().counts[static_cast<int>(kind)];
}

void FlopCounter::reset() { flop_state().counts = {}; }

FlopKind FlopCounter::current() { return flop_state().current; }

void FlopCounter::set_current(FlopKind kind) { flop_state().current = kind; }

GuardScope::GuardScope(std::string where) : saved_(guard_where()) {
  guard_where() = std::move(where);
}

GuardScope::~GuardScope() { guard_where() = std::move(saved_); }

const std::string& GuardScope::where() { return guard_where(); }

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(op, GuardScope::where());
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Below this many multiply-adds the blocked kernel's packing costs more than it saves.
constexpr std::size_t kSmallGemm = 8192;

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  FlopCounter::add(static_cast<std::uint64_t>(m) * n * k);
  Map cm(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  // Stored shapes: A is m x k (or k x m when transposed), likewise B.
  ConstMap am(a, trans_a ? ek : em, trans_a ? em : ek);
  ConstMap bm(b, trans_b ? en : ek, trans_b ? ek : en);
  const bool small = m * n * k <= kSmallGemm;
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (small) {
      if (accumulate) {
        cm.noalias() += lhs.lazyProduct(rhs);
      } else {
        cm.noalias() = lhs.lazyProduct(rhs);
      }
    } else if (accumulate) {
      cm.noalias() += lhs * rhs;
    } else {
      cm.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) run(am, bm);
  else if (!trans_a && trans_b) run(am, bm.transpose());
  else if (trans_a && !trans_b) run(am.transpose(), bm);
  else run(am.transpose(), bm.transpose());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), out.data());
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  const std::size_t rows = x.size() / w.dim(0);
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor out(out_shape);
  gemm(false, false, rows, w.dim(1), w.dim(0), x.data(), w.data(), out.data());
  if (!bias.empty()) {
    if (bias.size() != w.dim(1)) throw ShapeError("linear: bias size mismatch");
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = out.data() + r * w.dim(1);
      for (std::size_t j = 0; j < w.dim(1); ++j) row[j] += bias[j];
    }
  }
  return out;
}

void relu_inplace(Tensor& t) {
  for (auto& v : t.values()) v = v > 0.0 ? v : 0.0;
}

Tensor layer_norm_rows(const Tensor& x, double eps) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * n;
    double* o = out.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) o[j] = (in[j] - mean) * inv;
  }
  return out;
}

void affine_rows_inplace(Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const std::size_t n = x.shape().back();
  if (gamma.size() != n || beta.size() != n) throw ShapeError("affine: parameter size mismatch");
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = x.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) o[j] = o[j] * gamma[j] + beta[j];
  }
}

void softmax_rows_inplace(double* row, std::size_t n) {
  if (n == 0) throw ShapeError("softmax over an empty axis");
  double mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
}

}  // namespace kernels

}  // namespace costrgcn
