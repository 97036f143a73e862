#pragma once

// Closed-form velocity fields. They satisfy the same concepts as the MLP and
// serve as exact references for the integrators and metrics.

#include <span>
#include <stdexcept>
#include <vector>

namespace rwfm {

// v(t, x) = c
class ConstantField {
 public:
  explicit ConstantField(std::vector<double> c) : c_(std::move(c)) {
    if (c_.empty()) throw std::invalid_argument("ConstantField: empty velocity");
  }
  static ConstantField zero(std::size_t dim) { return ConstantField(std::vector<double>(dim, 0.0)); }

  std::size_t dim() const { return c_.size(); }
  void eval(double, std::span<const double>, std::span<double> out) const {
    std::copy(c_.begin(), c_.end(), out.begin());
  }
  double divergence(double, std::span<const double>) const { return 0.0; }

 private:
  std::vector<double> c_;
};

// v(t, x) = A x with A square, row-major.
class LinearField {
 public:
  LinearField(std::size_t dim, std::vector<double> matrix) : dim_(dim), a_(std::move(matrix)) {
    if (dim_ == 0 || a_.size() != dim_ * dim_) throw std::invalid_argument("LinearField: matrix must be dim x dim");
  }
  static LinearField identity(std::size_t dim) {
    std::vector<double> a(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) a[i * dim + i] = 1.0;
    return LinearField(dim, std::move(a));
  }

  std::size_t dim() const { return dim_; }
  void eval(double, std::span<const double> x, std::span<double> out) const {
    for (std::size_t i = 0; i < dim_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) s += a_[i * dim_ + j] * x[j];
      out[i] = s;
    }
  }
  double divergence(double, std::span<const double>) const {
    double tr = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) tr += a_[i * dim_ + i];
    return tr;
  }

 private:
  std::size_t dim_;
  std::vector<double> a_;
};

}  // namespace rwfm
