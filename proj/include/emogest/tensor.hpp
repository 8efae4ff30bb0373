#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace emogest {

// Dense row-major tensor of doubles, rank 1..4. Deliberately minimal: shape
// arithmetic lives here, math lives in the autograd ops.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {
    if (shape_.empty() || shape_.size() > 4)
      throw std::invalid_argument("Tensor: rank must be 1..4");
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || shape_.size() > 4)
      throw std::invalid_argument("Tensor: rank must be 1..4");
    if (data_.size() != count(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(std::vector<std::size_t> shape) { return full(std::move(shape), 1.0); }

  // 1x1 tensor; scalar results of reductions use this shape.
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return require_rank2().shape_[0]; }
  std::size_t cols() const { return require_rank2().shape_[1]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Same data, new shape (element count must match).
  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (count(shape) != data_.size())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ")";
    return os.str();
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

 private:
  const Tensor& require_rank2() const {
    if (shape_.size() != 2) throw std::logic_error("Tensor: rank-2 access on " + shape_str());
    return *this;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<RowMat> mat(Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

inline Eigen::Map<const RowMat> mat(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

// Flat views, for elementwise work on tensors of any rank.
inline Eigen::Map<Eigen::ArrayXd> flat(Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

inline Eigen::Map<const Eigen::ArrayXd> flat(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

}  // namespace emogest
