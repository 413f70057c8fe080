#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>

#include "midl/common.hpp"
#include "midl/rng.hpp"

namespace midl {

using ArrayX = Eigen::ArrayXd;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Dense 2-D tensor of doubles, row-major. Rank-2 covers everything the model
// needs: batches are [B, d] rows, weights [d_in, d_out], scalars [1, 1].
class Tensor {
 public:
  Tensor() = default;
  Tensor(Index rows, Index cols) : rows_(rows), cols_(cols), v_(ArrayX::Zero(rows * cols)) {
    if (rows < 1 || cols < 1) throw ConfigError("Tensor: dimensions must be >= 1");
  }

  static Tensor zeros(Index rows, Index cols) { return Tensor(rows, cols); }
  static Tensor ones(Index rows, Index cols) {
    Tensor t(rows, cols);
    t.v_.setOnes();
    return t;
  }
  static Tensor full(Index rows, Index cols, double x) {
    Tensor t(rows, cols);
    t.v_.setConstant(x);
    return t;
  }
  static Tensor scalar(double x) { return full(1, 1, x); }
  // [1, d] row vector.
  static Tensor row(const ArrayX& a) {
    Tensor t(1, a.size());
    t.v_ = a;
    return t;
  }
  static Tensor uniform(Index rows, Index cols, double lo, double hi, Rng& rng) {
    Tensor t(rows, cols);
    for (Index i = 0; i < t.v_.size(); ++i) t.v_[i] = rng.next_uniform(lo, hi);
    return t;
  }
  static Tensor gaussian(Index rows, Index cols, Rng& rng) {
    Tensor t(rows, cols);
    for (Index i = 0; i < t.v_.size(); ++i) t.v_[i] = rng.next_gaussian();
    return t;
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index size() const { return v_.size(); }
  std::array<Index, 2> shape() const { return {rows_, cols_}; }

  ArrayX& array() { return v_; }
  const ArrayX& array() const { return v_; }

  Eigen::Map<MatrixRM> mat() { return {v_.data(), rows_, cols_}; }
  Eigen::Map<const MatrixRM> mat() const { return {v_.data(), rows_, cols_}; }

  double& operator()(Index i, Index j) { return v_[i * cols_ + j]; }
  double operator()(Index i, Index j) const { return v_[i * cols_ + j]; }

  // Value of a [1,1] tensor.
  double item() const {
    if (size() != 1) throw std::logic_error("Tensor::item: tensor has shape " + shape_str());
    return v_[0];
  }

  ArrayX row_array(Index i) const { return v_.segment(i * cols_, cols_); }

  bool all_finite() const { return v_.isFinite().all(); }
  bool same_bits(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && (v_ == o.v_).all();
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

 private:
  Index rows_ = 0, cols_ = 0;
  ArrayX v_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace midl
