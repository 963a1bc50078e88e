#pragma once

#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

namespace mseg {

class Rng;

// Dense row-major double tensor. Shapes are small (rank <= 5), data is owned.
// All network math runs in double so finite-difference checks and the scalar
// recurrence oracles are meaningful.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> data);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Convenience indexers for tests and low-rate paths.
  double& at2(int a, int b) { return data_[idx2(a, b)]; }
  double at2(int a, int b) const { return data_[idx2(a, b)]; }
  double& at3(int a, int b, int c) { return data_[idx3(a, b, c)]; }
  double at3(int a, int b, int c) const { return data_[idx3(a, b, c)]; }
  double& at4(int a, int b, int c, int d) { return data_[idx4(a, b, c, d)]; }
  double at4(int a, int b, int c, int d) const { return data_[idx4(a, b, c, d)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  void fill(double v);
  void add_scaled(const Tensor& o, double s);  // this += s * o
  double abs_max() const;
  bool all_finite() const;

  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);

private:
  std::size_t idx2(int a, int b) const {
    assert(rank() == 2);
    return static_cast<std::size_t>(a) * shape_[1] + b;
  }
  std::size_t idx3(int a, int b, int c) const {
    assert(rank() == 3);
    return (static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c;
  }
  std::size_t idx4(int a, int b, int c, int d) const {
    assert(rank() == 4);
    return ((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

std::int64_t shape_numel(const std::vector<int>& shape);

}  // namespace mseg
