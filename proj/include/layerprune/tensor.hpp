#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace layerprune {

// Dense row-major tensor of doubles. Activations use NCHW, conv weights
// use [filters, in_channels, k, k].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w);
  double at(int n, int c, int h, int w) const;

  void fill(double v);
  void reshape(std::vector<int> shape);

  // Elements per index along axis 0 (e.g. one filter, one sample).
  std::size_t stride0() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

Tensor gaussian_tensor(std::vector<int> shape, double stddev, std::mt19937_64& rng);
Tensor uniform_tensor(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng);

}  // namespace layerprune
