#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcqa {

// Dense row-major array of 64-bit reals. Network code keeps everything 2-D
// ({1,F} for vectors, {1,1} for scalars).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count(shape)) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor full(std::vector<std::size_t> s, double v) {
    std::size_t n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }
  // Builds a 2-D tensor from nested init lists; all rows must have equal width.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows_in) {
    std::size_t r = rows_in.size();
    std::size_t c = r == 0 ? 0 : rows_in.begin()->size();
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows_in) {
      if (row.size() != c) throw std::invalid_argument("Tensor::matrix: ragged rows");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(d));
  }

  bool empty() const { return data.empty() && shape.empty(); }
  std::size_t size() const { return data.size(); }
  bool is_matrix() const { return shape.size() == 2; }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

}  // namespace pcqa
