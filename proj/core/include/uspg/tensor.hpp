#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace uspg {

/// Dense row-major shape, rank 0 (scalar) through 4.
struct Shape {
  std::array<int, 4> dim{1, 1, 1, 1};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<int> dims);

  int count() const;
  int operator[](int i) const { return dim[static_cast<size_t>(i)]; }
  bool operator==(const Shape& o) const;
  bool operator!=(const Shape& o) const { return !(*this == o); }
};

/// Dense double-precision tensor, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  static Tensor scalar(double v);

  const Shape& shape() const { return shape_; }
  int size() const { return static_cast<int>(data_.size()); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<size_t>(i)]; }

  // Indexed access for the common ranks.
  double& at(int a) { return data_[static_cast<size_t>(a)]; }
  double& at(int a, int b);
  double& at(int a, int b, int c);
  double& at(int a, int b, int c, int d);
  double at(int a, int b, int c) const;
  double at(int a, int b) const;

  double item() const;  // requires a single-element tensor
  bool all_finite() const;
  double abs_max() const;
  double l2_norm() const;

  void fill(double v);

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace uspg
