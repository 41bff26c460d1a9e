#include "uspg/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace uspg {

Shape::Shape(std::initializer_list<int> dims) {
  if (dims.size() > 4) throw std::invalid_argument("shape rank > 4");
  rank = static_cast<int>(dims.size());
  int i = 0;
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("shape dimension < 1");
    dim[static_cast<size_t>(i++)] = d;
  }
}

int Shape::count() const {
  int n = 1;
  for (int i = 0; i < rank; ++i) n *= dim[static_cast<size_t>(i)];
  return n;
}

bool Shape::operator==(const Shape& o) const {
  if (rank != o.rank) return false;
  for (int i = 0; i < rank; ++i)
    if (dim[static_cast<size_t>(i)] != o.dim[static_cast<size_t>(i)]) return false;
  return true;
}

Tensor::Tensor(Shape s, double fill)
    : shape_(s), data_(static_cast<size_t>(s.count()), fill) {}

Tensor Tensor::scalar(double v) {
  Tensor t{Shape{}};
  t.data_[0] = v;
  return t;
}

double& Tensor::at(int a, int b) {
  return data_[static_cast<size_t>(a * shape_.dim[1] + b)];
}
double Tensor::at(int a, int b) const {
  return data_[static_cast<size_t>(a * shape_.dim[1] + b)];
}
double& Tensor::at(int a, int b, int c) {
  return data_[static_cast<size_t>((a * shape_.dim[1] + b) * shape_.dim[2] + c)];
}
double Tensor::at(int a, int b, int c) const {
  return data_[static_cast<size_t>((a * shape_.dim[1] + b) * shape_.dim[2] + c)];
}
double& Tensor::at(int a, int b, int c, int d) {
  return data_[static_cast<size_t>(
      ((a * shape_.dim[1] + b) * shape_.dim[2] + c) * shape_.dim[3] + d)];
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::logic_error("item() on non-scalar tensor");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::abs_max() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

double Tensor::l2_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

}  // namespace uspg
