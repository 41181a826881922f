#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitveil {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Raised when operands of a primitive do not conform.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b)
      : std::invalid_argument("shape mismatch in " + op + ": " + shape_to_string(a) +
                              " vs " + shape_to_string(b)) {}
  ShapeError(const std::string& op, const std::string& detail)
      : std::invalid_argument("shape error in " + op + ": " + detail) {}
};

// Raised when a NaN or infinity enters or leaves a primitive.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& where)
      : std::runtime_error("non-finite value in " + where) {}
};

// Raised when an optimization run trips a non-finite value and has to stop;
// carries the iteration diagnostic in its message.
class NumericalAbort : public std::runtime_error {
 public:
  explicit NumericalAbort(const std::string& message) : std::runtime_error(message) {}
};

// Dense row-major tensor of 64-bit reals. Rank 0 (empty shape) is a scalar.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    for (std::size_t dim : shape)
      if (dim == 0) throw ShapeError("Tensor", "zero dimension in " + shape_to_string(shape));
    if (data.size() != shape_numel(shape))
      throw ShapeError("Tensor", "data length " + std::to_string(data.size()) +
                                     " does not match shape " + shape_to_string(shape));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(Shape s) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape s, double v) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor vector(std::vector<double> d) {
    Shape s{d.size()};
    return Tensor(std::move(s), std::move(d));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> d) {
    return Tensor({rows, cols}, std::move(d));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return shape.empty(); }

  double item() const {
    if (!is_scalar()) throw ShapeError("item", "tensor of shape " + shape_to_string(shape) + " is not a scalar");
    return data[0];
  }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_finite(const Tensor& t, const std::string& where) {
  if (!t.all_finite()) throw NonFiniteError(where);
}

inline void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw ShapeError(op, a.shape, b.shape);
}

}  // namespace gaitveil
