#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace co2net {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// Seeded engine threaded explicitly through init, dropout and sampling.
using Rng = std::mt19937_64;

/// Uniform draw in [0,1) built from the top 53 bits of one engine output.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major f64 tensor. The trailing extent is the matrix column count;
/// all leading extents fold into rows (a rank-1 tensor is a single row).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, Vector values, bool requires_grad = false);

  static Tensor from_matrix(const Matrix& m, bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return values_.size(); }
  Index rows() const;
  Index cols() const;

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }

  Eigen::Map<Matrix> matrix() { return {values_.data(), rows(), cols()}; }
  Eigen::Map<const Matrix> matrix() const { return {values_.data(), rows(), cols()}; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag);

  Vector& grad() { return grad_; }
  const Vector& grad() const { return grad_; }
  Eigen::Map<Matrix> grad_matrix() { return {grad_.data(), rows(), cols()}; }
  void zero_grad();

  bool all_finite() const { return values_.allFinite(); }

 private:
  Shape shape_;
  Vector values_;
  bool requires_grad_ = false;
  Vector grad_;
};

/// Trainable tensor with Adam state.
struct Parameter {
  std::string name;
  Tensor tensor;
  Vector adam_m;
  Vector adam_v;
  std::int64_t step_count = 0;

  Parameter(std::string n, Shape shape);
};

/// Owns parameters at stable addresses, in registration order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Shape shape);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  Index total_size() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Fills weights uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)).
void xavier_uniform(Parameter& p, Index fan_in, Index fan_out, Rng& rng);

}  // namespace co2net
