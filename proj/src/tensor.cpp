#include "co2net/tensor.hpp"

#include "co2net/errors.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace co2net {

Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent", 0);
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] <= 0)
      throw DimensionError("non-positive extent in shape " + shape_string(shape),
                           static_cast<int>(i));
}

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  check_shape(shape_);
  values_ = Vector::Zero(shape_size(shape_));
  if (requires_grad_) grad_ = Vector::Zero(values_.size());
}

Tensor::Tensor(Shape shape, Vector values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  check_shape(shape_);
  if (shape_size(shape_) != values_.size())
    throw DimensionError("value count " + std::to_string(values_.size()) +
                             " does not match shape " + shape_string(shape_),
                         static_cast<int>(shape_.size()) - 1);
  if (requires_grad_) grad_ = Vector::Zero(values_.size());
}

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
  Vector v = Eigen::Map<const Vector>(m.data(), m.size());
  return Tensor({m.rows(), m.cols()}, std::move(v), requires_grad);
}

Index Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

Index Tensor::rows() const {
  const Index c = cols();
  return c == 0 ? 0 : values_.size() / c;
}

void Tensor::set_requires_grad(bool flag) {
  requires_grad_ = flag;
  if (flag && grad_.size() != values_.size()) grad_ = Vector::Zero(values_.size());
}

void Tensor::zero_grad() {
  if (grad_.size() == values_.size()) grad_.setZero();
}

Parameter::Parameter(std::string n, Shape shape)
    : name(std::move(n)), tensor(std::move(shape), true) {
  adam_m = Vector::Zero(tensor.size());
  adam_v = Vector::Zero(tensor.size());
}

Parameter& ParameterStore::add(const std::string& name, Shape shape) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(name, std::move(shape)));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->tensor.zero_grad();
}

Index ParameterStore::total_size() const {
  Index n = 0;
  for (const auto& p : params_) n += p->tensor.size();
  return n;
}

void xavier_uniform(Parameter& p, Index fan_in, Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < p.tensor.size(); ++i) p.tensor.values()[i] = a * (2.0 * uniform01(rng) - 1.0);
}

}  // namespace co2net
