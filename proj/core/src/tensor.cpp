#include "kdrf/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace kdrf::ad {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<const std::vector<double>>(std::move(values))) {
  for (auto e : shape_) {
    if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(shape_));
  }
  if (numel(shape_) != size()) {
    throw std::invalid_argument("shape " + shape_str(shape_) + " does not match " +
                                std::to_string(size()) + " values");
  }
}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> values, Tape* tape, int node)
    : shape_(std::move(shape)), data_(std::move(values)), tape_(tape), node_(node) {
  if (numel(shape_) != size()) {
    throw std::invalid_argument("shape " + shape_str(shape_) + " does not match " +
                                std::to_string(size()) + " values");
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::zeros(Shape shape) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
}

Tensor Tensor::from(std::span<const double> values, Shape shape) {
  return Tensor(std::move(shape), std::vector<double>(values.begin(), values.end()));
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value() requires a scalar, got " + shape_str(shape_));
  return (*data_)[0];
}

}  // namespace kdrf::ad
