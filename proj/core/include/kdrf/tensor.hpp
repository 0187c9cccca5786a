#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace kdrf::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Dense row-major tensor of 64-bit floats. Value type: copies share the
// underlying buffer, which is never mutated after construction. A tensor is
// gradient-tracked iff it carries a (tape, node) pair.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> values,
         Tape* tape = nullptr, int node = -1);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(std::span<const double> values, Shape shape);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  std::span<const double> data() const;
  std::vector<double> to_vector() const { return *data_; }
  std::shared_ptr<const std::vector<double>> shared_data() const { return data_; }

  // Scalar convenience: requires size() == 1.
  double value() const;
  double flat(std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

}  // namespace kdrf::ad
