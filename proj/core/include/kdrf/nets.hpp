#pragma once

#include <string>
#include <vector>

#include "kdrf/rng.hpp"
#include "kdrf/tape.hpp"

namespace kdrf {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

// Owns every learnable parameter of a model as named slots in declared
// order; the declared order is also the checkpoint serialization order.
// Dense slots enter tapes as leaves; grid slots are sampled by fused ops
// that route gradients through tape sinks.
class ParamStore {
 public:
  enum class Kind { kDense, kGrid };

  struct Slot {
    std::string name;
    Shape shape;
    Kind kind;
    std::shared_ptr<std::vector<double>> data;
    std::int64_t size() const { return static_cast<std::int64_t>(data->size()); }
  };

  int add(std::string name, Shape shape, Kind kind = Kind::kDense);
  Slot& slot(int id) { return slots_[static_cast<std::size_t>(id)]; }
  const Slot& slot(int id) const { return slots_[static_cast<std::size_t>(id)]; }
  std::size_t count() const { return slots_.size(); }
  std::int64_t total_size() const;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

 private:
  std::vector<Slot> slots_;
};

// Per-tape view of a store: dense slots become tracked leaves when a tape
// is given, untracked aliases otherwise. One binding per tape.
class Binding {
 public:
  Binding(const ParamStore& store, Tape* tape);
  const Tensor& operator[](int slot_id) const { return tensors_[static_cast<std::size_t>(slot_id)]; }
  Tape* tape() const { return tape_; }
  const ParamStore& store() const { return *store_; }

 private:
  const ParamStore* store_;
  Tape* tape_;
  std::vector<Tensor> tensors_;
};

struct Linear {
  int w = -1;  // [in, out]
  int b = -1;  // [out]
  std::int64_t in = 0, out = 0;
};

// He-uniform weights, zero bias.
Linear make_linear(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                   Rng& rng);
// Zero weights and bias (used for heads that must start as the identity warp).
Linear make_linear_zero(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out);

Tensor linear(const Binding& b, const Linear& l, const Tensor& x);

}  // namespace kdrf
