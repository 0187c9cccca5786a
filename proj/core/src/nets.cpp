#include "kdrf/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace kdrf {

int ParamStore::add(std::string name, Shape shape, Kind kind) {
  for (const auto& s : slots_) {
    if (s.name == name) throw std::invalid_argument("duplicate parameter slot: " + name);
  }
  Slot s;
  s.name = std::move(name);
  s.shape = std::move(shape);
  s.kind = kind;
  s.data = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ad::numel(s.shape)), 0.0);
  slots_.push_back(std::move(s));
  return static_cast<int>(slots_.size()) - 1;
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& s : slots_) n += s.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(total_size()));
  for (const auto& s : slots_) flat.insert(flat.end(), s.data->begin(), s.data->end());
  return flat;
}

void ParamStore::unflatten(std::span<const double> flat) {
  if (static_cast<std::int64_t>(flat.size()) != total_size()) {
    throw std::invalid_argument("parameter block size mismatch: got " + std::to_string(flat.size()) +
                                ", expected " + std::to_string(total_size()));
  }
  std::size_t off = 0;
  for (auto& s : slots_) {
    std::copy_n(flat.data() + off, s.data->size(), s.data->data());
    off += s.data->size();
  }
}

Binding::Binding(const ParamStore& store, Tape* tape) : store_(&store), tape_(tape) {
  tensors_.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    const auto& s = store.slot(static_cast<int>(i));
    // The alias shares storage with the store; parameters are immutable
    // while any tape over them is alive (single-writer update contract).
    Tensor alias(s.shape, std::shared_ptr<const std::vector<double>>(s.data));
    if (tape != nullptr && s.kind == ParamStore::Kind::kDense) {
      tensors_.push_back(tape->leaf(alias));
    } else {
      tensors_.push_back(alias);
    }
  }
}

Linear make_linear(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                   Rng& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w = store.add(name + ".w", Shape{in, out});
  l.b = store.add(name + ".b", Shape{out});
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  auto& w = *store.slot(l.w).data;
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return l;
}

Linear make_linear_zero(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w = store.add(name + ".w", Shape{in, out});
  l.b = store.add(name + ".b", Shape{out});
  return l;
}

Tensor linear(const Binding& b, const Linear& l, const Tensor& x) {
  return ad::affine(x, b[l.w], b[l.b]);
}

}  // namespace kdrf
