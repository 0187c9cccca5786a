#include "kdrf/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace kdrf::ad {

namespace {

// Tape execution allocates and frees multi-megabyte buffers every step.
// Keep large blocks on the heap instead of round-tripping them through
// mmap/munmap, which costs a page-fault storm per reuse.
#if defined(__GLIBC__)
[[maybe_unused]] const bool malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;
using CArr = Eigen::Map<const Eigen::ArrayXd>;
using MArr = Eigen::Map<Eigen::ArrayXd>;

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tracked()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw std::invalid_argument("operands tracked on different tapes");
    }
  }
  return tape;
}

#ifndef NDEBUG
void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string("non-finite input to ") + op);
  }
}
#define KDRF_CHECK_FINITE(t, op) check_finite(t, op)
#else
#define KDRF_CHECK_FINITE(t, op) ((void)0)
#endif

std::vector<double> alloc(std::int64_t n) { return std::vector<double>(static_cast<std::size_t>(n)); }

Tensor make_result(Shape shape, std::vector<double> values, Tape* tape, Tape::BackFn back) {
  auto data = std::make_shared<const std::vector<double>>(std::move(values));
  int node = -1;
  if (tape != nullptr) node = tape->push(std::move(back));
  return Tensor(std::move(shape), std::move(data), tape, node);
}

// Row-major strides of a shape.
std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides of input `in` viewed in the coordinate space of `out` (trailing
// aligned); zero stride on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  auto ist = strides_of(in);
  std::vector<std::int64_t> st(out.size(), 0);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : ist[i];
  }
  return st;
}

// Walks every element of `out_shape`, calling f(out_flat, a_flat, b_flat).
template <typename F>
void for_each_broadcast(const Shape& out_shape, const Shape& a, const Shape& b, F&& f) {
  const std::int64_t n = numel(out_shape);
  const auto sa = broadcast_strides(a, out_shape);
  const auto sb = broadcast_strides(b, out_shape);
  const std::size_t rank = out_shape.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out_shape[d]) break;
      idx[d] = 0;
      ia -= sa[d] * out_shape[d];
      ib -= sb[d] * out_shape[d];
    }
  }
}

enum class BinOp { kAdd, kSub, kMul };

// Broadcast layout of one operand against the output.
//   kFull:   operand shape equals the output shape
//   kRepeat: operand equals a trailing block of the output (e.g. a bias row)
//   kExpand: operand has trailing size-1 axes (a per-row scalar)
//   kOther:  anything else (generic odometer path)
enum class BPat { kFull, kRepeat, kExpand, kOther };

BPat classify(const Shape& in, const Shape& out, std::int64_t& block) {
  if (in == out) {
    block = numel(out);
    return BPat::kFull;
  }
  // kRepeat: in (with leading 1s stripped) equals the trailing axes of out.
  {
    std::size_t lead = 0;
    while (lead < in.size() && in[lead] == 1) ++lead;
    const std::size_t k = in.size() - lead;
    bool match = k <= out.size();
    for (std::size_t i = 0; match && i < k; ++i) {
      if (in[lead + i] != out[out.size() - k + i]) match = false;
    }
    if (match) {
      block = 1;
      for (std::size_t i = lead; i < in.size(); ++i) block *= in[i];
      return BPat::kRepeat;
    }
  }
  // kExpand: same rank, equal leading axes, size-1 trailing axes.
  if (in.size() == out.size()) {
    std::size_t split = in.size();
    while (split > 0 && in[split - 1] == 1 && out[split - 1] != 1) --split;
    bool match = true;
    for (std::size_t i = 0; i < split; ++i) {
      if (in[i] != out[i]) match = false;
    }
    if (match && split < in.size()) {
      block = 1;
      for (std::size_t i = split; i < out.size(); ++i) block *= out[i];
      return BPat::kExpand;
    }
  }
  block = 0;
  return BPat::kOther;
}

void binary_forward(BinOp op, BPat pat, std::int64_t block, std::span<const double> full,
                    std::span<const double> other, std::vector<double>& out, bool full_is_a) {
  const std::int64_t n = static_cast<std::int64_t>(out.size());
  auto apply = [op, full_is_a](CArr x, CArr y, MArr o) {
    // x is the full-shaped operand
    switch (op) {
      case BinOp::kAdd: o = x + y; break;
      case BinOp::kSub: o = full_is_a ? (x - y).eval() : (y - x).eval(); break;
      case BinOp::kMul: o = x * y; break;
    }
  };
  if (pat == BPat::kRepeat) {
    CArr y(other.data(), block);
    for (std::int64_t o = 0; o < n / block; ++o) {
      apply(CArr(full.data() + o * block, block), y, MArr(out.data() + o * block, block));
    }
  } else {  // kExpand: per-block scalar
    for (std::int64_t o = 0; o < n / block; ++o) {
      CArr x(full.data() + o * block, block);
      MArr dst(out.data() + o * block, block);
      const double s = other[static_cast<std::size_t>(o)];
      switch (op) {
        case BinOp::kAdd: dst = x + s; break;
        case BinOp::kSub: dst = full_is_a ? (x - s).eval() : (s - x).eval(); break;
        case BinOp::kMul: dst = x * s; break;
      }
    }
  }
}

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, [[maybe_unused]] const char* name) {
  KDRF_CHECK_FINITE(a, name);
  KDRF_CHECK_FINITE(b, name);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::int64_t n = numel(out_shape);
  auto out = alloc(n);
  const auto da = a.data();
  const auto db = b.data();

  std::int64_t block_a = 0, block_b = 0;
  const BPat pa = classify(a.shape(), out_shape, block_a);
  const BPat pb = classify(b.shape(), out_shape, block_b);

  if (pa == BPat::kFull && pb == BPat::kFull) {
    CArr ea(da.data(), n), eb(db.data(), n);
    MArr eo(out.data(), n);
    switch (op) {
      case BinOp::kAdd: eo = ea + eb; break;
      case BinOp::kSub: eo = ea - eb; break;
      case BinOp::kMul: eo = ea * eb; break;
    }
  } else if (pa == BPat::kFull && pb != BPat::kOther) {
    binary_forward(op, pb, block_b, da, db, out, true);
  } else if (pb == BPat::kFull && pa != BPat::kOther) {
    binary_forward(op, pa, block_a, db, da, out, false);
  } else {
    switch (op) {
      case BinOp::kAdd:
        for_each_broadcast(out_shape, a.shape(), b.shape(),
                           [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { out[i] = da[ia] + db[ib]; });
        break;
      case BinOp::kSub:
        for_each_broadcast(out_shape, a.shape(), b.shape(),
                           [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { out[i] = da[ia] - db[ib]; });
        break;
      case BinOp::kMul:
        for_each_broadcast(out_shape, a.shape(), b.shape(),
                           [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { out[i] = da[ia] * db[ib]; });
        break;
    }
  }

  Tape* tape = common_tape({&a, &b});
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [a, b, op, out_shape](Tape& tp, std::span<const double> g) {
      const auto da = a.data();
      const auto db = b.data();
      const std::int64_t n = static_cast<std::int64_t>(g.size());

      // Accumulate dL/dself; `sign` is -1 for the subtrahend of kSub.
      // For kMul the chain weight is the other operand (broadcast alike);
      // for add/sub it is just the sign.
      auto accumulate = [&](const Tensor& self, const Shape& other_shape,
                            std::span<const double> other_data, double sign) {
        double* gs_ptr = tp.grad_zeroed(self.node(), self.size());
        std::span<double> gs(gs_ptr, static_cast<std::size_t>(self.size()));
        std::int64_t block = 0;
        const BPat pat = classify(self.shape(), out_shape, block);
        std::int64_t oblock = 0;
        const BPat opat = op == BinOp::kMul ? classify(other_shape, out_shape, oblock) : BPat::kFull;

        if (op != BinOp::kMul) {
          if (pat == BPat::kFull) {
            MArr(gs.data(), self.size()) += sign * CArr(g.data(), n);
          } else if (pat == BPat::kRepeat) {
            MArr dst(gs.data(), block);
            for (std::int64_t o = 0; o < n / block; ++o) dst += sign * CArr(g.data() + o * block, block);
          } else if (pat == BPat::kExpand) {
            for (std::int64_t o = 0; o < n / block; ++o) {
              gs[static_cast<std::size_t>(o)] += sign * CArr(g.data() + o * block, block).sum();
            }
          } else {
            for_each_broadcast(out_shape, self.shape(), other_shape,
                               [&](std::int64_t i, std::int64_t is, std::int64_t) { gs[is] += sign * g[i]; });
          }
          return;
        }

        // kMul: need g * other at output resolution, reduced to self.
        if (pat != BPat::kOther && opat != BPat::kOther) {
          if (pat == BPat::kFull && opat == BPat::kFull) {
            MArr(gs.data(), self.size()) += CArr(g.data(), n) * CArr(other_data.data(), n);
          } else if (pat == BPat::kFull && opat == BPat::kRepeat) {
            CArr ov(other_data.data(), oblock);
            for (std::int64_t o = 0; o < n / oblock; ++o) {
              MArr(gs.data() + o * oblock, oblock) += CArr(g.data() + o * oblock, oblock) * ov;
            }
          } else if (pat == BPat::kFull && opat == BPat::kExpand) {
            for (std::int64_t o = 0; o < n / oblock; ++o) {
              MArr(gs.data() + o * oblock, oblock) +=
                  CArr(g.data() + o * oblock, oblock) * other_data[static_cast<std::size_t>(o)];
            }
          } else if (pat == BPat::kRepeat && opat == BPat::kFull) {
            MArr dst(gs.data(), block);
            for (std::int64_t o = 0; o < n / block; ++o) {
              dst += CArr(g.data() + o * block, block) * CArr(other_data.data() + o * block, block);
            }
          } else if (pat == BPat::kExpand && opat == BPat::kFull) {
            for (std::int64_t o = 0; o < n / block; ++o) {
              gs[static_cast<std::size_t>(o)] += (CArr(g.data() + o * block, block) *
                                                  CArr(other_data.data() + o * block, block)).sum();
            }
          } else {
            for_each_broadcast(out_shape, self.shape(), other_shape,
                               [&](std::int64_t i, std::int64_t is, std::int64_t io) {
                                 gs[is] += g[i] * other_data[io];
                               });
          }
          return;
        }
        for_each_broadcast(out_shape, self.shape(), other_shape,
                           [&](std::int64_t i, std::int64_t is, std::int64_t io) {
                             gs[is] += g[i] * other_data[io];
                           });
      };

      if (a.tracked()) accumulate(a, b.shape(), db, 1.0);
      if (b.tracked()) accumulate(b, a.shape(), da, op == BinOp::kSub ? -1.0 : 1.0);
    };
  }
  return make_result(out_shape, std::move(out), tape, std::move(back));
}

template <typename FwdF, typename DerF>
Tensor unary(const Tensor& t, [[maybe_unused]] const char* name, FwdF&& fwd, DerF&& der) {
  KDRF_CHECK_FINITE(t, name);
  const std::int64_t n = t.size();
  auto out = alloc(n);
  fwd(t.data(), out);
  Tape* tape = common_tape({&t});
  Tape::BackFn back;
  if (tape != nullptr) {
    auto out_copy = std::make_shared<const std::vector<double>>(out);
    back = [t, out_copy, der](Tape& tp, std::span<const double> g) {
      bool fresh = false;
      double* gt = tp.grad_full(t.node(), t.size(), &fresh);
      der(t.data(), *out_copy, g, gt, !fresh);
    };
  }
  return make_result(t.shape(), std::move(out), tape, std::move(back));
}

}  // namespace

// ---- Tape ---------------------------------------------------------------

int Tape::push(BackFn back) {
  nodes_.push_back(Node{std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

double* Tape::grad_full(int node, std::int64_t size, bool* fresh) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  auto& buf = grads_[static_cast<std::size_t>(node)];
  if (!buf.data) {
    buf.data = std::make_unique_for_overwrite<double[]>(static_cast<std::size_t>(size));
    buf.size = size;
  }
  *fresh = buf.fresh;
  buf.fresh = false;  // the caller overwrites every element when fresh
  return buf.data.get();
}

double* Tape::grad_zeroed(int node, std::int64_t size) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  auto& buf = grads_[static_cast<std::size_t>(node)];
  if (!buf.data) {
    buf.data = std::make_unique_for_overwrite<double[]>(static_cast<std::size_t>(size));
    buf.size = size;
  }
  if (buf.fresh) {
    std::fill_n(buf.data.get(), buf.size, 0.0);
    buf.fresh = false;
  }
  return buf.data.get();
}

Tensor Tape::leaf(const Tensor& value) {
  if (!value.defined()) throw std::invalid_argument("leaf of undefined tensor");
  int node = push(BackFn{});
  return Tensor(value.shape(), value.shared_data(), this, node);
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked() || loss.tape() != this) {
    throw std::invalid_argument("backward requires a tensor tracked on this tape");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (backward_done_) throw std::logic_error("backward already ran on this tape");
  backward_done_ = true;

  grads_.resize(nodes_.size());
  grad_zeroed(loss.node(), 1)[0] = 1.0;
  for (int i = loss.node(); i >= 0; --i) {
    auto& g = grads_[static_cast<std::size_t>(i)];
    if (!g.data || g.fresh) continue;
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.back) {
      node.back(*this, std::span<const double>(g.data.get(), static_cast<std::size_t>(g.size)));
      // Intermediate gradients are not needed once propagated.
      g.data.reset();
      g.size = 0;
    }
  }
}

std::span<const double> Tape::grad(const Tensor& t) const {
  if (!t.tracked() || t.tape() != this) {
    throw std::invalid_argument("grad() of a tensor not tracked on this tape");
  }
  const auto node = static_cast<std::size_t>(t.node());
  if (node >= grads_.size() || !grads_[node].data || grads_[node].fresh) return {};
  return {grads_[node].data.get(), static_cast<std::size_t>(grads_[node].size)};
}

std::vector<double> Tape::grad_or_zeros(const Tensor& t) const {
  auto g = grad(t);
  if (g.empty()) return std::vector<double>(static_cast<std::size_t>(t.size()), 0.0);
  return std::vector<double>(g.begin(), g.end());
}

Tape::SparseRuns& Tape::runs_sink(int key, std::int64_t run_len) {
  auto& runs = sparse_[key];
  if (runs.run_len == 0) runs.run_len = run_len;
  return runs;
}

std::vector<double>& Tape::dense_sink(int key, std::int64_t size) {
  auto& buf = dense_[key];
  if (buf.empty()) buf.assign(static_cast<std::size_t>(size), 0.0);
  return buf;
}

// ---- ops ------------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  KDRF_CHECK_FINITE(a, "matmul");
  KDRF_CHECK_FINITE(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  auto out = alloc(m * n);
  {
    CMap ma(a.data().data(), m, k), mb(b.data().data(), k, n);
    MMap mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  Tape* tape = common_tape({&a, &b});
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [a, b, m, k, n](Tape& tp, std::span<const double> g) {
      CMap mg(g.data(), m, n);
      if (a.tracked()) {
        CMap mb(b.data().data(), k, n);
        bool fresh = false;
        MMap ga(tp.grad_full(a.node(), a.size(), &fresh), m, k);
        if (fresh) ga.noalias() = mg * mb.transpose();
        else ga.noalias() += mg * mb.transpose();
      }
      if (b.tracked()) {
        CMap ma(a.data().data(), m, k);
        bool fresh = false;
        MMap gb(tp.grad_full(b.node(), b.size(), &fresh), k, n);
        if (fresh) gb.noalias() = ma.transpose() * mg;
        else gb.noalias() += ma.transpose() * mg;
      }
    };
  }
  return make_result(Shape{m, n}, std::move(out), tape, std::move(back));
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  KDRF_CHECK_FINITE(x, "affine");
  KDRF_CHECK_FINITE(w, "affine");
  KDRF_CHECK_FINITE(b, "affine");
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.shape()[1] != w.shape()[0] ||
      b.shape()[0] != w.shape()[1]) {
    throw std::invalid_argument("affine shape mismatch: " + shape_str(x.shape()) + " x " +
                                shape_str(w.shape()) + " + " + shape_str(b.shape()));
  }
  const std::int64_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
  auto out = alloc(m * n);
  {
    CMap mx(x.data().data(), m, k), mw(w.data().data(), k, n);
    Eigen::Map<const Eigen::RowVectorXd> vb(b.data().data(), n);
    MMap mo(out.data(), m, n);
    mo.noalias() = mx * mw;
    mo.rowwise() += vb;
  }
  Tape* tape = common_tape({&x, &w, &b});
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [x, w, b, m, k, n](Tape& tp, std::span<const double> g) {
      CMap mg(g.data(), m, n);
      if (x.tracked()) {
        CMap mw(w.data().data(), k, n);
        bool fresh = false;
        MMap gx(tp.grad_full(x.node(), x.size(), &fresh), m, k);
        if (fresh) gx.noalias() = mg * mw.transpose();
        else gx.noalias() += mg * mw.transpose();
      }
      if (w.tracked()) {
        CMap mx(x.data().data(), m, k);
        bool fresh = false;
        MMap gw(tp.grad_full(w.node(), w.size(), &fresh), k, n);
        if (fresh) gw.noalias() = mx.transpose() * mg;
        else gw.noalias() += mx.transpose() * mg;
      }
      if (b.tracked()) {
        bool fresh = false;
        Eigen::Map<Eigen::RowVectorXd> gb(tp.grad_full(b.node(), b.size(), &fresh), n);
        if (fresh) gb.noalias() = mg.colwise().sum();
        else gb.noalias() += mg.colwise().sum();
      }
    };
  }
  return make_result(Shape{m, n}, std::move(out), tape, std::move(back));
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const auto& s0 = parts[0].shape();
  const std::int64_t rank = parts[0].rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat axis out of range");
  std::int64_t axis_total = 0;
  for (const auto& p : parts) {
    KDRF_CHECK_FINITE(p, "concat");
    if (p.rank() != rank) throw std::invalid_argument("concat rank mismatch");
    for (std::int64_t d = 0; d < rank; ++d) {
      if (d != axis && p.shape()[d] != s0[d]) {
        throw std::invalid_argument("concat shape mismatch: " + shape_str(s0) + " vs " +
                                    shape_str(p.shape()));
      }
    }
    axis_total += p.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::int64_t d = axis + 1; d < rank; ++d) inner *= s0[d];

  auto out = alloc(outer * axis_total * inner);
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t pa = p.shape()[axis];
    const auto pd = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(pd.data() + o * pa * inner, pa * inner,
                  out.data() + (o * axis_total + offset) * inner);
    }
    offset += pa;
  }

  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (p.tracked()) {
      if (tape && tape != p.tape()) throw std::invalid_argument("operands tracked on different tapes");
      tape = p.tape();
    }
  }
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [parts, outer, inner, axis_total, axis](Tape& tp, std::span<const double> g) {
      std::int64_t offset = 0;
      for (const auto& p : parts) {
        const std::int64_t pa = p.shape()[axis];
        if (p.tracked()) {
          bool fresh = false;
          double* gp = tp.grad_full(p.node(), p.size(), &fresh);
          for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = g.data() + (o * axis_total + offset) * inner;
            double* dst = gp + o * pa * inner;
            if (fresh) {
              std::copy_n(src, pa * inner, dst);
            } else {
              for (std::int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
            }
          }
        }
        offset += pa;
      }
    };
  }
  return make_result(std::move(out_shape), std::move(out), tape, std::move(back));
}

Tensor slice(const Tensor& t, std::int64_t axis, std::int64_t start, std::int64_t len) {
  const std::int64_t rank = t.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("slice axis out of range");
  const std::int64_t extent = t.shape()[axis];
  if (start < 0 || len <= 0 || start + len > extent) {
    throw std::invalid_argument("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") out of range for axis extent " + std::to_string(extent));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= t.shape()[d];
  for (std::int64_t d = axis + 1; d < rank; ++d) inner *= t.shape()[d];

  Shape out_shape = t.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  auto out = alloc(outer * len * inner);
  const auto td = t.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(td.data() + (o * extent + start) * inner, len * inner, out.data() + o * len * inner);
  }
  Tape* tape = common_tape({&t});
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [t, outer, inner, extent, start, len](Tape& tp, std::span<const double> g) {
      double* gt = tp.grad_zeroed(t.node(), t.size());
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = g.data() + o * len * inner;
        double* dst = gt + (o * extent + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return make_result(std::move(out_shape), std::move(out), tape, std::move(back));
}

Tensor sum(const Tensor& t) {
  KDRF_CHECK_FINITE(t, "sum");
  double acc = 0;
  for (double v : t.data()) acc += v;
  Tape* tape = common_tape({&t});
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [t](Tape& tp, std::span<const double> g) {
      bool fresh = false;
      double* gt = tp.grad_full(t.node(), t.size(), &fresh);
      const std::int64_t n = t.size();
      if (fresh) std::fill_n(gt, n, g[0]);
      else for (std::int64_t i = 0; i < n; ++i) gt[i] += g[0];
    };
  }
  return make_result(Shape{1}, {acc}, tape, std::move(back));
}

Tensor mean(const Tensor& t) { return scale(sum(t), 1.0 / static_cast<double>(t.size())); }

Tensor sum_axis(const Tensor& t, std::int64_t axis, bool keepdim) {
  const std::int64_t rank = t.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("sum_axis out of range");
  std::int64_t outer = 1, inner = 1;
  const std::int64_t extent = t.shape()[axis];
  for (std::int64_t d = 0; d < axis; ++d) outer *= t.shape()[d];
  for (std::int64_t d = axis + 1; d < rank; ++d) inner *= t.shape()[d];

  auto out = alloc(outer * inner);
  const auto td = t.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t e = 0; e < extent; ++e) {
      const double* src = td.data() + (o * extent + e) * inner;
      double* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  Shape out_shape;
  for (std::int64_t d = 0; d < rank; ++d) {
    if (d == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(t.shape()[d]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  Tape* tape = common_tape({&t});
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [t, outer, inner, extent](Tape& tp, std::span<const double> g) {
      bool fresh = false;
      double* gt = tp.grad_full(t.node(), t.size(), &fresh);
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = g.data() + o * inner;
        for (std::int64_t e = 0; e < extent; ++e) {
          double* dst = gt + (o * extent + e) * inner;
          if (fresh) {
            std::copy_n(src, inner, dst);
          } else {
            for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
      }
    };
  }
  return make_result(std::move(out_shape), std::move(out), tape, std::move(back));
}

Tensor cumsum_exclusive(const Tensor& t, std::int64_t axis) {
  const std::int64_t rank = t.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("cumsum axis out of range");
  std::int64_t outer = 1, inner = 1;
  const std::int64_t extent = t.shape()[axis];
  for (std::int64_t d = 0; d < axis; ++d) outer *= t.shape()[d];
  for (std::int64_t d = axis + 1; d < rank; ++d) inner *= t.shape()[d];

  auto out = alloc(t.size());
  const auto td = t.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      double acc = 0;
      for (std::int64_t e = 0; e < extent; ++e) {
        out[(o * extent + e) * inner + i] = acc;
        acc += td[(o * extent + e) * inner + i];
      }
    }
  }
  Tape* tape = common_tape({&t});
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [t, outer, inner, extent](Tape& tp, std::span<const double> g) {
      bool fresh = false;
      double* gt = tp.grad_full(t.node(), t.size(), &fresh);
      // d out_e / d in_j = 1 for j < e, so d in_j += sum_{e > j} g_e.
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          double acc = 0;
          for (std::int64_t e = extent; e-- > 0;) {
            const std::int64_t at = (o * extent + e) * inner + i;
            if (fresh) gt[at] = acc;
            else gt[at] += acc;
            acc += g[at];
          }
        }
      }
    };
  }
  return make_result(t.shape(), std::move(out), tape, std::move(back));
}

Tensor square(const Tensor& t) {
  return unary(
      t, "square",
      [](std::span<const double> x, std::vector<double>& y) {
        CArr ex(x.data(), static_cast<std::int64_t>(x.size()));
        MArr ey(y.data(), static_cast<std::int64_t>(y.size()));
        ey = ex * ex;
      },
      [](std::span<const double> x, const std::vector<double>&, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (add ? gx[i] : 0.0) + 2.0 * x[i] * g[i];
      });
}

Tensor exp(const Tensor& t) {
  return unary(
      t, "exp",
      [](std::span<const double> x, std::vector<double>& y) {
        CArr ex(x.data(), static_cast<std::int64_t>(x.size()));
        MArr ey(y.data(), static_cast<std::int64_t>(y.size()));
        ey = ex.exp();
      },
      [](std::span<const double>, const std::vector<double>& y, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (add ? gx[i] : 0.0) + y[i] * g[i];
      });
}

Tensor sin(const Tensor& t) {
  return unary(
      t, "sin",
      [](std::span<const double> x, std::vector<double>& y) {
        CArr ex(x.data(), static_cast<std::int64_t>(x.size()));
        MArr ey(y.data(), static_cast<std::int64_t>(y.size()));
        ey = ex.sin();
      },
      [](std::span<const double> x, const std::vector<double>&, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (add ? gx[i] : 0.0) + std::cos(x[i]) * g[i];
      });
}

Tensor cos(const Tensor& t) {
  return unary(
      t, "cos",
      [](std::span<const double> x, std::vector<double>& y) {
        CArr ex(x.data(), static_cast<std::int64_t>(x.size()));
        MArr ey(y.data(), static_cast<std::int64_t>(y.size()));
        ey = ex.cos();
      },
      [](std::span<const double> x, const std::vector<double>&, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (add ? gx[i] : 0.0) - std::sin(x[i]) * g[i];
      });
}

Tensor relu(const Tensor& t) {
  return unary(
      t, "relu",
      [](std::span<const double> x, std::vector<double>& y) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      },
      [](std::span<const double> x, const std::vector<double>&, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = x[i] > 0.0 ? g[i] : 0.0;
          gx[i] = add ? gx[i] + v : v;
        }
      });
}

namespace {
double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& t) {
  return unary(
      t, "sigmoid",
      [](std::span<const double> x, std::vector<double>& y) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid_scalar(x[i]);
      },
      [](std::span<const double>, const std::vector<double>& y, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (add ? gx[i] : 0.0) + y[i] * (1.0 - y[i]) * g[i];
      });
}

Tensor softplus(const Tensor& t) {
  return unary(
      t, "softplus",
      [](std::span<const double> x, std::vector<double>& y) {
        for (std::size_t i = 0; i < y.size(); ++i) {
          y[i] = std::max(x[i], 0.0) + std::log1p(std::exp(-std::abs(x[i])));
        }
      },
      [](std::span<const double> x, const std::vector<double>&, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (add ? gx[i] : 0.0) + sigmoid_scalar(x[i]) * g[i];
      });
}

Tensor abs(const Tensor& t) {
  return unary(
      t, "abs",
      [](std::span<const double> x, std::vector<double>& y) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::abs(x[i]);
      },
      [](std::span<const double> x, const std::vector<double>&, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
          gx[i] = add ? gx[i] + v : v;
        }
      });
}

Tensor clamp(const Tensor& t, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("clamp requires lo < hi");
  return unary(
      t, "clamp",
      [lo, hi](std::span<const double> x, std::vector<double>& y) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::clamp(x[i], lo, hi);
      },
      [lo, hi](std::span<const double> x, const std::vector<double>&, std::span<const double> g,
               double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = (x[i] >= lo && x[i] <= hi) ? g[i] : 0.0;
          gx[i] = add ? gx[i] + v : v;
        }
      });
}

Tensor scale(const Tensor& t, double c) {
  return unary(
      t, "scale",
      [c](std::span<const double> x, std::vector<double>& y) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = c * x[i];
      },
      [c](std::span<const double>, const std::vector<double>&, std::span<const double> g,
          double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (add ? gx[i] : 0.0) + c * g[i];
      });
}

Tensor add_const(const Tensor& t, double c) {
  return unary(
      t, "add_const",
      [c](std::span<const double> x, std::vector<double>& y) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + c;
      },
      [](std::span<const double>, const std::vector<double>&, std::span<const double> g,
         double* gx, bool add) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (add ? gx[i] : 0.0) + g[i];
      });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (numel(shape) != t.size()) {
    throw std::invalid_argument("reshape to " + shape_str(shape) + " from " + shape_str(t.shape()));
  }
  Tape* tape = common_tape({&t});
  Tape::BackFn back;
  if (tape != nullptr) {
    back = [t](Tape& tp, std::span<const double> g) {
      bool fresh = false;
      double* gt = tp.grad_full(t.node(), t.size(), &fresh);
      const std::size_t n = static_cast<std::size_t>(t.size());
      if (fresh) std::copy_n(g.data(), n, gt);
      else for (std::size_t i = 0; i < n; ++i) gt[i] += g[i];
    };
  }
  // Shares the buffer: reshape is metadata-only.
  int node = tape ? tape->push(std::move(back)) : -1;
  return Tensor(std::move(shape), t.shared_data(), tape, node);
}

Tensor detach(const Tensor& t) { return Tensor(t.shape(), t.shared_data()); }

}  // namespace kdrf::ad
