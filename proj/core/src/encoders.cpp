#include "kdrf/encoders.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace kdrf {

using ad::Shape;

Tensor positional_encode(const Tensor& p, int freqs) {
  if (freqs <= 0) return p;
  std::vector<Tensor> parts;
  parts.reserve(1 + 2 * static_cast<std::size_t>(freqs));
  parts.push_back(p);
  double w = std::numbers::pi;
  for (int k = 0; k < freqs; ++k, w *= 2.0) {
    Tensor scaled = ad::scale(p, w);
    parts.push_back(ad::sin(scaled));
    parts.push_back(ad::cos(scaled));
  }
  return ad::concat(parts, -1);
}

std::array<double, 9> sh_basis(double x, double y, double z) {
  const double n2 = x * x + y * y + z * z;
  if (n2 < 1e-18) throw std::invalid_argument("sh_basis: zero-length direction");
  constexpr double kY00 = 0.28209479177387814;
  constexpr double kC1 = 0.4886025119029199;
  constexpr double kC2 = 1.0925484305920792;
  constexpr double kC20 = 0.31539156525252005;
  constexpr double kC22 = 0.5462742152960396;
  return {kY00,        kC1 * y,     kC1 * z,          kC1 * x,     kC2 * x * y,
          kC2 * y * z, kC20 * (3.0 * z * z - 1.0), kC2 * x * z, kC22 * (x * x - y * y)};
}

Tensor sh_encode(const Tensor& v) {
  if (v.rank() != 2 || v.shape()[1] != 3) {
    throw std::invalid_argument("sh_encode expects [B,3], got " + ad::shape_str(v.shape()));
  }
  const std::int64_t rows = v.shape()[0];
  std::vector<double> out(static_cast<std::size_t>(rows) * 9);
  const auto d = v.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto b = sh_basis(d[r * 3 + 0], d[r * 3 + 1], d[r * 3 + 2]);
    std::copy(b.begin(), b.end(), out.begin() + r * 9);
  }
  return Tensor(Shape{rows, 9}, std::move(out));
}

TriPlaneGrid make_triplane(ParamStore& store, const std::string& name, std::vector<int> scales,
                           int feat, double lo, double hi, Rng& rng) {
  if (scales.empty() || feat <= 0 || !(lo < hi)) throw std::invalid_argument("bad tri-plane config");
  TriPlaneGrid grid;
  grid.scales = std::move(scales);
  grid.feat = feat;
  grid.lo = lo;
  grid.hi = hi;
  const char* plane_names[3] = {"xy", "xz", "yz"};
  for (std::size_t s = 0; s < grid.scales.size(); ++s) {
    const int res = grid.scales[s];
    if (res < 2) throw std::invalid_argument("tri-plane resolution must be >= 2");
    std::array<int, 3> ids{};
    for (int c = 0; c < 3; ++c) {
      ids[static_cast<std::size_t>(c)] =
          store.add(name + ".s" + std::to_string(res) + "." + plane_names[c],
                    Shape{res, res, feat}, ParamStore::Kind::kGrid);
      auto& data = *store.slot(ids[static_cast<std::size_t>(c)]).data;
      for (auto& x : data) x = rng.uniform(0.9, 1.1);
    }
    grid.plane_slots.push_back(ids);
  }
  return grid;
}

namespace {

// Per-point, per-plane sampling record saved for the backward pass.
struct PlaneTap {
  std::int32_t ia, ib;
  double fa, fb;
};

struct SampleState {
  std::int64_t rows = 0;
  int feat = 0;
  std::vector<PlaneTap> taps;        // [rows * scales * 3]
  std::vector<double> plane_feats;   // [rows * scales * 3 * feat] sampled vectors
  std::vector<std::uint8_t> live;    // [rows * 3] axis inside bounds (1) or clamped (0)
};

constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

}  // namespace

Tensor triplane_encode(const Binding& b, const TriPlaneGrid& grid, const Tensor& pts) {
  if (pts.rank() != 2 || pts.shape()[1] != 3) {
    throw std::invalid_argument("triplane_encode expects [B,3], got " + ad::shape_str(pts.shape()));
  }
  const std::int64_t rows = pts.shape()[0];
  const int feat = grid.feat;
  const std::size_t n_scales = grid.scales.size();
  const double inv_extent = 1.0 / (grid.hi - grid.lo);
  const auto xd = pts.data();

  auto state = std::make_shared<SampleState>();
  state->rows = rows;
  state->feat = feat;
  state->taps.resize(static_cast<std::size_t>(rows) * n_scales * 3);
  state->plane_feats.resize(static_cast<std::size_t>(rows) * n_scales * 3 * static_cast<std::size_t>(feat));
  state->live.assign(static_cast<std::size_t>(rows) * 3, 1);

  const std::int64_t out_dim = grid.out_dim();
  std::vector<double> out(static_cast<std::size_t>(rows * out_dim));

  // Normalized in-plane coordinates per point, clamped into [0,1].
  std::vector<double> u(static_cast<std::size_t>(rows) * 3);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (int a = 0; a < 3; ++a) {
      double v = (xd[r * 3 + a] - grid.lo) * inv_extent;
      if (v <= 0.0) {
        if (v < 0.0) state->live[static_cast<std::size_t>(r * 3 + a)] = 0;
        v = 0.0;
      } else if (v >= 1.0) {
        if (v > 1.0) state->live[static_cast<std::size_t>(r * 3 + a)] = 0;
        v = 1.0;
      }
      u[static_cast<std::size_t>(r * 3 + a)] = v;
    }
  }

  for (std::size_t s = 0; s < n_scales; ++s) {
    const int res = grid.scales[s];
    const double to_grid = static_cast<double>(res - 1);
    const double* planes[3];
    for (int c = 0; c < 3; ++c) planes[c] = b[grid.plane_slots[s][static_cast<std::size_t>(c)]].data().data();

    for (std::int64_t r = 0; r < rows; ++r) {
      double* dst = out.data() + r * out_dim + static_cast<std::int64_t>(s) * feat;
      for (int f = 0; f < feat; ++f) dst[f] = 1.0;
      for (int c = 0; c < 3; ++c) {
        const double pa = u[static_cast<std::size_t>(r * 3 + kPlaneAxes[c][0])] * to_grid;
        const double pb = u[static_cast<std::size_t>(r * 3 + kPlaneAxes[c][1])] * to_grid;
        std::int32_t ia = static_cast<std::int32_t>(pa);
        std::int32_t ib = static_cast<std::int32_t>(pb);
        if (ia > res - 2) ia = res - 2;
        if (ib > res - 2) ib = res - 2;
        const double fa = pa - ia;
        const double fb = pb - ib;

        const double w00 = (1.0 - fa) * (1.0 - fb), w10 = fa * (1.0 - fb);
        const double w01 = (1.0 - fa) * fb, w11 = fa * fb;
        const double* p00 = planes[c] + (static_cast<std::int64_t>(ia) * res + ib) * feat;
        const double* p10 = p00 + static_cast<std::int64_t>(res) * feat;
        const double* p01 = p00 + feat;
        const double* p11 = p10 + feat;

        const std::size_t tap_idx = (static_cast<std::size_t>(r) * n_scales + s) * 3 + static_cast<std::size_t>(c);
        state->taps[tap_idx] = PlaneTap{ia, ib, fa, fb};
        double* sampled = state->plane_feats.data() + tap_idx * static_cast<std::size_t>(feat);
        for (int f = 0; f < feat; ++f) {
          const double v = w00 * p00[f] + w10 * p10[f] + w01 * p01[f] + w11 * p11[f];
          sampled[f] = v;
          dst[f] *= v;
        }
      }
    }
  }

  Tape* tape = pts.tracked() ? pts.tape() : (b.tape() != nullptr ? b.tape() : nullptr);
  if (tape == nullptr) return Tensor(Shape{rows, out_dim}, std::move(out));

  // Keep plane buffers alive for the backward pass.
  std::vector<std::shared_ptr<const std::vector<double>>> plane_data;
  std::vector<int> slot_ids;
  for (std::size_t s = 0; s < n_scales; ++s) {
    for (int c = 0; c < 3; ++c) {
      plane_data.push_back(b[grid.plane_slots[s][static_cast<std::size_t>(c)]].shared_data());
      slot_ids.push_back(grid.plane_slots[s][static_cast<std::size_t>(c)]);
    }
  }
  auto scales = grid.scales;
  const double d_grid = inv_extent;  // d(normalized)/dx; multiplied by (res-1) per scale

  auto back = [pts, state, plane_data, slot_ids, scales, feat, out_dim, d_grid](
                  Tape& tp, std::span<const double> g) {
    const std::int64_t rows = state->rows;
    const std::size_t n_scales = scales.size();
    double* pts_grad = nullptr;
    if (pts.tracked()) pts_grad = tp.grad_zeroed(pts.node(), pts.size());

    std::vector<double> d_plane(static_cast<std::size_t>(feat));
    for (std::size_t s = 0; s < n_scales; ++s) {
      const int res = scales[s];
      const double to_grid = static_cast<double>(res - 1);
      for (int c = 0; c < 3; ++c) {
        const std::size_t plane_idx = s * 3 + static_cast<std::size_t>(c);
        auto& sink = tp.runs_sink(slot_ids[plane_idx], feat);
        std::size_t run_at = sink.starts.size();
        sink.starts.resize(run_at + static_cast<std::size_t>(rows) * 4);
        sink.values.resize((run_at + static_cast<std::size_t>(rows) * 4) * static_cast<std::size_t>(feat));
        const double* plane = plane_data[plane_idx]->data();
        const int other1 = (c + 1) % 3, other2 = (c + 2) % 3;

        for (std::int64_t r = 0; r < rows; ++r) {
          const std::size_t base = (static_cast<std::size_t>(r) * n_scales + s) * 3;
          const double* g_s = g.data() + r * out_dim + static_cast<std::int64_t>(s) * feat;
          const double* f1 = state->plane_feats.data() + (base + static_cast<std::size_t>(other1)) * static_cast<std::size_t>(feat);
          const double* f2 = state->plane_feats.data() + (base + static_cast<std::size_t>(other2)) * static_cast<std::size_t>(feat);
          for (int f = 0; f < feat; ++f) d_plane[static_cast<std::size_t>(f)] = g_s[f] * f1[f] * f2[f];

          const PlaneTap& t = state->taps[base + static_cast<std::size_t>(c)];
          const double w00 = (1.0 - t.fa) * (1.0 - t.fb), w10 = t.fa * (1.0 - t.fb);
          const double w01 = (1.0 - t.fa) * t.fb, w11 = t.fa * t.fb;
          const std::int64_t i00 = (static_cast<std::int64_t>(t.ia) * res + t.ib) * feat;
          const std::int64_t i10 = i00 + static_cast<std::int64_t>(res) * feat;
          const std::int64_t i01 = i00 + feat;
          const std::int64_t i11 = i10 + feat;
          const double ws[4] = {w00, w10, w01, w11};
          const std::int64_t starts[4] = {i00, i10, i01, i11};
          for (int k = 0; k < 4; ++k) {
            sink.starts[run_at] = starts[k];
            double* dst = sink.values.data() + run_at * static_cast<std::size_t>(feat);
            const double w = ws[k];
            for (int f = 0; f < feat; ++f) dst[f] = w * d_plane[static_cast<std::size_t>(f)];
            ++run_at;
          }

          if (pts_grad != nullptr) {
            const double* p00 = plane + i00;
            const double* p10 = plane + i10;
            const double* p01 = plane + i01;
            const double* p11 = plane + i11;
            double dpa = 0.0, dpb = 0.0;
            for (int f = 0; f < feat; ++f) {
              const double df = d_plane[static_cast<std::size_t>(f)];
              dpa += df * ((1.0 - t.fb) * (p10[f] - p00[f]) + t.fb * (p11[f] - p01[f]));
              dpb += df * ((1.0 - t.fa) * (p01[f] - p00[f]) + t.fa * (p11[f] - p10[f]));
            }
            const int axis_a = kPlaneAxes[c][0], axis_b = kPlaneAxes[c][1];
            if (state->live[static_cast<std::size_t>(r * 3 + axis_a)]) {
              pts_grad[r * 3 + axis_a] += dpa * to_grid * d_grid;
            }
            if (state->live[static_cast<std::size_t>(r * 3 + axis_b)]) {
              pts_grad[r * 3 + axis_b] += dpb * to_grid * d_grid;
            }
          }
        }
      }
    }
  };

  auto data = std::make_shared<const std::vector<double>>(std::move(out));
  const int node = tape->push(std::move(back));
  return Tensor(Shape{rows, out_dim}, std::move(data), tape, node);
}

Tensor tv_loss(const Binding& b, const TriPlaneGrid& grid) {
  const int feat = grid.feat;
  double total = 0.0;
  for (std::size_t s = 0; s < grid.scales.size(); ++s) {
    const int res = grid.scales[s];
    double scale_acc = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double* p = b[grid.plane_slots[s][static_cast<std::size_t>(c)]].data().data();
      const std::int64_t row = static_cast<std::int64_t>(res) * feat;
      double acc = 0.0;
      for (std::int64_t i = 0; i < res; ++i) {
        for (std::int64_t j = 0; j < res; ++j) {
          const double* x = p + i * row + j * feat;
          if (i >= 1) {
            const double* up = x - row;
            for (int f = 0; f < feat; ++f) {
              const double d = x[f] - up[f];
              acc += d * d;
            }
          }
          if (j >= 1) {
            const double* left = x - feat;
            for (int f = 0; f < feat; ++f) {
              const double d = x[f] - left[f];
              acc += d * d;
            }
          }
        }
      }
      scale_acc += acc;
    }
    total += scale_acc / (3.0 * feat);
  }

  Tape* tape = b.tape();
  if (tape == nullptr) return Tensor::scalar(total);

  std::vector<std::shared_ptr<const std::vector<double>>> plane_data;
  std::vector<int> slot_ids;
  for (std::size_t s = 0; s < grid.scales.size(); ++s) {
    for (int c = 0; c < 3; ++c) {
      plane_data.push_back(b[grid.plane_slots[s][static_cast<std::size_t>(c)]].shared_data());
      slot_ids.push_back(grid.plane_slots[s][static_cast<std::size_t>(c)]);
    }
  }
  auto scales = grid.scales;

  auto back = [plane_data, slot_ids, scales, feat](Tape& tp, std::span<const double> g) {
    for (std::size_t s = 0; s < scales.size(); ++s) {
      const int res = scales[s];
      const double coef = 2.0 * g[0] / (3.0 * feat);
      const std::int64_t row = static_cast<std::int64_t>(res) * feat;
      for (int c = 0; c < 3; ++c) {
        const std::size_t plane_idx = s * 3 + static_cast<std::size_t>(c);
        const double* p = plane_data[plane_idx]->data();
        auto& sink = tp.dense_sink(slot_ids[plane_idx],
                                   static_cast<std::int64_t>(plane_data[plane_idx]->size()));
        for (std::int64_t i = 0; i < res; ++i) {
          for (std::int64_t j = 0; j < res; ++j) {
            const std::int64_t at = i * row + j * feat;
            const double* x = p + at;
            double* gx = sink.data() + at;
            if (i >= 1) {
              const double* up = x - row;
              double* gup = gx - row;
              for (int f = 0; f < feat; ++f) {
                const double d = coef * (x[f] - up[f]);
                gx[f] += d;
                gup[f] -= d;
              }
            }
            if (j >= 1) {
              const double* left = x - feat;
              double* gleft = gx - feat;
              for (int f = 0; f < feat; ++f) {
                const double d = coef * (x[f] - left[f]);
                gx[f] += d;
                gleft[f] -= d;
              }
            }
          }
        }
      }
    }
  };

  const int node = tape->push(std::move(back));
  return Tensor(Shape{1}, std::make_shared<const std::vector<double>>(std::vector<double>{total}),
                tape, node);
}

double tv_loss_accumulate(const ParamStore& store, const TriPlaneGrid& grid, double coef,
                          std::vector<std::vector<double>>& grad_slots) {
  const int feat = grid.feat;
  double total = 0.0;
  for (std::size_t s = 0; s < grid.scales.size(); ++s) {
    const int res = grid.scales[s];
    const double gcoef = 2.0 * coef / (3.0 * feat);
    const std::int64_t row = static_cast<std::int64_t>(res) * feat;
    double scale_acc = 0.0;
    for (int c = 0; c < 3; ++c) {
      const int slot = grid.plane_slots[s][static_cast<std::size_t>(c)];
      const double* p = store.slot(slot).data->data();
      double* g = grad_slots[static_cast<std::size_t>(slot)].data();
      double acc = 0.0;
      for (std::int64_t i = 0; i < res; ++i) {
        for (std::int64_t j = 0; j < res; ++j) {
          const std::int64_t at = i * row + j * feat;
          const double* x = p + at;
          double* gx = g + at;
          if (i >= 1) {
            const double* up = x - row;
            double* gup = gx - row;
            for (int f = 0; f < feat; ++f) {
              const double d = x[f] - up[f];
              acc += d * d;
              gx[f] += gcoef * d;
              gup[f] -= gcoef * d;
            }
          }
          if (j >= 1) {
            const double* left = x - feat;
            double* gleft = gx - feat;
            for (int f = 0; f < feat; ++f) {
              const double d = x[f] - left[f];
              acc += d * d;
              gx[f] += gcoef * d;
              gleft[f] -= gcoef * d;
            }
          }
        }
      }
      scale_acc += acc;
    }
    total += scale_acc / (3.0 * feat);
  }
  return total;
}

}  // namespace kdrf
