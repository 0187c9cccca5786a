#include "kdrf/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace kdrf {

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("psnr: image shapes differ");
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < a.px.size(); ++i) {
    const double d = a.px[i] - b.px[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.px.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01, kK2 = 0.03, kL = 1.0;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWin);
  double total = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= total;
  return k;
}

std::vector<double> to_gray(const Image& img) {
  std::vector<double> g(img.pixels());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (img.px[i * 3] + img.px[i * 3 + 1] + img.px[i * 3 + 2]) / 3.0;
  }
  return g;
}

// Separable valid-region convolution with the 11-tap Gaussian.
std::vector<double> conv_valid(const std::vector<double>& img, int w, int h, int& ow, int& oh) {
  const auto k = gaussian_kernel();
  ow = w - kWin + 1;
  oh = h - kWin + 1;
  std::vector<double> rows(static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("ssim: image shapes differ");
  }
  if (a.width < kWin || a.height < kWin) {
    throw std::invalid_argument("ssim: images must be at least 11x11");
  }
  const auto ga = to_gray(a);
  const auto gb = to_gray(b);
  const int w = a.width, h = a.height;

  std::vector<double> ga2(ga.size()), gb2(gb.size()), gab(ga.size());
  for (std::size_t i = 0; i < ga.size(); ++i) {
    ga2[i] = ga[i] * ga[i];
    gb2[i] = gb[i] * gb[i];
    gab[i] = ga[i] * gb[i];
  }
  int ow = 0, oh = 0;
  const auto mu_a = conv_valid(ga, w, h, ow, oh);
  const auto mu_b = conv_valid(gb, w, h, ow, oh);
  const auto s_a2 = conv_valid(ga2, w, h, ow, oh);
  const auto s_b2 = conv_valid(gb2, w, h, ow, oh);
  const auto s_ab = conv_valid(gab, w, h, ow, oh);

  const double c1 = (kK1 * kL) * (kK1 * kL);
  const double c2 = (kK2 * kL) * (kK2 * kL);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = s_a2[i] - ma * ma;
    const double vb = s_b2[i] - mb * mb;
    const double cov = s_ab[i] - ma * mb;
    acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(mu_a.size());
}

double average2(double psnr_db, double ssim_value) {
  const double mse = std::pow(10.0, -psnr_db / 10.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - ssim_value));
  return std::sqrt(mse * s);
}

}  // namespace kdrf
