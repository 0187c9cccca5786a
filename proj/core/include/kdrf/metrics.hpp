#pragma once

#include <optional>

#include "kdrf/image.hpp"

namespace kdrf {

// 10*log10(1/MSE) for values in [0,1]; identical images report the 100 dB cap.
double psnr(const Image& a, const Image& b);
inline constexpr double kPsnrCap = 100.0;

// Structural similarity: channel-mean grayscale, 11x11 Gaussian window with
// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1, mean over the valid map.
// Requires images of at least 11x11.
double ssim(const Image& a, const Image& b);

struct MetricRecord {
  int index = 0;
  double psnr = 0, ssim = 0;
  double average2 = 0;  // geometric mean of MSE and sqrt(1-SSIM)
};

struct MetricReport {
  std::vector<MetricRecord> per_image;
  double mean_psnr = 0, mean_ssim = 0, mean_average2 = 0;
  std::optional<double> deformation_rmse;
};

double average2(double psnr_db, double ssim_value);

}  // namespace kdrf
