#pragma once

#include <vector>

namespace ldf {

/// Images are row-major H·W·C doubles in [0, 1].
struct ImageView {
  const std::vector<double>* data;
  int width;
  int height;
  int channels;
};

/// Mean absolute error over all entries.
double l1_error(const std::vector<double>& a, const std::vector<double>& b);
double mse(const std::vector<double>& a, const std::vector<double>& b);

constexpr double kPsnrCap = 99.0;

/// 10·log10(1 / MSE), capped at 99 dB (identical images).
double psnr_from_mse(double mse);
double psnr(const std::vector<double>& a, const std::vector<double>& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean SSIM with a Gaussian window over valid (fully covered) positions,
/// averaged over channels.
double ssim(const ImageView& a, const ImageView& b, const SsimOptions& options = {});

struct ImageMetrics {
  double l1 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

ImageMetrics compare_images(const std::vector<double>& rendered, const std::vector<double>& target, int width,
                            int height);

}  // namespace ldf
