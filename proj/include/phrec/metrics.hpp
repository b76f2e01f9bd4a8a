#pragma once

#include "phrec/volume.hpp"

#include <vector>

namespace phrec {

struct MetricConfig {
    double psnr_max = 1.0;
    double ssim_c1 = 0.01;
    double ssim_c2 = 0.03;
    int msssim_levels = 5;
    std::vector<double> msssim_weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    // 0 = whole-image global statistics (the default); > 0 = cubic sliding
    // window of that side, averaged over fully contained positions.
    int ssim_window = 0;

    void validate() const;
};

struct ImageMetrics {
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double ms_ssim = 0.0;
};

double mse(const Volume& x, const Volume& y);

/// 10*log10(max_val^2 / mse); +infinity when the images are identical.
double psnr(const Volume& x, const Volume& y, double max_val = 1.0);

double ssim(const Volume& x, const Volume& y, const MetricConfig& cfg = {});

/// Multi-scale SSIM: contrast * structure at every scale, luminance at the
/// coarsest, scales produced by repeated 2x average pooling.
double ms_ssim(const Volume& x, const Volume& y, const MetricConfig& cfg = {});

ImageMetrics image_metrics(const Volume& x, const Volume& y, const MetricConfig& cfg = {});

/// Ratio of mean uptake inside the anomaly mask to mean uptake in the rest of
/// the brain. Close to 1 for healthy images, below 1 under hypometabolism.
double healthiness(const Volume& x, const Mask& anomaly_mask, const Mask& brain_mask);

} // namespace phrec
