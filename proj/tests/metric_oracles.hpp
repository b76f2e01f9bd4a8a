#pragma once

// Definition-level implementations of the reconstruction metrics, written as
// plain loops independent of the library code paths. Used by the unit tests
// and the acceptance suite.

#include "phrec/metrics.hpp"
#include "phrec/volume.hpp"

#include <cmath>
#include <vector>

namespace metric_oracles {

inline double mse_oracle(const phrec::Volume& x, const phrec::Volume& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i)
        acc += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
    return acc / double(x.data.size());
}

inline double psnr_oracle(const phrec::Volume& x, const phrec::Volume& y, double max_val) {
    return 10.0 * std::log10(max_val * max_val / mse_oracle(x, y));
}

struct Moments {
    double mx, my, vx, vy, cov;
};

inline Moments moments_oracle(const std::vector<double>& x, const std::vector<double>& y) {
    Moments m{0, 0, 0, 0, 0};
    const double n = double(x.size());
    for (double v : x) m.mx += v;
    for (double v : y) m.my += v;
    m.mx /= n;
    m.my /= n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        m.vx += (x[i] - m.mx) * (x[i] - m.mx);
        m.vy += (y[i] - m.my) * (y[i] - m.my);
        m.cov += (x[i] - m.mx) * (y[i] - m.my);
    }
    m.vx /= n;
    m.vy /= n;
    m.cov /= n;
    return m;
}

inline double ssim_oracle(const phrec::Volume& x, const phrec::Volume& y, double c1, double c2) {
    const Moments m = moments_oracle(x.data, y.data);
    return ((2.0 * m.mx * m.my + c1) * (2.0 * m.cov + c2)) /
           ((m.mx * m.mx + m.my * m.my + c1) * (m.vx + m.vy + c2));
}

inline phrec::Volume block_mean_downsample_oracle(const phrec::Volume& v) {
    phrec::Volume out;
    out.dims = {v.dims[0] / 2, v.dims[1] / 2, v.dims[2] / 2};
    out.spacing_mm = {2 * v.spacing_mm[0], 2 * v.spacing_mm[1], 2 * v.spacing_mm[2]};
    out.data.assign(std::size_t(out.dims[0]) * out.dims[1] * out.dims[2], 0.0);
    for (int k = 0; k < out.dims[2]; ++k)
        for (int j = 0; j < out.dims[1]; ++j)
            for (int i = 0; i < out.dims[0]; ++i) {
                double s = 0.0;
                for (int dk = 0; dk < 2; ++dk)
                    for (int dj = 0; dj < 2; ++dj)
                        for (int di = 0; di < 2; ++di)
                            s += v.at(2 * i + di, 2 * j + dj, 2 * k + dk);
                out.at(i, j, k) = s / 8.0;
            }
    return out;
}

// Composes per-scale contrast/structure (and coarsest-scale luminance)
// computed independently at every scale.
inline double ms_ssim_oracle(const phrec::Volume& x, const phrec::Volume& y,
                             const phrec::MetricConfig& cfg) {
    phrec::Volume cx = x, cy = y;
    const double c1 = cfg.ssim_c1, c2 = cfg.ssim_c2, c3 = cfg.ssim_c2 / 2.0;
    auto spow = [](double v, double w) {
        return v < 0.0 ? -std::pow(-v, w) : std::pow(v, w);
    };
    double result = 1.0;
    for (int level = 1; level <= cfg.msssim_levels; ++level) {
        const double w = cfg.msssim_weights[level - 1];
        const Moments m = moments_oracle(cx.data, cy.data);
        const double sx = std::sqrt(m.vx), sy = std::sqrt(m.vy);
        const double contrast = (2.0 * sx * sy + c2) / (m.vx + m.vy + c2);
        const double structure = (m.cov + c3) / (sx * sy + c3);
        result *= std::pow(contrast, w) * spow(structure, w);
        if (level == cfg.msssim_levels) {
            const double lum = (2.0 * m.mx * m.my + c1) / (m.mx * m.mx + m.my * m.my + c1);
            result *= spow(lum, w);
        } else {
            cx = block_mean_downsample_oracle(cx);
            cy = block_mean_downsample_oracle(cy);
        }
    }
    return result;
}

} // namespace metric_oracles
