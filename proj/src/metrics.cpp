#include "phrec/metrics.hpp"

#include "phrec/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace phrec {

namespace {

void check_same_grid(const Volume& x, const Volume& y, const char* op) {
    if (x.dims != y.dims) throw ValidationError(std::string(op) + ": dim mismatch");
    if (x.data.empty()) throw ValidationError(std::string(op) + ": empty volume");
}

struct PairStats {
    double mu_x, mu_y, var_x, var_y, cov; // population (1/n) moments
};

PairStats pair_stats(const double* x, const double* y, std::size_t n) {
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
    }
    PairStats s;
    s.mu_x = sx / static_cast<double>(n);
    s.mu_y = sy / static_cast<double>(n);
    double vx = 0.0, vy = 0.0, cxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - s.mu_x;
        const double dy = y[i] - s.mu_y;
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
    }
    s.var_x = vx / static_cast<double>(n);
    s.var_y = vy / static_cast<double>(n);
    s.cov = cxy / static_cast<double>(n);
    return s;
}

double ssim_from_stats(const PairStats& s, double c1, double c2) {
    const double num = (2.0 * (s.mu_x * s.mu_y) + c1) * (2.0 * s.cov + c2);
    const double den = (s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1) * (s.var_x + s.var_y + c2);
    return num / den;
}

// signed power: keeps a negative component (anticorrelated images) from
// producing NaN while preserving |value| <= 1 semantics
double signed_pow(double v, double w) {
    return v < 0.0 ? -std::pow(-v, w) : std::pow(v, w);
}

} // namespace

void MetricConfig::validate() const {
    if (!(psnr_max > 0.0)) throw ValidationError("psnr_max must be positive");
    if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0))
        throw ValidationError("ssim constants must be positive");
    if (msssim_levels < 1) throw ValidationError("msssim_levels must be >= 1");
    if (static_cast<int>(msssim_weights.size()) != msssim_levels)
        throw ValidationError("msssim_weights length must equal msssim_levels");
    if (ssim_window < 0) throw ValidationError("ssim_window must be >= 0");
}

double mse(const Volume& x, const Volume& y) {
    check_same_grid(x, y, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double d = x.data[i] - y.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.data.size());
}

double psnr(const Volume& x, const Volume& y, double max_val) {
    if (!(max_val > 0.0)) throw ValidationError("psnr: max_val must be positive");
    const double e = mse(x, y);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / e);
}

double ssim(const Volume& x, const Volume& y, const MetricConfig& cfg) {
    cfg.validate();
    check_same_grid(x, y, "ssim");
    if (cfg.ssim_window == 0)
        return ssim_from_stats(pair_stats(x.data.data(), y.data.data(), x.data.size()),
                               cfg.ssim_c1, cfg.ssim_c2);

    const int w = cfg.ssim_window;
    for (int d : x.dims)
        if (d < w) throw ValidationError("ssim: window larger than volume");
    const std::size_t wn = static_cast<std::size_t>(w) * w * w;
    std::vector<double> bx(wn), by(wn);
    double acc = 0.0;
    std::size_t count = 0;
    for (int k = 0; k + w <= x.dims[2]; ++k)
        for (int j = 0; j + w <= x.dims[1]; ++j)
            for (int i = 0; i + w <= x.dims[0]; ++i) {
                std::size_t q = 0;
                for (int dk = 0; dk < w; ++dk)
                    for (int dj = 0; dj < w; ++dj)
                        for (int di = 0; di < w; ++di, ++q) {
                            bx[q] = x.at(i + di, j + dj, k + dk);
                            by[q] = y.at(i + di, j + dj, k + dk);
                        }
                acc += ssim_from_stats(pair_stats(bx.data(), by.data(), wn), cfg.ssim_c1,
                                       cfg.ssim_c2);
                ++count;
            }
    return acc / static_cast<double>(count);
}

double ms_ssim(const Volume& x, const Volume& y, const MetricConfig& cfg) {
    cfg.validate();
    check_same_grid(x, y, "ms_ssim");
    const int min_dim = std::min({x.dims[0], x.dims[1], x.dims[2]});
    const int needed = 2 << (cfg.msssim_levels - 1); // 2^(levels-1) * 2
    if (min_dim < needed)
        throw ValidationError("ms_ssim: volume too small for " +
                              std::to_string(cfg.msssim_levels) + " levels (min dim " +
                              std::to_string(min_dim) + " < " + std::to_string(needed) + ")");

    const double c1 = cfg.ssim_c1;
    const double c2 = cfg.ssim_c2;

    Volume cx = x, cy = y;
    double result = 1.0;
    for (int level = 1; level <= cfg.msssim_levels; ++level) {
        const double w = cfg.msssim_weights[level - 1];
        const PairStats s = pair_stats(cx.data.data(), cy.data.data(), cx.data.size());
        // contrast * structure with c3 = c2/2 collapses algebraically to the
        // second SSIM factor; the combined form also keeps ms_ssim(x, x)
        // exactly 1
        const double cs = (2.0 * s.cov + c2) / (s.var_x + s.var_y + c2);
        result *= signed_pow(cs, w);
        if (level == cfg.msssim_levels) {
            const double lum =
                (2.0 * (s.mu_x * s.mu_y) + c1) / (s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1);
            result *= signed_pow(lum, w);
        } else {
            cx = downsample_avg2(cx);
            cy = downsample_avg2(cy);
        }
    }
    return result;
}

ImageMetrics image_metrics(const Volume& x, const Volume& y, const MetricConfig& cfg) {
    ImageMetrics m;
    m.mse = mse(x, y);
    m.psnr = psnr(x, y, cfg.psnr_max);
    m.ssim = ssim(x, y, cfg);
    m.ms_ssim = ms_ssim(x, y, cfg);
    return m;
}

double healthiness(const Volume& x, const Mask& anomaly_mask, const Mask& brain_mask) {
    if (x.dims != anomaly_mask.dims || x.dims != brain_mask.dims)
        throw ValidationError("healthiness: dim mismatch");
    Mask complement;
    complement.dims = brain_mask.dims;
    complement.spacing_mm = brain_mask.spacing_mm;
    complement.data.resize(brain_mask.data.size());
    for (std::size_t i = 0; i < brain_mask.data.size(); ++i) {
        if (anomaly_mask.data[i] && !brain_mask.data[i])
            throw ValidationError("healthiness: anomaly mask leaves the brain mask");
        complement.data[i] = brain_mask.data[i] && !anomaly_mask.data[i];
    }
    const double mu_mask = masked_mean(x, anomaly_mask);   // errors on empty anomaly
    const double mu_rest = masked_mean(x, complement);     // errors on empty complement
    return mu_mask / mu_rest;
}

} // namespace phrec
