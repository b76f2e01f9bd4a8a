#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace phrec {

using Dims3 = std::array<int, 3>;
using Spacing3 = std::array<double, 3>;

/// Dense 3D scalar field, x fastest-varying. Values are stored as double in
/// memory; on disk the VOL1 format quantizes to little-endian float32.
struct Volume {
    Dims3 dims{0, 0, 0};
    Spacing3 spacing_mm{1.0, 1.0, 1.0};
    std::vector<double> data;

    Volume() = default;
    Volume(Dims3 d, Spacing3 s, double fill = 0.0)
        : dims(d), spacing_mm(s),
          data(static_cast<std::size_t>(d[0]) * d[1] * d[2], fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
    }
    double at(int i, int j, int k) const { return data[index(i, j, k)]; }
    double& at(int i, int j, int k) { return data[index(i, j, k)]; }
    bool same_grid(const Volume& o) const { return dims == o.dims; }
};

/// Binary indicator field; values exactly 0 or 1.
struct Mask {
    Dims3 dims{0, 0, 0};
    Spacing3 spacing_mm{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(Dims3 d, Spacing3 s, std::uint8_t fill = 0)
        : dims(d), spacing_mm(s),
          data(static_cast<std::size_t>(d[0]) * d[1] * d[2], fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t count() const;
};

/// Soft mask with weights in [0, 1], the result of smoothing a Mask.
struct WeightMask {
    Dims3 dims{0, 0, 0};
    Spacing3 spacing_mm{1.0, 1.0, 1.0};
    std::vector<double> data;

    std::size_t size() const { return data.size(); }
};

/// Integer label field (region atlas backing store).
struct LabelVolume {
    Dims3 dims{0, 0, 0};
    Spacing3 spacing_mm{1.0, 1.0, 1.0};
    std::vector<std::uint16_t> data;

    std::size_t size() const { return data.size(); }
};

// --- VOL1 / NIfTI file I/O ---------------------------------------------------
//
// VOL1 pair: <stem>.vol1.json sidecar + <stem>.vol1.raw payload.
// Paths may be given as the stem, the .vol1.json sidecar, or the .vol1.raw
// file. load_volume additionally accepts an uncompressed NIfTI-1 .nii file
// (float32 or int16, identity-like orientation only).

Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);

Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& m, const std::filesystem::path& path);

LabelVolume load_labels(const std::filesystem::path& path);
void save_labels(const LabelVolume& l, const std::filesystem::path& path);

// --- Operations ---------------------------------------------------------------

/// Separable Gaussian convolution; kernel sigma in voxels is sigma_mm divided
/// by the per-axis spacing, truncated at radius ceil(4*sigma), replicate
/// boundary. sigma_mm == 0 returns the input unchanged.
Volume gaussian_smooth(const Volume& v, double sigma_mm);

/// 2x2x2 average pooling with stride 2; odd trailing voxels are dropped.
Volume downsample_avg2(const Volume& v);

/// Arithmetic mean of v over voxels where m == 1. Errors on an empty mask.
double masked_mean(const Volume& v, const Mask& m);

} // namespace phrec
