#include "phrec/volume.hpp"
#include "phrec/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace phrec {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::size_t Mask::count() const {
    std::size_t n = 0;
    for (auto v : data) n += (v != 0);
    return n;
}

namespace {

constexpr const char* kJsonSuffix = ".vol1.json";
constexpr const char* kRawSuffix = ".vol1.raw";

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Accepts <stem>, <stem>.vol1.json or <stem>.vol1.raw and returns <stem>.
fs::path vol1_stem(const fs::path& path) {
    std::string s = path.string();
    if (ends_with(s, kJsonSuffix)) return s.substr(0, s.size() - std::strlen(kJsonSuffix));
    if (ends_with(s, kRawSuffix)) return s.substr(0, s.size() - std::strlen(kRawSuffix));
    return path;
}

struct Vol1Header {
    Dims3 dims;
    Spacing3 spacing;
    std::string dtype;
};

Vol1Header read_vol1_header(const fs::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open " + json_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("bad VOL1 sidecar " + json_path.string() + ": " + e.what());
    }
    Vol1Header h;
    try {
        auto d = j.at("dims");
        auto s = j.at("spacing_mm");
        h.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
        h.spacing = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
        h.dtype = j.at("dtype").get<std::string>();
        if (j.at("order").get<std::string>() != "x-fastest")
            throw ValidationError("unsupported order in " + json_path.string());
    } catch (const json::exception& e) {
        throw ValidationError("bad VOL1 sidecar " + json_path.string() + ": " + e.what());
    }
    for (int d : h.dims)
        if (d <= 0) throw ValidationError("non-positive dim in " + json_path.string());
    for (double s : h.spacing)
        if (!(s > 0.0)) throw ValidationError("non-positive spacing in " + json_path.string());
    return h;
}

void write_vol1_header(const fs::path& json_path, const Dims3& dims, const Spacing3& spacing,
                       const std::string& dtype) {
    json j;
    j["dims"] = {dims[0], dims[1], dims[2]};
    j["spacing_mm"] = {spacing[0], spacing[1], spacing[2]};
    j["dtype"] = dtype;
    j["order"] = "x-fastest";
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + json_path.string());
}

std::vector<char> read_raw(const fs::path& raw_path, std::size_t expected_bytes) {
    std::ifstream in(raw_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + raw_path.string());
    std::vector<char> buf(expected_bytes);
    in.read(buf.data(), static_cast<std::streamsize>(expected_bytes));
    if (static_cast<std::size_t>(in.gcount()) != expected_bytes)
        throw ValidationError("length mismatch in " + raw_path.string() + ": expected " +
                              std::to_string(expected_bytes) + " bytes, got " +
                              std::to_string(in.gcount()));
    char extra;
    if (in.read(&extra, 1))
        throw ValidationError("length mismatch in " + raw_path.string() + ": file too long");
    return buf;
}

void write_raw(const fs::path& raw_path, const char* bytes, std::size_t n) {
    std::ofstream out(raw_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + raw_path.string());
    out.write(bytes, static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed for " + raw_path.string());
}

template <typename T>
T byteswap_scalar(T v) {
    auto b = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(b.begin(), b.end());
    return std::bit_cast<T>(b);
}

// Files are little-endian by definition; on a big-endian host every scalar is
// swapped after the memcpy.
template <typename T>
void from_le(T* values, std::size_t n) {
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < n; ++i) values[i] = byteswap_scalar(values[i]);
    } else {
        (void)values;
        (void)n;
    }
}

std::size_t checked_voxel_count(const Dims3& dims) {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
}

// --- minimal NIfTI-1 reader ---------------------------------------------------

struct NiftiFields {
    std::int32_t sizeof_hdr;
    std::int16_t dim[8];
    std::int16_t datatype;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern[3];
    float srow[3][4];
    char magic[4];
};

template <typename T>
T read_at(const std::vector<char>& buf, std::size_t off, bool swap) {
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    if (swap) v = byteswap_scalar(v);
    return v;
}

Volume load_nifti(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> hdr(348);
    in.read(hdr.data(), 348);
    if (in.gcount() != 348) throw ValidationError("truncated NIfTI header in " + path.string());

    bool swap = false;
    std::int32_t sizeof_hdr = read_at<std::int32_t>(hdr, 0, false);
    if (sizeof_hdr != 348) {
        if (byteswap_scalar(sizeof_hdr) == 348)
            swap = true;
        else
            throw ValidationError("not a NIfTI-1 file: " + path.string());
    }

    NiftiFields f{};
    f.sizeof_hdr = 348;
    for (int i = 0; i < 8; ++i) f.dim[i] = read_at<std::int16_t>(hdr, 40 + 2 * i, swap);
    f.datatype = read_at<std::int16_t>(hdr, 70, swap);
    for (int i = 0; i < 8; ++i) f.pixdim[i] = read_at<float>(hdr, 76 + 4 * i, swap);
    f.vox_offset = read_at<float>(hdr, 108, swap);
    f.scl_slope = read_at<float>(hdr, 112, swap);
    f.scl_inter = read_at<float>(hdr, 116, swap);
    f.qform_code = read_at<std::int16_t>(hdr, 252, swap);
    f.sform_code = read_at<std::int16_t>(hdr, 254, swap);
    for (int i = 0; i < 3; ++i) f.quatern[i] = read_at<float>(hdr, 256 + 4 * i, swap);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) f.srow[r][c] = read_at<float>(hdr, 280 + 16 * r + 4 * c, swap);
    std::memcpy(f.magic, hdr.data() + 344, 4);

    if (std::strncmp(f.magic, "n+1", 3) != 0)
        throw ValidationError("unsupported NIfTI magic (need single-file n+1) in " + path.string());
    if (f.dim[0] < 3)
        throw ValidationError("NIfTI must be at least 3-dimensional: " + path.string());
    for (int i = 4; i <= f.dim[0]; ++i)
        if (f.dim[i] > 1)
            throw ValidationError("NIfTI with >3 non-trivial dims unsupported: " + path.string());

    if (f.sform_code > 0) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                const double v = f.srow[r][c];
                if (r == c ? v <= 0.0 : std::abs(v) > 1e-5)
                    throw ValidationError("non-identity NIfTI orientation unsupported: " +
                                          path.string());
            }
    } else if (f.qform_code > 0) {
        for (float q : f.quatern)
            if (std::abs(q) > 1e-5)
                throw ValidationError("non-identity NIfTI orientation unsupported: " +
                                      path.string());
    }

    Volume v;
    v.dims = {f.dim[1], f.dim[2], f.dim[3]};
    for (int d : v.dims)
        if (d <= 0) throw ValidationError("bad NIfTI dims in " + path.string());
    for (int a = 0; a < 3; ++a) {
        const double s = f.pixdim[a + 1];
        v.spacing_mm[a] = s > 0.0 ? s : 1.0;
    }

    const std::size_t n = checked_voxel_count(v.dims);
    const std::size_t elem = f.datatype == 16 ? 4 : f.datatype == 4 ? 2 : 0;
    if (elem == 0)
        throw ValidationError("unsupported NIfTI dtype " + std::to_string(f.datatype) +
                              " (need float32 or int16) in " + path.string());

    const auto off = static_cast<std::streamoff>(f.vox_offset);
    if (off < 348) throw ValidationError("bad vox_offset in " + path.string());
    in.seekg(off);
    std::vector<char> payload(n * elem);
    in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(in.gcount()) != payload.size())
        throw ValidationError("length mismatch in " + path.string());

    const bool scaled = f.scl_slope != 0.0f && f.scl_slope != 1.0f;
    v.data.resize(n);
    if (f.datatype == 16) {
        std::vector<float> raw(n);
        std::memcpy(raw.data(), payload.data(), payload.size());
        if (swap)
            for (auto& x : raw) x = byteswap_scalar(x);
        for (std::size_t i = 0; i < n; ++i)
            v.data[i] = scaled ? raw[i] * static_cast<double>(f.scl_slope) + f.scl_inter : raw[i];
    } else {
        std::vector<std::int16_t> raw(n);
        std::memcpy(raw.data(), payload.data(), payload.size());
        if (swap)
            for (auto& x : raw) x = byteswap_scalar(x);
        for (std::size_t i = 0; i < n; ++i)
            v.data[i] = scaled ? raw[i] * static_cast<double>(f.scl_slope) + f.scl_inter : raw[i];
    }
    for (double x : v.data)
        if (!std::isfinite(x)) throw ValidationError("non-finite voxel in " + path.string());
    return v;
}

} // namespace

Volume load_volume(const fs::path& path) {
    if (ends_with(path.string(), ".nii")) return load_nifti(path);
    const fs::path stem = vol1_stem(path);
    const fs::path jp = stem.string() + kJsonSuffix;
    const fs::path rp = stem.string() + kRawSuffix;
    const Vol1Header h = read_vol1_header(jp);
    if (h.dtype != "f32le")
        throw ValidationError("expected dtype f32le in " + jp.string() + ", got " + h.dtype);
    const std::size_t n = checked_voxel_count(h.dims);
    auto buf = read_raw(rp, n * 4);
    Volume v;
    v.dims = h.dims;
    v.spacing_mm = h.spacing;
    v.data.resize(n);
    std::vector<float> raw(n);
    std::memcpy(raw.data(), buf.data(), buf.size());
    from_le(raw.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(raw[i])) throw ValidationError("non-finite voxel in " + rp.string());
        v.data[i] = raw[i];
    }
    return v;
}

void save_volume(const Volume& v, const fs::path& path) {
    if (v.data.size() != checked_voxel_count(v.dims))
        throw ValidationError("volume data length does not match dims");
    const fs::path stem = vol1_stem(path);
    std::vector<float> raw(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i) raw[i] = static_cast<float>(v.data[i]);
    from_le(raw.data(), raw.size());
    write_vol1_header(stem.string() + kJsonSuffix, v.dims, v.spacing_mm, "f32le");
    write_raw(stem.string() + kRawSuffix, reinterpret_cast<const char*>(raw.data()),
              raw.size() * 4);
}

Mask load_mask(const fs::path& path) {
    const fs::path stem = vol1_stem(path);
    const fs::path jp = stem.string() + kJsonSuffix;
    const Vol1Header h = read_vol1_header(jp);
    if (h.dtype != "u8")
        throw ValidationError("expected dtype u8 in " + jp.string() + ", got " + h.dtype);
    const std::size_t n = checked_voxel_count(h.dims);
    auto buf = read_raw(stem.string() + kRawSuffix, n);
    Mask m;
    m.dims = h.dims;
    m.spacing_mm = h.spacing;
    m.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto b = static_cast<std::uint8_t>(buf[i]);
        if (b > 1) throw ValidationError("mask value not in {0,1} in " + stem.string());
        m.data[i] = b;
    }
    return m;
}

void save_mask(const Mask& m, const fs::path& path) {
    if (m.data.size() != checked_voxel_count(m.dims))
        throw ValidationError("mask data length does not match dims");
    const fs::path stem = vol1_stem(path);
    write_vol1_header(stem.string() + kJsonSuffix, m.dims, m.spacing_mm, "u8");
    write_raw(stem.string() + kRawSuffix, reinterpret_cast<const char*>(m.data.data()),
              m.data.size());
}

LabelVolume load_labels(const fs::path& path) {
    const fs::path stem = vol1_stem(path);
    const fs::path jp = stem.string() + kJsonSuffix;
    const Vol1Header h = read_vol1_header(jp);
    if (h.dtype != "u16")
        throw ValidationError("expected dtype u16 in " + jp.string() + ", got " + h.dtype);
    const std::size_t n = checked_voxel_count(h.dims);
    auto buf = read_raw(stem.string() + kRawSuffix, n * 2);
    LabelVolume l;
    l.dims = h.dims;
    l.spacing_mm = h.spacing;
    l.data.resize(n);
    std::memcpy(l.data.data(), buf.data(), buf.size());
    from_le(l.data.data(), n);
    return l;
}

void save_labels(const LabelVolume& l, const fs::path& path) {
    if (l.data.size() != checked_voxel_count(l.dims))
        throw ValidationError("label data length does not match dims");
    const fs::path stem = vol1_stem(path);
    std::vector<std::uint16_t> raw = l.data;
    from_le(raw.data(), raw.size());
    write_vol1_header(stem.string() + kJsonSuffix, l.dims, l.spacing_mm, "u16");
    write_raw(stem.string() + kRawSuffix, reinterpret_cast<const char*>(raw.data()),
              raw.size() * 2);
}

namespace {

std::vector<double> gaussian_kernel(double sigma_vox) {
    const int radius = static_cast<int>(std::ceil(4.0 * sigma_vox));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        const double w = std::exp(-0.5 * (t * t) / (sigma_vox * sigma_vox));
        k[t + radius] = w;
        sum += w;
    }
    for (auto& w : k) w /= sum;
    return k;
}

// One separable pass along `axis` with replicate padding.
void convolve_axis(Volume& v, int axis, const std::vector<double>& kernel) {
    const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
    if (radius == 0) return;
    const int n = v.dims[axis];
    const std::size_t stride = axis == 0 ? 1
                             : axis == 1 ? static_cast<std::size_t>(v.dims[0])
                                         : static_cast<std::size_t>(v.dims[0]) * v.dims[1];
    const int n_other0 = axis == 0 ? v.dims[1] : v.dims[0];
    const int n_other1 = axis == 2 ? v.dims[1] : v.dims[2];
    const std::size_t stride_other0 = axis == 0 ? static_cast<std::size_t>(v.dims[0]) : 1;
    const std::size_t stride_other1 = axis == 2 ? static_cast<std::size_t>(v.dims[0])
                                                : static_cast<std::size_t>(v.dims[0]) * v.dims[1];

    std::vector<double> line(n), out(n);
    for (int a = 0; a < n_other0; ++a) {
        for (int b = 0; b < n_other1; ++b) {
            const std::size_t base = a * stride_other0 + b * stride_other1;
            for (int i = 0; i < n; ++i) line[i] = v.data[base + i * stride];
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    const int src = std::clamp(i + t, 0, n - 1);
                    acc += kernel[t + radius] * line[src];
                }
                out[i] = acc;
            }
            for (int i = 0; i < n; ++i) v.data[base + i * stride] = out[i];
        }
    }
}

} // namespace

Volume gaussian_smooth(const Volume& v, double sigma_mm) {
    if (!std::isfinite(sigma_mm) || sigma_mm < 0.0)
        throw ValidationError("gaussian_smooth: sigma must be finite and >= 0");
    Volume out = v;
    if (sigma_mm == 0.0) return out;
    for (int axis = 0; axis < 3; ++axis) {
        const double sigma_vox = sigma_mm / v.spacing_mm[axis];
        if (sigma_vox <= 0.0) continue;
        convolve_axis(out, axis, gaussian_kernel(sigma_vox));
    }
    return out;
}

Volume downsample_avg2(const Volume& v) {
    for (int d : v.dims)
        if (d < 2) throw ValidationError("downsample_avg2: every dim must be >= 2");
    Volume out;
    out.dims = {v.dims[0] / 2, v.dims[1] / 2, v.dims[2] / 2};
    out.spacing_mm = {2.0 * v.spacing_mm[0], 2.0 * v.spacing_mm[1], 2.0 * v.spacing_mm[2]};
    out.data.resize(static_cast<std::size_t>(out.dims[0]) * out.dims[1] * out.dims[2]);
    for (int k = 0; k < out.dims[2]; ++k)
        for (int j = 0; j < out.dims[1]; ++j)
            for (int i = 0; i < out.dims[0]; ++i) {
                double acc = 0.0;
                for (int dk = 0; dk < 2; ++dk)
                    for (int dj = 0; dj < 2; ++dj)
                        for (int di = 0; di < 2; ++di)
                            acc += v.at(2 * i + di, 2 * j + dj, 2 * k + dk);
                out.at(i, j, k) = acc / 8.0;
            }
    return out;
}

double masked_mean(const Volume& v, const Mask& m) {
    if (v.dims != m.dims) throw ValidationError("masked_mean: dim mismatch");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        if (m.data[i]) {
            sum += v.data[i];
            ++count;
        }
    }
    if (count == 0) throw ValidationError("masked_mean: empty region");
    return sum / static_cast<double>(count);
}

} // namespace phrec
