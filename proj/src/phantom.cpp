#include "phrec/phantom.hpp"

#include "phrec/errors.hpp"
#include "phrec/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace phrec {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Ellipsoid semi-axes in normalized [-1, 1] coordinates and the radial split
// between the deep band and the cortical shell band.
constexpr double kSemiX = 0.85, kSemiY = 0.90, kSemiZ = 0.80;
constexpr double kDeepRho = 0.55;

struct VoxelGeom {
    double rho;  // normalized elliptic radius, <= 1 inside the brain
    double frac; // azimuth as a fraction of the full turn, [0, 1)
    bool upper;  // w >= 0
};

VoxelGeom voxel_geom(int i, int j, int k, const Dims3& dims) {
    const double u = 2.0 * (i + 0.5) / dims[0] - 1.0;
    const double v = 2.0 * (j + 0.5) / dims[1] - 1.0;
    const double w = 2.0 * (k + 0.5) / dims[2] - 1.0;
    VoxelGeom g;
    g.rho = std::sqrt((u / kSemiX) * (u / kSemiX) + (v / kSemiY) * (v / kSemiY) +
                      (w / kSemiZ) * (w / kSemiZ));
    double frac = (std::atan2(v, u) + M_PI) / (2.0 * M_PI);
    if (frac >= 1.0) frac -= 1.0;
    if (frac < 0.0) frac = 0.0;
    g.frac = frac;
    g.upper = w >= 0.0;
    return g;
}

struct SectorLayout {
    int n_upper, n_lower, n_deep;

    static SectorLayout make(int region_count) {
        SectorLayout s;
        s.n_deep = std::max(1, region_count / 6);
        const int shell = region_count - s.n_deep;
        s.n_upper = (shell + 1) / 2;
        s.n_lower = shell - s.n_upper;
        return s;
    }
    // merged ids: upper 1..n_upper, lower n_upper+1.., deep after that
    int upper_id(int sector) const { return 1 + sector; }
    int lower_id(int sector) const { return 1 + n_upper + sector; }
    int deep_id(int sector) const { return 1 + n_upper + n_lower + sector; }
};

int sector_of(double frac, int n) {
    int s = static_cast<int>(frac * n);
    return std::min(s, n - 1);
}

double circular_dist(double a, double b) {
    const double d = std::abs(a - b);
    return std::min(d, 1.0 - d);
}

// Nearest sector (by circular distance between the anchor and sector centers,
// ties to the smaller index). Keeps the subtype mapping well defined for any
// sector count.
int nearest_sector(double anchor, int n) {
    int best = 0;
    double best_d = circular_dist(anchor, 0.5 / n);
    for (int s = 1; s < n; ++s) {
        const double d = circular_dist(anchor, (s + 0.5) / n);
        if (d < best_d - 1e-12) {
            best_d = d;
            best = s;
        }
    }
    return best;
}

std::map<std::string, std::vector<int>> default_subtype_regions(const SectorLayout& lay) {
    struct AnchorSet {
        std::vector<double> upper, lower, deep;
    };
    // Azimuth convention: 0.25 posterior, 0.5 right, 0.75 anterior, 0/1 left.
    const std::map<std::string, AnchorSet> anchors = {
        // temporal analogs (lateral, lower band) + parietal analogs (posterior, upper band)
        {"AD", {{0.25, 0.35}, {0.45, 0.55, 0.95, 0.05}, {}}},
        // frontal analogs
        {"bvFTD", {{0.65, 0.75, 0.85}, {}, {}}},
        // occipital analog
        {"PCA", {{}, {0.15, 0.25, 0.35}, {}}},
        // temporoparietal analog, left-lateralized
        {"lvPPA", {{0.95}, {0.95}, {}}},
        // frontal-inferior analog
        {"nfvPPA", {{}, {0.65, 0.75}, {}}},
        // anterior-temporal analog + deep structure analog
        {"svPPA", {{}, {0.85}, {0.85}}},
    };
    std::map<std::string, std::vector<int>> out;
    for (const auto& [name, a] : anchors) {
        std::set<int> ids;
        for (double f : a.upper) ids.insert(lay.upper_id(nearest_sector(f, lay.n_upper)));
        for (double f : a.lower) ids.insert(lay.lower_id(nearest_sector(f, lay.n_lower)));
        for (double f : a.deep) ids.insert(lay.deep_id(nearest_sector(f, lay.n_deep)));
        if (ids.empty())
            throw ValidationError("subtype " + name + " not constructible with this layout");
        out[name] = std::vector<int>(ids.begin(), ids.end());
    }
    return out;
}

std::string two_digits(int v) {
    std::string s = std::to_string(v);
    return s.size() < 2 ? "0" + s : s;
}

} // namespace

void Atlas::finalize() {
    int max_label = 0;
    for (auto l : labels.data) max_label = std::max<int>(max_label, l);
    lut_.assign(max_label + 1, 0);

    for (auto l : labels.data) {
        if (l == 0) continue;
        if (!label_table.count(l))
            throw ValidationError("atlas voxel label " + std::to_string(l) +
                                  " missing from label table");
    }
    std::set<int> merged_ids;
    for (const auto& [fine, name] : label_table) {
        (void)name;
        auto it = merge_map.find(fine);
        if (it == merge_map.end())
            throw ValidationError("merge map not total: missing fine label " +
                                  std::to_string(fine));
        merged_ids.insert(it->second);
        if (fine <= max_label && fine > 0) lut_[fine] = it->second;
    }
    merged_count_ = static_cast<int>(merged_ids.size());
    int expect = 1;
    for (int id : merged_ids) {
        if (id != expect)
            throw ValidationError("merged region ids must be contiguous 1..R, found " +
                                  std::to_string(id));
        ++expect;
    }
    std::vector<std::size_t> counts(merged_count_ + 1, 0);
    for (auto l : labels.data) ++counts[lut_[l]];
    for (int id = 1; id <= merged_count_; ++id)
        if (counts[id] == 0)
            throw ValidationError("merged region " + std::to_string(id) + " has zero voxels");
}

Mask Atlas::brain_mask() const {
    Mask m;
    m.dims = labels.dims;
    m.spacing_mm = labels.spacing_mm;
    m.data.resize(labels.data.size());
    for (std::size_t i = 0; i < labels.data.size(); ++i) m.data[i] = labels.data[i] != 0;
    return m;
}

Mask Atlas::region_mask(int merged_id) const {
    Mask m;
    m.dims = labels.dims;
    m.spacing_mm = labels.spacing_mm;
    m.data.resize(labels.data.size());
    for (std::size_t i = 0; i < labels.data.size(); ++i)
        m.data[i] = merged_at(i) == merged_id;
    return m;
}

Atlas synthetic_atlas(Dims3 dims, Spacing3 spacing_mm, int region_count) {
    if (region_count < 6)
        throw ValidationError("synthetic_atlas: region_count must be >= 6");
    const SectorLayout lay = SectorLayout::make(region_count);

    Atlas atlas;
    atlas.labels.dims = dims;
    atlas.labels.spacing_mm = spacing_mm;
    atlas.labels.data.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0);

    std::size_t idx = 0;
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i, ++idx) {
                const VoxelGeom g = voxel_geom(i, j, k, dims);
                if (g.rho > 1.0) continue;
                int merged;
                double band_mid;
                if (g.rho < kDeepRho) {
                    merged = lay.deep_id(sector_of(g.frac, lay.n_deep));
                    band_mid = kDeepRho / 2.0;
                } else if (g.upper) {
                    merged = lay.upper_id(sector_of(g.frac, lay.n_upper));
                    band_mid = (kDeepRho + 1.0) / 2.0;
                } else {
                    merged = lay.lower_id(sector_of(g.frac, lay.n_lower));
                    band_mid = (kDeepRho + 1.0) / 2.0;
                }
                // radial sub-split: fine label pairs merge back to one region
                const int fine = g.rho < band_mid ? merged : merged + region_count;
                atlas.labels.data[idx] = static_cast<std::uint16_t>(fine);
            }

    for (int id = 1; id <= region_count; ++id) {
        const std::string base = "region_" + two_digits(id);
        atlas.merged_names[id] = base;
        atlas.label_table[id] = base + "_inner";
        atlas.label_table[id + region_count] = base + "_outer";
        atlas.merge_map[id] = id;
        atlas.merge_map[id + region_count] = id;
    }
    atlas.subtype_regions = default_subtype_regions(lay);

    try {
        atlas.finalize();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("synthetic_atlas: region_count ") +
                              std::to_string(region_count) + " not constructible at this grid: " +
                              e.what());
    }
    return atlas;
}

Atlas atlas_downsample2(const Atlas& atlas) {
    const auto& l = atlas.labels;
    for (int d : l.dims)
        if (d < 2) throw ValidationError("atlas_downsample2: every dim must be >= 2");
    Atlas out = atlas;
    out.labels.dims = {l.dims[0] / 2, l.dims[1] / 2, l.dims[2] / 2};
    out.labels.spacing_mm = {2.0 * l.spacing_mm[0], 2.0 * l.spacing_mm[1], 2.0 * l.spacing_mm[2]};
    out.labels.data.assign(
        static_cast<std::size_t>(out.labels.dims[0]) * out.labels.dims[1] * out.labels.dims[2], 0);

    auto src_at = [&](int i, int j, int k) {
        return l.data[static_cast<std::size_t>(i) +
                      static_cast<std::size_t>(l.dims[0]) *
                          (static_cast<std::size_t>(j) + static_cast<std::size_t>(l.dims[1]) * k)];
    };
    std::size_t idx = 0;
    for (int k = 0; k < out.labels.dims[2]; ++k)
        for (int j = 0; j < out.labels.dims[1]; ++j)
            for (int i = 0; i < out.labels.dims[0]; ++i, ++idx) {
                std::array<std::uint16_t, 8> block;
                int n = 0;
                for (int dk = 0; dk < 2; ++dk)
                    for (int dj = 0; dj < 2; ++dj)
                        for (int di = 0; di < 2; ++di)
                            block[n++] = src_at(2 * i + di, 2 * j + dj, 2 * k + dk);
                std::sort(block.begin(), block.end());
                std::uint16_t best = block[0];
                int best_count = 0;
                for (int a = 0; a < 8;) {
                    int b = a;
                    while (b < 8 && block[b] == block[a]) ++b;
                    if (b - a > best_count) {
                        best_count = b - a;
                        best = block[a];
                    }
                    a = b;
                }
                out.labels.data[idx] = best;
            }
    out.finalize();
    return out;
}

namespace {

json int_key_map_to_json(const std::map<int, std::string>& m) {
    json j = json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

json merge_map_to_json(const std::map<int, int>& m) {
    json j = json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

template <typename T>
std::map<int, T> json_to_int_key_map(const json& j, const std::string& what) {
    std::map<int, T> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        try {
            out[std::stoi(it.key())] = it.value().get<T>();
        } catch (const std::exception&) {
            throw ValidationError("bad key or value in " + what);
        }
    }
    return out;
}

json load_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("bad JSON in " + p.string() + ": " + e.what());
    }
    return j;
}

void write_json_file(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + p.string());
}

} // namespace

void save_atlas(const Atlas& atlas, const fs::path& stem) {
    save_labels(atlas.labels, stem.string() + ".labels");
    write_json_file(stem.string() + ".label_table.json", int_key_map_to_json(atlas.label_table));
    json mm;
    mm["map"] = merge_map_to_json(atlas.merge_map);
    mm["merged_names"] = int_key_map_to_json(atlas.merged_names);
    write_json_file(stem.string() + ".merge_map.json", mm);
    json st = json::object();
    for (const auto& [name, ids] : atlas.subtype_regions) st[name] = ids;
    write_json_file(stem.string() + ".subtypes.json", st);
}

Atlas load_atlas(const fs::path& stem) {
    Atlas atlas;
    atlas.labels = load_labels(stem.string() + ".labels");
    atlas.label_table =
        json_to_int_key_map<std::string>(load_json_file(stem.string() + ".label_table.json"),
                                         "label table");
    const json mm = load_json_file(stem.string() + ".merge_map.json");
    atlas.merge_map = json_to_int_key_map<int>(mm.at("map"), "merge map");
    if (mm.contains("merged_names"))
        atlas.merged_names = json_to_int_key_map<std::string>(mm.at("merged_names"),
                                                              "merged names");
    const json st = load_json_file(stem.string() + ".subtypes.json");
    for (auto it = st.begin(); it != st.end(); ++it)
        atlas.subtype_regions[it.key()] = it.value().get<std::vector<int>>();
    atlas.finalize();
    for (int id = 1; id <= atlas.merged_count(); ++id)
        if (!atlas.merged_names.count(id)) atlas.merged_names[id] = "merged_" + std::to_string(id);
    return atlas;
}

void PhantomParams::validate() const {
    for (int d : dims)
        if (d < 4) throw ValidationError("phantom dims must be >= 4");
    for (double s : spacing_mm)
        if (!(s > 0.0)) throw ValidationError("phantom spacing must be positive");
    if (n_subjects <= 0 || sessions_per_subject <= 0)
        throw ValidationError("phantom counts must be positive");
    if (subject_variability_sigma < 0.0 || session_noise_sigma < 0.0)
        throw ValidationError("phantom sigmas must be >= 0");
    if (region_count < 6) throw ValidationError("region_count must be >= 6");
}

namespace {

constexpr std::uint64_t kSubjectFieldTag = 0x73756266; // "subf"
constexpr std::uint64_t kSessionNoiseTag = 0x73657373; // "sess"
constexpr std::uint64_t kCovariateTag = 0x636f7661;    // "cova"
constexpr double kSubjectFieldSigmaMm = 12.0;

} // namespace

Volume generate_phantom(const PhantomParams& params, int subject_id, int session_id) {
    params.validate();
    if (subject_id < 0 || subject_id >= params.n_subjects)
        throw ValidationError("subject_id out of range");
    if (session_id < 0 || session_id >= params.sessions_per_subject)
        throw ValidationError("session_id out of range");

    Volume v(params.dims, params.spacing_mm, 0.0);
    std::vector<std::uint8_t> brain(v.size(), 0);
    std::size_t idx = 0;
    for (int k = 0; k < v.dims[2]; ++k)
        for (int j = 0; j < v.dims[1]; ++j)
            for (int i = 0; i < v.dims[0]; ++i, ++idx) {
                const VoxelGeom g = voxel_geom(i, j, k, v.dims);
                if (g.rho > 1.0) continue;
                brain[idx] = 1;
                v.data[idx] = g.rho < kDeepRho ? 0.45 : 0.6;
            }

    if (params.subject_variability_sigma > 0.0) {
        Volume field(params.dims, params.spacing_mm, 0.0);
        Rng rng(mix_seed(params.global_seed, kSubjectFieldTag,
                         static_cast<std::uint64_t>(subject_id)));
        for (auto& x : field.data) x = rng.normal();
        field = gaussian_smooth(field, kSubjectFieldSigmaMm);
        double mean = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (std::size_t q = 0; q < field.size(); ++q)
            if (brain[q]) {
                mean += field.data[q];
                sq += field.data[q] * field.data[q];
                ++n;
            }
        mean /= static_cast<double>(n);
        const double var = sq / static_cast<double>(n) - mean * mean;
        const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
        for (std::size_t q = 0; q < v.size(); ++q)
            if (brain[q])
                v.data[q] += params.subject_variability_sigma * (field.data[q] - mean) / sd;
    }

    if (params.session_noise_sigma > 0.0) {
        Rng rng(mix_seed(mix_seed(params.global_seed, kSessionNoiseTag),
                         static_cast<std::uint64_t>(subject_id),
                         static_cast<std::uint64_t>(session_id)));
        for (std::size_t q = 0; q < v.size(); ++q) {
            const double eps = rng.normal(); // fixed draw order, brain-gated after
            if (brain[q]) v.data[q] += params.session_noise_sigma * eps;
        }
    }

    for (auto& x : v.data)
        x = static_cast<float>(std::clamp(x, 0.0, 1.0));
    return v;
}

CohortManifest generate_cohort(const PhantomParams& params, const fs::path& out_dir) {
    params.validate();
    fs::create_directories(out_dir / "vols");

    CohortManifest manifest;
    manifest.base_dir = out_dir;
    for (int s = 0; s < params.n_subjects; ++s) {
        Rng cov(mix_seed(params.global_seed, kCovariateTag, static_cast<std::uint64_t>(s)));
        const std::string sex = (cov.next_u64() & 1) ? "F" : "M";
        const double age = std::clamp(73.0 + 6.0 * cov.normal(), 55.0, 90.0);
        for (int ses = 0; ses < params.sessions_per_subject; ++ses) {
            CohortRecord rec;
            rec.subject_id = "sub" + std::to_string(1000 + s).substr(1);
            rec.session_id = "ses" + two_digits(ses);
            rec.age = age;
            rec.sex = sex;
            rec.diagnosis = "CN";
            rec.volume_path = "vols/" + rec.subject_id + "_" + rec.session_id + ".vol1.json";
            const Volume v = generate_phantom(params, s, ses);
            save_volume(v, out_dir / rec.volume_path);
            manifest.records.push_back(std::move(rec));
        }
    }
    save_cohort_manifest(manifest, out_dir / "cohort.jsonl");
    return manifest;
}

void CohortManifest::validate(bool check_paths) const {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& r : records) {
        if (!seen.insert({r.subject_id, r.session_id}).second)
            throw ValidationError("duplicate (subject, session): " + r.subject_id + "/" +
                                  r.session_id);
        if (!(r.age > 0.0)) throw ValidationError("non-positive age for " + r.subject_id);
        if (r.sex != "F" && r.sex != "M")
            throw ValidationError("sex must be F or M for " + r.subject_id);
        if (check_paths && !fs::exists(resolve(r)) &&
            !fs::exists(fs::path(resolve(r).string() + ".vol1.json")))
            throw ValidationError("volume_path not resolvable: " + resolve(r).string());
    }
}

CohortManifest load_cohort_manifest(const fs::path& jsonl_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw IoError("cannot open " + jsonl_path.string());
    CohortManifest m;
    m.base_dir = jsonl_path.parent_path();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError("bad manifest line in " + jsonl_path.string() + ": " + e.what());
        }
        CohortRecord r;
        try {
            r.subject_id = j.at("subject_id").get<std::string>();
            r.session_id = j.at("session_id").get<std::string>();
            r.age = j.at("age").get<double>();
            r.sex = j.at("sex").get<std::string>();
            r.diagnosis = j.at("diagnosis").get<std::string>();
            r.volume_path = j.at("volume_path").get<std::string>();
        } catch (const json::exception& e) {
            throw ValidationError("bad manifest record in " + jsonl_path.string() + ": " +
                                  e.what());
        }
        m.records.push_back(std::move(r));
    }
    m.validate(false);
    return m;
}

void save_cohort_manifest(const CohortManifest& manifest, const fs::path& jsonl_path) {
    std::ofstream out(jsonl_path);
    if (!out) throw IoError("cannot write " + jsonl_path.string());
    for (const auto& r : manifest.records) {
        json j;
        j["subject_id"] = r.subject_id;
        j["session_id"] = r.session_id;
        j["age"] = r.age;
        j["sex"] = r.sex;
        j["diagnosis"] = r.diagnosis;
        j["volume_path"] = r.volume_path;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed for " + jsonl_path.string());
}

} // namespace phrec
