#pragma once

#include "phrec/volume.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace phrec {

/// Region atlas: integer label field plus the fine-label table, the
/// fine-to-merged reduction, and the named subtype -> merged-region mapping
/// used to build simulation masks.
struct Atlas {
    LabelVolume labels;
    std::map<int, std::string> label_table;  // fine label -> name
    std::map<int, int> merge_map;            // fine label -> merged id (contiguous 1..R)
    std::map<int, std::string> merged_names; // merged id -> name
    std::map<std::string, std::vector<int>> subtype_regions;

    int merged_count() const { return merged_count_; }
    /// Merged region id at flat voxel index, 0 for background.
    int merged_at(std::size_t idx) const { return lut_[labels.data[idx]]; }

    Mask brain_mask() const;
    Mask region_mask(int merged_id) const;

    /// Rebuilds the fine->merged lookup and checks the invariants: every voxel
    /// label present in label_table, merge_map total over label_table, merged
    /// ids contiguous 1..R, and every merged region nonempty.
    void finalize();

private:
    std::vector<int> lut_;
    int merged_count_ = 0;
};

/// Deterministic ellipsoidal brain partition: angular sectors in an upper and
/// lower cortical shell band plus deep sectors, each split radially into two
/// fine labels that merge back into region_count regions. Ships a default
/// subtype mapping for the six dementia subtypes.
Atlas synthetic_atlas(Dims3 dims, Spacing3 spacing_mm, int region_count);

/// Majority-vote 2x2x2 label decimation (ties to the smaller label); tables
/// and subtype config carry over unchanged.
Atlas atlas_downsample2(const Atlas& atlas);

void save_atlas(const Atlas& atlas, const std::filesystem::path& stem);
Atlas load_atlas(const std::filesystem::path& stem);

struct PhantomParams {
    Dims3 dims{64, 64, 64};
    Spacing3 spacing_mm{2.0, 2.0, 2.0};
    std::uint64_t global_seed = 1;
    int n_subjects = 10;
    int sessions_per_subject = 1;
    double subject_variability_sigma = 0.08;
    double session_noise_sigma = 0.01;
    int region_count = 23;

    void validate() const;
};

/// Pure function of (params, subject_id, session_id): base uptake pattern
/// (cortical shell 0.6, deep 0.45, exterior 0) + smooth per-subject random
/// field + per-session noise, clamped to [0, 1] and quantized to float32.
Volume generate_phantom(const PhantomParams& params, int subject_id, int session_id);

struct CohortRecord {
    std::string subject_id;
    std::string session_id;
    double age = 0.0;
    std::string sex;       // "F" or "M"
    std::string diagnosis; // "CN" or "AD"
    std::string volume_path; // relative to the manifest directory
};

struct CohortManifest {
    std::filesystem::path base_dir;
    std::vector<CohortRecord> records;

    std::filesystem::path resolve(const CohortRecord& r) const { return base_dir / r.volume_path; }
    void validate(bool check_paths) const;
};

/// Writes every (subject, session) volume plus a JSON-lines manifest
/// (cohort.jsonl) under out_dir and returns the manifest. All subjects are CN;
/// sex and age covariates are derived deterministically from the seed.
CohortManifest generate_cohort(const PhantomParams& params, const std::filesystem::path& out_dir);

CohortManifest load_cohort_manifest(const std::filesystem::path& jsonl_path);
void save_cohort_manifest(const CohortManifest& manifest, const std::filesystem::path& jsonl_path);

} // namespace phrec
