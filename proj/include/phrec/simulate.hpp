#pragma once

#include "phrec/phantom.hpp"
#include "phrec/volume.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace phrec {

struct SimulationSpec {
    std::string subtype;            // one of the atlas subtype config keys
    double severity = 0.3;          // hypometabolism fraction, in (0, 1]
    double smoothing_sigma_mm = 5.0;

    void validate(const Atlas& atlas) const;
};

/// Binary union of the merged regions configured for the subtype.
Mask build_subtype_mask(const Atlas& atlas, const std::string& subtype);

/// Gaussian-smoothed mask clamped to [0, 1].
WeightMask smooth_mask(const Mask& m, double sigma_mm);

/// Voxelwise attenuation x' = x * (1 - severity * w).
Volume simulate_hypometabolism(const Volume& x, const WeightMask& w, double severity);

struct SimulatedRecord {
    std::string image_id;
    std::string source_path;    // relative to the set manifest directory
    std::string simulated_path; // relative to the set manifest directory
    std::string subtype;
    double severity = 0.0;
    std::string mask_id;
};

struct SimulatedSet {
    std::string set_id;
    std::string subtype;
    double severity = 0.0;
    std::vector<SimulatedRecord> records;
};

/// One simulated copy of every test image per AD severity, plus one copy per
/// extra subtype at subtype_severity. Volumes land under
/// out_dir/<set_id>/, the combined manifest in out_dir/sets.jsonl.
std::vector<SimulatedSet> materialize_test_sets(const CohortManifest& test_cohort,
                                                const Atlas& atlas,
                                                const std::vector<double>& ad_severities,
                                                const std::vector<std::string>& subtypes,
                                                double subtype_severity,
                                                double smoothing_sigma_mm,
                                                const std::filesystem::path& out_dir);

void save_simulated_sets(const std::vector<SimulatedSet>& sets,
                         const std::filesystem::path& jsonl_path);
std::vector<SimulatedSet> load_simulated_sets(const std::filesystem::path& jsonl_path);

/// Filesystem-safe set identifier, e.g. "AD_0p30".
std::string simulated_set_id(const std::string& subtype, double severity);

} // namespace phrec
