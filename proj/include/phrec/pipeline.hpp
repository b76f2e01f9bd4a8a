#pragma once

#include "phrec/genmodel.hpp"
#include "phrec/latent.hpp"
#include "phrec/metrics.hpp"
#include "phrec/phantom.hpp"
#include "phrec/simulate.hpp"
#include "phrec/stats.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace phrec {

struct SplitSpec {
    double test_fraction = 0.2;
    int n_folds = 6;
    std::vector<std::string> stratify_on{"sex", "age"};
    std::uint64_t rng_seed = 1;

    void validate() const;
};

struct CohortSplit {
    std::vector<CohortManifest> train_folds;      // all sessions
    std::vector<CohortManifest> validation_folds; // baseline sessions only
    CohortManifest test;                          // baseline sessions only
};

/// Subject-level split stratified by sex and age quartile; no subject spans
/// sets, test/validation keep the baseline session only.
CohortSplit split_cohort(const CohortManifest& cohort, const SplitSpec& spec);

struct QcResult {
    double score = 0.0;
    bool pass = false;
};

/// score = (uptake outside the brain) / (total uptake); fails above threshold.
QcResult qc_overlap(const Volume& x, const Mask& outside_brain, double threshold = 0.1);

struct LatentAnalysisConfig {
    double minkowski_p = 10.0;
    std::vector<int> neighbor_ranks{1, 6, 11, 16, 21, 26, 31, 36, 41, 46};
    int pca_components = 2;
    int multisession_subjects = 25;
    int multisession_count = 3;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string model = "vae"; // "vae" or "identity"

    // either a pre-generated cohort/atlas...
    std::optional<std::filesystem::path> cohort_manifest;
    std::optional<std::filesystem::path> atlas_stem;
    // ...or phantom parameters to generate one under the output directory
    std::optional<PhantomParams> phantom;

    int downsample_steps = 2; // generation grid -> model grid

    SplitSpec split;
    TrainConfig train;
    std::optional<int> fold_override; // bypass the min-validation-SSIM selector
    int latent_dim = 64;
    std::vector<int> encoder_hidden{1024, 256};
    std::vector<int> decoder_hidden{256, 1024};

    std::vector<double> ad_severities{0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 0.70};
    std::vector<std::string> subtypes{"bvFTD", "PCA", "lvPPA", "nfvPPA", "svPPA"};
    double subtype_severity = 0.30;
    double smoothing_sigma_mm = 5.0;

    // defaults sized for the 16^3 evaluation grid: 3 scales, weights from the
    // first three reference values renormalized to sum 1
    MetricConfig metrics{1.0, 0.01, 0.03, 3,
                         {0.0448 / 0.6305, 0.2856 / 0.6305, 0.3001 / 0.6305}, 0};
    double qc_threshold = 0.1;
    TestMethod regional_test = TestMethod::mann_whitney;
    double alpha = 0.05;
    LatentAnalysisConfig latent;

    void validate() const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& json_path);
void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& json_path);

/// Per-set healthiness triples (ground truth, simulated input, reconstruction).
struct HealthinessSummary {
    std::vector<double> h_ground_truth;
    std::vector<double> h_simulated;
    std::vector<double> h_reconstruction;
};

/// In-memory view of the persisted result bundle, for callers that need the
/// numbers without re-parsing the CSVs.
struct ExperimentSummary {
    int selected_fold = -1;
    std::vector<double> healthy_mse;      // MSE(x, xhat) on the CN test set
    std::vector<double> healthy_ssim;     // SSIM(x, xhat)
    double healthy_mse_mean = 0.0;

    std::vector<double> severities;                      // AD severity grid
    std::map<std::string, std::vector<double>> mse_gt_recon;  // set -> MSE(x, xhat')
    std::map<std::string, std::vector<double>> mse_sim_recon; // set -> MSE(x', xhat')
    std::map<std::string, TestResult> fig4_tests;             // AD sets vs healthy MSE
    std::map<std::string, HealthinessSummary> healthiness;    // per set
    std::map<std::string, std::vector<RegionTestRow>> regional; // per set, input vs recon
    std::map<std::string, std::vector<int>> set_mask_regions;   // per set, merged ids
    std::map<std::string, double> subtype_ssim_recon;  // set -> mean SSIM(xhat, xhat')
    std::map<std::string, double> subject_specificity; // set -> frac SSIM(xhat,xhat') > SSIM(x,x')

    bool has_latent = false;
    IntraInterResult intra_inter;
    std::vector<double> severity_rank_corr; // per test subject, |Spearman|
    LmmFit lmm_mse;
    LmmFit lmm_ssim;
};

ExperimentSummary run_experiment(const ExperimentConfig& cfg,
                                 const std::filesystem::path& out_dir, int threads = 1);

/// Rebuilds plot-ready JSON series (violin/scatter/box) from a persisted
/// report bundle. Missing sections are listed in the thrown error.
void emit_plot_data(const std::filesystem::path& report_dir,
                    const std::filesystem::path& plot_dir);

} // namespace phrec
