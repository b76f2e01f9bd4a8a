#pragma once

#include "phrec/metrics.hpp"
#include "phrec/stats.hpp"
#include "phrec/volume.hpp"

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace phrec {

struct PcaModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;         // k x d, orthonormal rows
    Eigen::VectorXd explained_variance; // sample variances along components, non-increasing
    double total_variance = 0.0;        // trace of the sample covariance
};

/// Centers the data and extracts the top-k principal components by SVD. The
/// sign convention (largest-magnitude coordinate of each component positive)
/// makes the result deterministic.
PcaModel pca_fit(const std::vector<Eigen::VectorXd>& data, int k);

Eigen::VectorXd pca_project(const PcaModel& m, const Eigen::VectorXd& v);

/// (sum |a-b|^p)^(1/p) with the largest coordinate factored out so large p
/// cannot overflow.
double minkowski(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double p);

struct IntraInterResult {
    std::vector<double> intra; // per image: mean distance to same-subject images
    std::vector<double> inter; // per image: mean distance to k nearest other-subject images
    TestResult test;
    bool degenerate = false;
};

IntraInterResult intra_inter_study(const std::vector<Eigen::VectorXd>& latents,
                                   const std::vector<std::string>& subject_ids, double p = 10.0,
                                   int inter_neighbors = 5);

struct NeighborPoint {
    int rank = 0;
    double latent_distance = 0.0;
    double image_mse = 0.0;
    double image_ssim = 0.0;
};

struct NeighborCurve {
    std::string image_id;
    std::vector<NeighborPoint> points;
};

/// For every image, the j-th nearest other-subject neighbor in latent space
/// at each requested rank, with the image-space MSE/SSIM to that neighbor.
std::vector<NeighborCurve> neighbor_image_distance_curves(
    const std::vector<Eigen::VectorXd>& latents, const std::vector<std::string>& subject_ids,
    const std::vector<const Volume*>& volumes, const std::vector<std::string>& image_ids,
    const std::vector<int>& ranks, double p = 10.0, const MetricConfig& cfg = {});

/// Random-intercept-and-slope model Y = b0 + b1 X + g0_i + g1_i X + eps with
/// full 2x2 random-effect covariance, maximum likelihood via EM.
struct LmmFit {
    double beta0 = 0.0, beta1 = 0.0;
    Eigen::Matrix2d random_cov = Eigen::Matrix2d::Zero();
    double resid_var = 0.0;
    double se0 = 0.0, se1 = 0.0;
    double z0 = 0.0, z1 = 0.0;
    double p0 = 1.0, p1 = 1.0;
    double ci0_lo = 0.0, ci0_hi = 0.0, ci1_lo = 0.0, ci1_hi = 0.0;
    double log_lik = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> ll_trace; // one entry per EM iteration, non-decreasing
};

LmmFit lmm_fit(const std::vector<std::vector<std::pair<double, double>>>& groups,
               int max_iter = 500, double tol = 1e-8);

} // namespace phrec
