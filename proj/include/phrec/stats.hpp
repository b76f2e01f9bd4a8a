#pragma once

#include "phrec/phantom.hpp"
#include "phrec/volume.hpp"

#include <map>
#include <string>
#include <vector>

namespace phrec {

enum class TestMethod { welch_t, mann_whitney };

std::string test_method_name(TestMethod m);

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double p_adjusted = 1.0; // equals p_value until a correction is applied
    TestMethod method = TestMethod::welch_t;
    int n1 = 0;
    int n2 = 0;
    double df = 0.0;        // Welch-Satterthwaite degrees of freedom
    bool exact = false;     // Mann-Whitney exact enumeration path
    bool degenerate = false;
};

/// Two-sided Welch t-test. Requires n >= 2 per sample and nonzero variance in
/// at least one of them.
TestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Two-sided Mann-Whitney U (U counts pairs where a exceeds b, ties half).
/// Exact enumeration when n1+n2 <= 12 and the pooled sample is tie-free,
/// normal approximation with tie and continuity corrections otherwise.
TestResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);

/// min(1, k * p).
double bonferroni(double p, int k);

struct RegionalUptake {
    std::string image_id;
    std::map<int, double> mean_uptake; // merged region id -> mean
};

RegionalUptake regional_uptake(const Volume& x, const Atlas& atlas,
                               const std::string& image_id = "");

struct RegionTestRow {
    int region_id = 0;
    std::string region_name;
    double mean_input = 0.0;
    double mean_recon = 0.0;
    double statistic = 0.0;
    double p = 1.0;
    double p_adjusted = 1.0;
    bool significant = false;
    bool degenerate = false;
};

/// Per merged region, compares the cohort distribution of input means against
/// reconstruction means, Bonferroni-corrected across regions. Degenerate
/// regions (zero variance on both sides) are reported, never fatal.
std::vector<RegionTestRow> regional_anomaly_report(const std::vector<RegionalUptake>& inputs,
                                                   const std::vector<RegionalUptake>& recons,
                                                   const Atlas& atlas, TestMethod method,
                                                   double alpha = 0.05);

std::vector<RegionTestRow> regional_anomaly_report(const std::vector<const Volume*>& inputs,
                                                   const std::vector<const Volume*>& recons,
                                                   const Atlas& atlas, TestMethod method,
                                                   double alpha = 0.05);

} // namespace phrec
