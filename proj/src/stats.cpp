#include "phrec/stats.hpp"

#include "phrec/errors.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace phrec {

namespace {

constexpr int kExactEnumerationLimit = 12;

double sample_mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v, double mean) {
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(v.size() - 1);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// U statistic counting (a_i > b_j) pairs, ties counted half.
double u_statistic(const std::vector<double>& a, const std::vector<double>& b) {
    double u = 0.0;
    for (double x : a)
        for (double y : b) {
            if (x > y)
                u += 1.0;
            else if (x == y)
                u += 0.5;
        }
    return u;
}

bool has_ties(std::vector<double> pooled) {
    std::sort(pooled.begin(), pooled.end());
    return std::adjacent_find(pooled.begin(), pooled.end()) != pooled.end();
}

} // namespace

std::string test_method_name(TestMethod m) {
    return m == TestMethod::welch_t ? "welch_t" : "mann_whitney";
}

TestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ValidationError("welch_t_test: each sample needs >= 2 values");
    const double n1 = static_cast<double>(a.size());
    const double n2 = static_cast<double>(b.size());
    const double ma = sample_mean(a);
    const double mb = sample_mean(b);
    const double va = sample_variance(a, ma);
    const double vb = sample_variance(b, mb);
    if (va == 0.0 && vb == 0.0)
        throw ValidationError("welch_t_test: degenerate samples (zero variance on both sides)");

    TestResult r;
    r.method = TestMethod::welch_t;
    r.n1 = static_cast<int>(a.size());
    r.n2 = static_cast<int>(b.size());
    const double se2 = va / n1 + vb / n2;
    r.statistic = (ma - mb) / std::sqrt(se2);
    r.df = se2 * se2 /
           ((va / n1) * (va / n1) / (n1 - 1.0) + (vb / n2) * (vb / n2) / (n2 - 1.0));
    const boost::math::students_t_distribution<double> dist(r.df);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic)));
    r.p_value = std::min(1.0, r.p_value);
    r.p_adjusted = r.p_value;
    return r;
}

TestResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw ValidationError("mann_whitney_u: empty sample");
    const int n1 = static_cast<int>(a.size());
    const int n2 = static_cast<int>(b.size());
    const int n = n1 + n2;

    TestResult r;
    r.method = TestMethod::mann_whitney;
    r.n1 = n1;
    r.n2 = n2;
    r.statistic = u_statistic(a, b);

    std::vector<double> pooled;
    pooled.reserve(n);
    pooled.insert(pooled.end(), a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());

    if (n <= kExactEnumerationLimit && !has_ties(pooled)) {
        // enumerate every assignment of pooled values to the first sample
        std::sort(pooled.begin(), pooled.end());
        const double u_obs = r.statistic;
        long total = 0, le = 0, ge = 0;
        std::vector<double> ga, gb;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
            if (std::popcount(mask) != n1) continue;
            ga.clear();
            gb.clear();
            for (int i = 0; i < n; ++i)
                (mask >> i & 1u ? ga : gb).push_back(pooled[i]);
            const double u = u_statistic(ga, gb);
            ++total;
            if (u <= u_obs + 1e-9) ++le;
            if (u >= u_obs - 1e-9) ++ge;
        }
        const double p_le = static_cast<double>(le) / total;
        const double p_ge = static_cast<double>(ge) / total;
        r.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge));
        r.exact = true;
        r.p_adjusted = r.p_value;
        return r;
    }

    // normal approximation with midrank tie correction and continuity correction
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double tie_sum = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i);
        tie_sum += t * t * t - t;
        i = j;
    }
    const double dn1 = n1, dn2 = n2, dn = n;
    const double mu = dn1 * dn2 / 2.0;
    double var = dn1 * dn2 / 12.0 * ((dn + 1.0) - tie_sum / (dn * (dn - 1.0)));
    if (var <= 0.0) {
        r.p_value = 1.0;
        r.p_adjusted = 1.0;
        r.degenerate = true;
        return r;
    }
    const double cc = std::max(0.0, std::abs(r.statistic - mu) - 0.5);
    const double z = cc / std::sqrt(var);
    r.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    r.p_adjusted = r.p_value;
    return r;
}

double bonferroni(double p, int k) {
    if (!(p >= 0.0) || p > 1.0) throw ValidationError("bonferroni: p must be in [0, 1]");
    if (k < 1) throw ValidationError("bonferroni: k must be positive");
    return std::min(1.0, static_cast<double>(k) * p);
}

RegionalUptake regional_uptake(const Volume& x, const Atlas& atlas,
                               const std::string& image_id) {
    if (x.dims != atlas.labels.dims)
        throw ValidationError("regional_uptake: volume and atlas dims differ");
    const int nr = atlas.merged_count();
    std::vector<double> sums(nr + 1, 0.0);
    std::vector<std::size_t> counts(nr + 1, 0);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const int m = atlas.merged_at(i);
        if (m == 0) continue;
        sums[m] += x.data[i];
        ++counts[m];
    }
    RegionalUptake out;
    out.image_id = image_id;
    for (int id = 1; id <= nr; ++id)
        out.mean_uptake[id] = sums[id] / static_cast<double>(counts[id]);
    return out;
}

std::vector<RegionTestRow> regional_anomaly_report(const std::vector<RegionalUptake>& inputs,
                                                   const std::vector<RegionalUptake>& recons,
                                                   const Atlas& atlas, TestMethod method,
                                                   double alpha) {
    if (inputs.size() != recons.size())
        throw ValidationError("regional_anomaly_report: input/recon count mismatch");
    if (inputs.size() < 2) throw ValidationError("regional_anomaly_report: need >= 2 pairs");
    const int nr = atlas.merged_count();

    std::vector<RegionTestRow> rows;
    for (int id = 1; id <= nr; ++id) {
        std::vector<double> in_means, rec_means;
        in_means.reserve(inputs.size());
        rec_means.reserve(recons.size());
        for (const auto& u : inputs) in_means.push_back(u.mean_uptake.at(id));
        for (const auto& u : recons) rec_means.push_back(u.mean_uptake.at(id));

        RegionTestRow row;
        row.region_id = id;
        auto nm = atlas.merged_names.find(id);
        row.region_name = nm != atlas.merged_names.end() ? nm->second
                                                         : "merged_" + std::to_string(id);
        row.mean_input = sample_mean(in_means);
        row.mean_recon = sample_mean(rec_means);
        try {
            const TestResult t = method == TestMethod::welch_t
                                     ? welch_t_test(in_means, rec_means)
                                     : mann_whitney_u(in_means, rec_means);
            row.statistic = t.statistic;
            row.p = t.p_value;
            row.degenerate = t.degenerate;
        } catch (const ValidationError&) {
            // zero variance on both sides: identical samples are certainly
            // equal, differing constants certainly different
            row.degenerate = true;
            row.p = std::equal(in_means.begin(), in_means.end(), rec_means.begin()) ? 1.0 : 0.0;
            row.statistic = 0.0;
        }
        row.p_adjusted = bonferroni(row.p, nr);
        row.significant = row.p_adjusted < alpha;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<RegionTestRow> regional_anomaly_report(const std::vector<const Volume*>& inputs,
                                                   const std::vector<const Volume*>& recons,
                                                   const Atlas& atlas, TestMethod method,
                                                   double alpha) {
    std::vector<RegionalUptake> in_u, rec_u;
    in_u.reserve(inputs.size());
    rec_u.reserve(recons.size());
    for (const Volume* v : inputs) in_u.push_back(regional_uptake(*v, atlas));
    for (const Volume* v : recons) rec_u.push_back(regional_uptake(*v, atlas));
    return regional_anomaly_report(in_u, rec_u, atlas, method, alpha);
}

} // namespace phrec
