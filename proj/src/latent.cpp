#include "phrec/latent.hpp"

#include "phrec/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace phrec {

using Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

constexpr double kZ975 = 1.959963984540054;

void fix_component_signs(MatrixXd& components) {
    for (Eigen::Index r = 0; r < components.rows(); ++r) {
        Eigen::Index imax = 0;
        components.row(r).cwiseAbs().maxCoeff(&imax);
        if (components(r, imax) < 0.0) components.row(r) = -components.row(r);
    }
}

} // namespace

PcaModel pca_fit(const std::vector<VectorXd>& data, int k) {
    if (data.size() < 2) throw ValidationError("pca_fit: need at least 2 samples");
    if (k < 1) throw ValidationError("pca_fit: k must be >= 1");
    if (static_cast<std::size_t>(k) > data.size())
        throw ValidationError("pca_fit: fewer samples than components requested");
    const auto d = data[0].size();
    for (const auto& v : data)
        if (v.size() != d) throw ValidationError("pca_fit: inconsistent vector lengths");
    if (k > d) throw ValidationError("pca_fit: more components than dimensions");

    const auto n = static_cast<Eigen::Index>(data.size());
    MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i) X.row(i) = data[i];
    PcaModel m;
    m.mean = X.colwise().mean();
    X.rowwise() -= m.mean.transpose();

    Eigen::BDCSVD<MatrixXd> svd(X, Eigen::ComputeThinV);
    m.components = svd.matrixV().leftCols(k).transpose();
    fix_component_signs(m.components);
    const VectorXd sv = svd.singularValues();
    m.explained_variance.resize(k);
    for (int i = 0; i < k; ++i)
        m.explained_variance[i] = sv[i] * sv[i] / static_cast<double>(n - 1);
    m.total_variance = sv.squaredNorm() / static_cast<double>(n - 1);
    return m;
}

VectorXd pca_project(const PcaModel& m, const VectorXd& v) {
    if (v.size() != m.mean.size())
        throw ValidationError("pca_project: vector length does not match the model");
    return m.components * (v - m.mean);
}

double minkowski(const VectorXd& a, const VectorXd& b, double p) {
    if (a.size() != b.size()) throw ValidationError("minkowski: length mismatch");
    if (!(p >= 1.0)) throw ValidationError("minkowski: p must be >= 1");
    const VectorXd diff = (a - b).cwiseAbs();
    const double m = diff.maxCoeff();
    if (m == 0.0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < diff.size(); ++i) acc += std::pow(diff[i] / m, p);
    return m * std::pow(acc, 1.0 / p);
}

IntraInterResult intra_inter_study(const std::vector<VectorXd>& latents,
                                   const std::vector<std::string>& subject_ids, double p,
                                   int inter_neighbors) {
    if (latents.size() != subject_ids.size())
        throw ValidationError("intra_inter_study: latents and subject ids differ in length");
    if (inter_neighbors < 1) throw ValidationError("intra_inter_study: need >= 1 inter neighbor");
    const std::size_t n = latents.size();

    std::map<std::string, std::size_t> sessions_per_subject;
    for (const auto& s : subject_ids) ++sessions_per_subject[s];
    std::size_t multi = 0;
    for (const auto& [s, c] : sessions_per_subject) {
        (void)s;
        if (c >= 2) ++multi;
    }
    if (sessions_per_subject.size() < 2 || multi < 2)
        throw ValidationError("intra_inter_study: need >= 2 subjects with >= 2 sessions each");

    IntraInterResult out;
    std::vector<double> dist_buffer;
    for (std::size_t i = 0; i < n; ++i) {
        double intra_sum = 0.0;
        std::size_t intra_count = 0;
        dist_buffer.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dij = minkowski(latents[i], latents[j], p);
            if (subject_ids[j] == subject_ids[i]) {
                intra_sum += dij;
                ++intra_count;
            } else {
                dist_buffer.push_back(dij);
            }
        }
        if (static_cast<int>(dist_buffer.size()) < inter_neighbors)
            throw ValidationError("intra_inter_study: insufficient other-subject images");
        if (intra_count > 0) out.intra.push_back(intra_sum / double(intra_count));
        std::partial_sort(dist_buffer.begin(), dist_buffer.begin() + inter_neighbors,
                          dist_buffer.end());
        out.inter.push_back(
            std::accumulate(dist_buffer.begin(), dist_buffer.begin() + inter_neighbors, 0.0) /
            inter_neighbors);
    }

    out.test = mann_whitney_u(out.intra, out.inter);
    const bool all_zero =
        std::all_of(out.intra.begin(), out.intra.end(), [](double v) { return v == 0.0; }) &&
        std::all_of(out.inter.begin(), out.inter.end(), [](double v) { return v == 0.0; });
    out.degenerate = all_zero || out.test.degenerate;
    return out;
}

std::vector<NeighborCurve> neighbor_image_distance_curves(
    const std::vector<VectorXd>& latents, const std::vector<std::string>& subject_ids,
    const std::vector<const Volume*>& volumes, const std::vector<std::string>& image_ids,
    const std::vector<int>& ranks, double p, const MetricConfig& cfg) {
    const std::size_t n = latents.size();
    if (subject_ids.size() != n || volumes.size() != n || image_ids.size() != n)
        throw ValidationError("neighbor_image_distance_curves: misaligned input lists");
    if (ranks.empty()) throw ValidationError("neighbor_image_distance_curves: empty rank list");
    for (int r : ranks)
        if (r < 1) throw ValidationError("neighbor_image_distance_curves: ranks are 1-based");

    std::vector<NeighborCurve> curves;
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < n; ++i) {
        order.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || subject_ids[j] == subject_ids[i]) continue;
            order.emplace_back(minkowski(latents[i], latents[j], p), j);
        }
        const int max_rank = *std::max_element(ranks.begin(), ranks.end());
        if (static_cast<int>(order.size()) < max_rank)
            throw ValidationError("neighbor_image_distance_curves: rank " +
                                  std::to_string(max_rank) + " exceeds the " +
                                  std::to_string(order.size()) +
                                  " available other-subject images");
        std::sort(order.begin(), order.end()); // ties broken by index for determinism

        NeighborCurve curve;
        curve.image_id = image_ids[i];
        for (int r : ranks) {
            const auto& [dist, j] = order[static_cast<std::size_t>(r - 1)];
            NeighborPoint pt;
            pt.rank = r;
            pt.latent_distance = dist;
            pt.image_mse = mse(*volumes[i], *volumes[j]);
            pt.image_ssim = ssim(*volumes[i], *volumes[j], cfg);
            curve.points.push_back(pt);
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

LmmFit lmm_fit(const std::vector<std::vector<std::pair<double, double>>>& groups, int max_iter,
               double tol) {
    if (groups.size() < 3) throw ValidationError("lmm_fit: need >= 3 groups");
    for (const auto& g : groups)
        if (g.size() < 2) throw ValidationError("lmm_fit: every group needs >= 2 points");

    const std::size_t G = groups.size();
    std::size_t N = 0;
    std::vector<MatrixXd> Z(G);
    std::vector<VectorXd> Y(G);
    for (std::size_t i = 0; i < G; ++i) {
        const auto ni = static_cast<Eigen::Index>(groups[i].size());
        Z[i].resize(ni, 2);
        Y[i].resize(ni);
        for (Eigen::Index r = 0; r < ni; ++r) {
            Z[i](r, 0) = 1.0;
            Z[i](r, 1) = groups[i][static_cast<std::size_t>(r)].first;
            Y[i][r] = groups[i][static_cast<std::size_t>(r)].second;
        }
        N += groups[i].size();
    }

    // OLS initialization
    Matrix2d xtx = Matrix2d::Zero();
    Vector2d xty = Vector2d::Zero();
    for (std::size_t i = 0; i < G; ++i) {
        xtx += Z[i].transpose() * Z[i];
        xty += Z[i].transpose() * Y[i];
    }
    if (std::abs(xtx.determinant()) < 1e-12 * xtx.trace() * xtx.trace())
        throw ValidationError("lmm_fit: singular design (no slope information)");
    Vector2d beta = xtx.ldlt().solve(xty);
    double rss = 0.0;
    for (std::size_t i = 0; i < G; ++i) rss += (Y[i] - Z[i] * beta).squaredNorm();
    double sigma2 = std::max(rss / static_cast<double>(N), 1e-10);
    Matrix2d psi = 0.5 * sigma2 * Matrix2d::Identity();
    sigma2 *= 0.5;

    LmmFit fit;
    double prev_ll = -std::numeric_limits<double>::infinity();
    Matrix2d beta_info = Matrix2d::Zero();

    int iter = 0;
    for (; iter < max_iter; ++iter) {
        // GLS update of beta with the current variance components
        beta_info.setZero();
        Vector2d rhs = Vector2d::Zero();
        std::vector<MatrixXd> Vinv(G);
        for (std::size_t i = 0; i < G; ++i) {
            const auto ni = Z[i].rows();
            MatrixXd V = Z[i] * psi * Z[i].transpose() +
                         sigma2 * MatrixXd::Identity(ni, ni);
            Vinv[i] = V.llt().solve(MatrixXd::Identity(ni, ni));
            beta_info += Z[i].transpose() * Vinv[i] * Z[i];
            rhs += Z[i].transpose() * Vinv[i] * Y[i];
        }
        if (std::abs(beta_info.determinant()) <
            1e-14 * std::max(1.0, beta_info.trace() * beta_info.trace()))
            throw ValidationError("lmm_fit: singular design");
        beta = beta_info.ldlt().solve(rhs);

        // observed-data log-likelihood at (beta, psi, sigma2)
        double ll = 0.0;
        for (std::size_t i = 0; i < G; ++i) {
            const auto ni = Z[i].rows();
            MatrixXd V = Z[i] * psi * Z[i].transpose() +
                         sigma2 * MatrixXd::Identity(ni, ni);
            Eigen::LLT<MatrixXd> llt(V);
            const VectorXd r = Y[i] - Z[i] * beta;
            double logdet = 0.0;
            for (Eigen::Index q = 0; q < ni; ++q) logdet += 2.0 * std::log(llt.matrixL()(q, q));
            ll += -0.5 * (static_cast<double>(ni) * std::log(2.0 * M_PI) + logdet +
                          r.dot(llt.solve(r)));
        }
        fit.ll_trace.push_back(ll);
        if (std::isfinite(prev_ll) && ll - prev_ll < tol && ll - prev_ll > -1e-6) {
            fit.converged = true;
            prev_ll = ll;
            ++iter;
            break;
        }
        prev_ll = ll;

        // E-step: posterior moments of the random effects
        Matrix2d psi_reg = psi;
        psi_reg(0, 0) = std::max(psi_reg(0, 0), 1e-14);
        psi_reg(1, 1) = std::max(psi_reg(1, 1), 1e-14);
        const Matrix2d psi_inv = psi_reg.inverse();
        Matrix2d psi_new = Matrix2d::Zero();
        double sse = 0.0;
        for (std::size_t i = 0; i < G; ++i) {
            const VectorXd r = Y[i] - Z[i] * beta;
            const Matrix2d post_prec = psi_inv + Z[i].transpose() * Z[i] / sigma2;
            const Matrix2d post_cov = post_prec.inverse();
            const Vector2d m = post_cov * (Z[i].transpose() * r) / sigma2;
            psi_new += m * m.transpose() + post_cov;
            const VectorXd resid = r - Z[i] * m;
            sse += resid.squaredNorm() + (Z[i] * post_cov * Z[i].transpose()).trace();
        }
        // M-step
        psi = psi_new / static_cast<double>(G);
        sigma2 = std::max(sse / static_cast<double>(N), 1e-12);
    }

    fit.iterations = iter;
    fit.beta0 = beta[0];
    fit.beta1 = beta[1];
    fit.random_cov = psi;
    fit.resid_var = sigma2;
    fit.log_lik = prev_ll;

    const Matrix2d cov_beta = beta_info.inverse();
    fit.se0 = std::sqrt(std::max(cov_beta(0, 0), 0.0));
    fit.se1 = std::sqrt(std::max(cov_beta(1, 1), 0.0));
    fit.z0 = fit.se0 > 0.0 ? fit.beta0 / fit.se0 : (fit.beta0 == 0.0 ? 0.0 : INFINITY);
    fit.z1 = fit.se1 > 0.0 ? fit.beta1 / fit.se1 : (fit.beta1 == 0.0 ? 0.0 : INFINITY);
    fit.p0 = 2.0 * normal_cdf(-std::abs(fit.z0));
    fit.p1 = 2.0 * normal_cdf(-std::abs(fit.z1));
    fit.ci0_lo = fit.beta0 - kZ975 * fit.se0;
    fit.ci0_hi = fit.beta0 + kZ975 * fit.se0;
    fit.ci1_lo = fit.beta1 - kZ975 * fit.se1;
    fit.ci1_hi = fit.beta1 + kZ975 * fit.se1;
    return fit;
}

} // namespace phrec
