// End-to-end acceptance suite. Each criterion prints one pass/fail line;
// the exit code is the number of failed criteria. Criteria 4, 5, 7 and 8
// share one full pipeline run; criterion 10 repeats it for byte-identity.
//
// Usage: acceptance [criterion ...]   (default: all)

#include "../metric_oracles.hpp"
#include "../stat_oracles.hpp"
#include "phrec/pipeline.hpp"
#include "phrec/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

using namespace phrec;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
    void note(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

Volume random_volume(Dims3 dims, std::uint64_t seed) {
    Volume v(dims, {1, 1, 1});
    Rng rng(seed);
    for (auto& x : v.data) x = rng.uniform();
    return v;
}

// ---------------------------------------------------------------------------
// criterion 1: metric implementations match their definitional oracles
// ---------------------------------------------------------------------------
Check criterion1() {
    Check c;
    MetricConfig cfg; // paper constants, 5 scales
    for (int pair = 0; pair < 50; ++pair) {
        const Volume x = random_volume({32, 32, 32}, 1000 + 2 * pair);
        const Volume y = random_volume({32, 32, 32}, 1001 + 2 * pair);

        const double mse_got = mse(x, y);
        const double mse_want = metric_oracles::mse_oracle(x, y);
        c.expect(std::abs(mse_got - mse_want) <= 1e-9 * std::abs(mse_want), "mse mismatch");

        const double psnr_got = psnr(x, y, 1.0);
        const double psnr_want = metric_oracles::psnr_oracle(x, y, 1.0);
        c.expect(std::abs(psnr_got - psnr_want) <= 1e-9 * std::abs(psnr_want), "psnr mismatch");

        const double ssim_got = ssim(x, y, cfg);
        const double ssim_want = metric_oracles::ssim_oracle(x, y, cfg.ssim_c1, cfg.ssim_c2);
        c.expect(std::abs(ssim_got - ssim_want) <= 1e-9 * std::abs(ssim_want), "ssim mismatch");

        const double ms_got = ms_ssim(x, y, cfg);
        const double ms_want = metric_oracles::ms_ssim_oracle(x, y, cfg);
        c.expect(std::abs(ms_got - ms_want) <= 1e-6 * std::abs(ms_want), "ms-ssim mismatch");

        c.expect(mse(x, x) == 0.0, "identity mse not exactly 0");
        c.expect(ssim(x, x, cfg) == 1.0, "identity ssim not exactly 1");
        c.expect(ms_ssim(x, x, cfg) == 1.0, "identity ms-ssim not exactly 1");
        c.expect(std::isinf(psnr(x, x, 1.0)), "identity psnr not the +inf sentinel");
    }
    c.note("50 random pairs at 32^3, 5-scale MS-SSIM");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 2: simulation algebra
// ---------------------------------------------------------------------------
Check criterion2() {
    Check c;
    const Dims3 dims{24, 24, 24};
    Mask brain(dims, {2, 2, 2}, 0);
    Mask anomaly(dims, {2, 2, 2}, 0);
    for (int k = 3; k < 21; ++k)
        for (int j = 3; j < 21; ++j)
            for (int i = 3; i < 21; ++i)
                brain.data[i + 24 * (j + 24 * std::size_t(k))] = 1;
    for (int k = 5; k < 11; ++k)
        for (int j = 5; j < 11; ++j)
            for (int i = 5; i < 11; ++i)
                anomaly.data[i + 24 * (j + 24 * std::size_t(k))] = 1;

    // exact attenuation with binary weights on a uniform image
    Volume x(dims, {2, 2, 2}, 0.8);
    WeightMask binary;
    binary.dims = dims;
    binary.spacing_mm = {2, 2, 2};
    binary.data.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < binary.data.size(); ++i) binary.data[i] = anomaly.data[i];
    const double h0 = healthiness(x, anomaly, brain);
    for (double f : {0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 0.70}) {
        const Volume sim = simulate_hypometabolism(x, binary, f);
        const double h = healthiness(sim, anomaly, brain);
        c.expect(std::abs(h - (1.0 - f) * h0) <= 1e-12 * std::abs(h0),
                 "H != (1-f)*H0 at f=" + fmt(f));
    }

    // monotone masked mean under a smoothed mask, locality, bound preservation
    WeightMask smooth = smooth_mask(anomaly, 4.0);
    Volume r = random_volume(dims, 77);
    Mask support(dims, {2, 2, 2}, 0);
    for (std::size_t i = 0; i < smooth.data.size(); ++i) support.data[i] = smooth.data[i] > 0.0;
    double prev = 1e300;
    for (double f : {0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 0.70}) {
        const Volume sim = simulate_hypometabolism(r, smooth, f);
        const double m = masked_mean(sim, support);
        c.expect(m < prev, "masked mean not strictly decreasing at f=" + fmt(f));
        prev = m;
        for (std::size_t i = 0; i < sim.data.size(); ++i) {
            if (smooth.data[i] == 0.0 && sim.data[i] != r.data[i]) {
                c.expect(false, "locality violated");
                break;
            }
            if (sim.data[i] < 0.0 || sim.data[i] > 1.0) {
                c.expect(false, "bound preservation violated");
                break;
            }
        }
    }
    c.note("H(x'(f)) = (1-f)H(x) to 1e-12 relative; locality bit-exact");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 3: gradient check on a toy architecture, 10 seeds
// ---------------------------------------------------------------------------
Check criterion3() {
    Check c;
    VaeArchitecture arch;
    arch.input_dims = {3, 3, 3};
    arch.input_spacing = {1, 1, 1};
    arch.latent_dim = 3;
    arch.encoder_hidden = {7};
    arch.decoder_hidden = {7};
    TrainConfig cfg;
    const double h = 1e-4;
    double worst = 0.0;

    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        VaeParams p = init_vae_params(arch, seed);
        const Volume x = random_volume({3, 3, 3}, 500 + seed);
        const std::uint64_t noise_seed = 900 + seed;
        const ElboResult r = elbo_loss(p, x, noise_seed, cfg);

        auto check_tensor = [&](double* data, const double* grad, std::size_t count,
                                const char* name) {
            for (std::size_t i = 0; i < count; ++i) {
                const double orig = data[i];
                data[i] = orig + h;
                const double lp = elbo_loss(p, x, noise_seed, cfg).loss;
                data[i] = orig - h;
                const double lm = elbo_loss(p, x, noise_seed, cfg).loss;
                data[i] = orig;
                const double fd = (lp - lm) / (2.0 * h);
                const double rel =
                    std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
                worst = std::max(worst, rel);
                if (rel >= 1e-4) {
                    c.expect(false, std::string(name) + " gradient off by " + fmt(rel));
                    return;
                }
            }
        };
        for (std::size_t l = 0; l < p.encoder.size(); ++l) {
            check_tensor(p.encoder[l].W.data(), r.grads.encoder[l].W.data(),
                         p.encoder[l].W.size(), "encoder.W");
            check_tensor(p.encoder[l].b.data(), r.grads.encoder[l].b.data(),
                         p.encoder[l].b.size(), "encoder.b");
        }
        for (std::size_t l = 0; l < p.decoder.size(); ++l) {
            check_tensor(p.decoder[l].W.data(), r.grads.decoder[l].W.data(),
                         p.decoder[l].W.size(), "decoder.W");
            check_tensor(p.decoder[l].b.data(), r.grads.decoder[l].b.data(),
                         p.decoder[l].b.size(), "decoder.b");
        }
    }
    c.note("10 seeds, every tensor, worst relative error " + fmt(worst));
    return c;
}

// ---------------------------------------------------------------------------
// shared full-scale pipeline run for criteria 4, 5, 7, 8 and 10
// ---------------------------------------------------------------------------
ExperimentConfig acceptance_config() {
    ExperimentConfig cfg;
    cfg.seed = 1001;
    cfg.model = "vae";
    PhantomParams pp;
    pp.dims = {64, 64, 64};
    pp.spacing_mm = {2.0, 2.0, 2.0};
    pp.global_seed = 1001;
    pp.n_subjects = 260;
    pp.sessions_per_subject = 1;
    pp.subject_variability_sigma = 0.08;
    pp.session_noise_sigma = 0.01;
    pp.region_count = 23;
    cfg.phantom = pp;
    cfg.downsample_steps = 2;
    cfg.split.test_fraction = 60.0 / 260.0;
    cfg.split.n_folds = 2;
    cfg.split.rng_seed = 7;
    cfg.train.epochs = 160;
    cfg.train.batch_size = 8;
    cfg.train.learning_rate = 1e-3;
    cfg.train.kl_weight = 3e-5;
    cfg.train.rng_seed = 11;
    cfg.latent_dim = 64;
    cfg.encoder_hidden = {1024, 256};
    cfg.decoder_hidden = {256, 1024};
    cfg.latent.multisession_subjects = 25;
    cfg.latent.multisession_count = 3;
    return cfg;
}

struct SharedRun {
    ExperimentSummary summary;
    std::filesystem::path dir;
    bool done = false;
    double minutes = 0.0;
};

SharedRun g_run;

const SharedRun& shared_run() {
    if (!g_run.done) {
        const auto t0 = std::chrono::steady_clock::now();
        g_run.dir = std::filesystem::current_path() / "acceptance_out" / "run1";
        std::filesystem::remove_all(g_run.dir);
        g_run.summary = run_experiment(acceptance_config(), g_run.dir, 2);
        g_run.minutes =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
        g_run.done = true;
    }
    return g_run;
}

std::string ad_set_id(double severity) { return simulated_set_id("AD", severity); }

// ---------------------------------------------------------------------------
// criterion 4: reconstruction-error trends across severity
// ---------------------------------------------------------------------------
Check criterion4() {
    Check c;
    const auto& run = shared_run();
    const auto& s = run.summary;

    for (double f : s.severities) {
        const std::string id = ad_set_id(f);
        const double ratio = mean_of(s.mse_gt_recon.at(id)) / s.healthy_mse_mean;
        if (f <= 0.15)
            c.expect(ratio <= 1.5,
                     "MSE(x,xhat') ratio " + fmt(ratio) + " above 1.5 at f=" + fmt(f));
        if (f >= 0.30)
            c.expect(mean_of(s.mse_sim_recon.at(id)) > mean_of(s.mse_gt_recon.at(id)),
                     "MSE(x',xhat') does not exceed MSE(x,xhat') at f=" + fmt(f));
    }
    bool significant_somewhere = false;
    double onset = 0.0;
    for (double f : s.severities) {
        if (f < 0.15) continue;
        if (s.fig4_tests.at(ad_set_id(f)).p_adjusted < 0.05) {
            significant_somewhere = true;
            onset = f;
            break;
        }
    }
    c.expect(significant_somewhere,
             "Welch test never significant for severity >= 0.15");
    c.note("onset of significance at f=" + fmt(onset) + "; run took " + fmt(run.minutes) +
           " min");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 5: healthiness restoration at severity 0.30
// ---------------------------------------------------------------------------
Check criterion5() {
    Check c;
    const auto& s = shared_run().summary;
    const auto& h = s.healthiness.at(ad_set_id(0.30));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < h.h_simulated.size(); ++i)
        hits += h.h_reconstruction[i] > h.h_simulated[i];
    const double frac = static_cast<double>(hits) / static_cast<double>(h.h_simulated.size());
    c.expect(frac >= 0.90, "H(xhat') > H(x') for only " + fmt(100 * frac) + "% of phantoms");
    const double gap = std::abs(mean_of(h.h_reconstruction) - mean_of(h.h_ground_truth));
    c.expect(gap <= 0.05, "mean healthiness gap " + fmt(gap) + " above 0.05");

    // subject-specificity invariant rides along on the same run
    const double spec = s.subject_specificity.at(ad_set_id(0.30));
    c.expect(spec >= 0.90, "SSIM(xhat,xhat') beats SSIM(x,x') for only " + fmt(100 * spec) + "%");
    c.note("restored " + fmt(100 * frac) + "% ; mean gap " + fmt(gap) + "; specificity " +
           fmt(100 * spec) + "%");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 6: identity baseline contrast
// ---------------------------------------------------------------------------
Check criterion6() {
    Check c;
    ExperimentConfig cfg;
    cfg.seed = 55;
    cfg.model = "identity";
    PhantomParams pp;
    pp.dims = {32, 32, 32};
    pp.spacing_mm = {4, 4, 4};
    pp.global_seed = 55;
    pp.n_subjects = 12;
    pp.sessions_per_subject = 1;
    pp.region_count = 23;
    cfg.phantom = pp;
    cfg.downsample_steps = 1;
    cfg.split.test_fraction = 0.34;
    cfg.split.n_folds = 2;
    cfg.split.stratify_on = {"sex"};
    cfg.split.rng_seed = 55;
    cfg.ad_severities = {0.3};
    cfg.subtypes = {};

    const auto dir = std::filesystem::current_path() / "acceptance_out" / "identity";
    std::filesystem::remove_all(dir);
    const ExperimentSummary s = run_experiment(cfg, dir, 2);

    for (double m : s.mse_sim_recon.at("AD_0p3"))
        c.expect(m == 0.0, "identity MSE(x',xhat') not exactly 0");
    const auto& h = s.healthiness.at("AD_0p3");
    for (std::size_t i = 0; i < h.h_simulated.size(); ++i)
        c.expect(h.h_reconstruction[i] == h.h_simulated[i],
                 "identity healthiness not exactly equal");
    for (double m : s.healthy_mse) c.expect(m == 0.0, "identity CN MSE not exactly 0");
    c.note("identity model flagged: zero residual, healthiness unchanged");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 7: regional detection at severity 0.30
// ---------------------------------------------------------------------------
Check criterion7() {
    Check c;
    const auto& s = shared_run().summary;
    const std::string id = ad_set_id(0.30);
    const auto& rows = s.regional.at(id);
    const std::set<int> mask_ids(s.set_mask_regions.at(id).begin(),
                                 s.set_mask_regions.at(id).end());

    int mask_sig = 0, mask_total = 0, nonmask_sig = 0, nonmask_total = 0;
    std::string extra;
    for (const auto& row : rows) {
        if (mask_ids.count(row.region_id)) {
            ++mask_total;
            if (row.significant) ++mask_sig;
            else c.expect(false, "mask region " + std::to_string(row.region_id) +
                                     " not significant");
        } else {
            ++nonmask_total;
            if (row.significant) {
                ++nonmask_sig;
                extra += " " + std::to_string(row.region_id);
            }
        }
    }
    const double clean = 1.0 - static_cast<double>(nonmask_sig) / nonmask_total;
    c.expect(clean >= 0.90, "only " + fmt(100 * clean) + "% of non-mask regions stay clean (" +
                                std::to_string(nonmask_sig) + " false positives:" + extra + ")");
    c.note(std::to_string(mask_sig) + "/" + std::to_string(mask_total) + " mask regions hit, " +
           std::to_string(nonmask_sig) + "/" + std::to_string(nonmask_total) +
           " non-mask flagged");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 8: latent-space structure
// ---------------------------------------------------------------------------
Check criterion8() {
    Check c;
    const auto& s = shared_run().summary;

    c.expect(s.intra_inter.test.p_value < 0.005,
             "intra/inter Mann-Whitney p=" + fmt(s.intra_inter.test.p_value));
    c.expect(mean_of(s.intra_inter.intra) < mean_of(s.intra_inter.inter),
             "intra distances not below inter distances");

    const double rho = mean_of(s.severity_rank_corr);
    c.expect(rho >= 0.9, "severity-sweep rank correlation " + fmt(rho) + " below 0.9");

    c.expect(s.lmm_mse.beta1 > 0.0, "LMM latent-vs-MSE slope not positive");
    c.expect(s.lmm_mse.p1 < 0.05, "LMM slope p=" + fmt(s.lmm_mse.p1) + " not below 0.05");

    c.note("intra/inter p=" + fmt(s.intra_inter.test.p_value) + ", mean rank corr " + fmt(rho) +
           ", LMM slope " + fmt(s.lmm_mse.beta1) + " (p=" + fmt(s.lmm_mse.p1) + ")");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 9: statistics oracles
// ---------------------------------------------------------------------------
Check criterion9() {
    Check c;
    Rng rng(4242);
    int exact_runs = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n1 = 2 + static_cast<int>(rng.uniform_int(4));
        const int n2 = 2 + static_cast<int>(rng.uniform_int(std::min(8 - n1, 4) + 1));
        std::vector<double> a(n1), b(n2);
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal() + 0.4;
        const TestResult r = mann_whitney_u(a, b);
        if (!r.exact) continue;
        ++exact_runs;
        const auto want = stat_oracles::exact_mw_oracle(a, b);
        c.expect(std::abs(r.statistic - want.u) <= 1e-12, "U mismatch");
        c.expect(std::abs(r.p_value - want.p) <= 1e-12, "exact p mismatch");
    }
    c.expect(exact_runs == 200, "expected every trial on the exact path");

    // LMM recovery: beta = (1, -0.5) with known variance components; each
    // coefficient must land in its own 95% CI in >= 90% of replicates
    Rng sim(5150);
    int hits0 = 0, hits1 = 0;
    const int reps = 50;
    for (int rep = 0; rep < reps; ++rep) {
        std::vector<std::vector<std::pair<double, double>>> groups;
        for (int g = 0; g < 200; ++g) {
            const double g0 = 0.5 * sim.normal();
            const double g1 = 0.2 * sim.normal();
            std::vector<std::pair<double, double>> pts;
            for (int i = 0; i < 10; ++i) {
                const double x = 2.0 * sim.uniform();
                pts.emplace_back(x, 1.0 + g0 + (-0.5 + g1) * x + 0.3 * sim.normal());
            }
            groups.push_back(std::move(pts));
        }
        const LmmFit fit = lmm_fit(groups);
        hits0 += fit.ci0_lo <= 1.0 && 1.0 <= fit.ci0_hi;
        hits1 += fit.ci1_lo <= -0.5 && -0.5 <= fit.ci1_hi;
    }
    c.expect(hits0 >= 45, "intercept covered in only " + std::to_string(hits0) + "/50");
    c.expect(hits1 >= 45, "slope covered in only " + std::to_string(hits1) + "/50");
    c.note("200 exact Mann-Whitney trials; LMM coverage " + std::to_string(hits0) + "/50 and " +
           std::to_string(hits1) + "/50");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 10: byte-identical reproduction
// ---------------------------------------------------------------------------
Check criterion10() {
    Check c;
    const auto& run1 = shared_run();
    const auto dir2 = std::filesystem::current_path() / "acceptance_out" / "run2";
    std::filesystem::remove_all(dir2);
    run_experiment(acceptance_config(), dir2, 1); // different thread count on purpose

    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    std::size_t compared = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(run1.dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext != ".csv" && ext != ".json" && ext != ".jsonl") continue;
        const auto rel = std::filesystem::relative(entry.path(), run1.dir);
        const auto other = dir2 / rel;
        if (!std::filesystem::exists(other)) {
            c.expect(false, "missing in run2: " + rel.string());
            continue;
        }
        if (slurp(entry.path()) != slurp(other))
            c.expect(false, "differs: " + rel.string());
        ++compared;
    }
    c.expect(compared > 20, "too few result files compared");
    c.note(std::to_string(compared) + " result files byte-identical across runs");
    return c;
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    auto selected = [&](int k) { return wanted.empty() || wanted.count(k); };

    struct Entry {
        int id;
        const char* title;
        Check (*fn)();
    };
    const Entry entries[] = {
        {1, "metric oracle suite", criterion1},
        {2, "simulation algebra", criterion2},
        {3, "gradient check", criterion3},
        {4, "severity trend (Fig. 4 analog)", criterion4},
        {5, "healthiness restoration (Fig. 5 analog)", criterion5},
        {6, "identity baseline contrast", criterion6},
        {7, "regional detection", criterion7},
        {8, "latent structure", criterion8},
        {9, "statistics oracles", criterion9},
        {10, "reproducibility", criterion10},
    };

    int failures = 0;
    for (const auto& e : entries) {
        if (!selected(e.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Check c;
        try {
            c = e.fn();
        } catch (const std::exception& ex) {
            c.ok = false;
            c.detail = std::string("exception: ") + ex.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d (%s): %s [%.1fs]%s%s\n", e.id, e.title,
                    c.ok ? "PASS" : "FAIL", secs, c.detail.empty() ? "" : " - ",
                    c.detail.c_str());
        std::fflush(stdout);
        if (!c.ok) ++failures;
    }
    return failures;
}
