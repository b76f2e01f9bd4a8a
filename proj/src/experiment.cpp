#include "csv_util.hpp"
#include "phrec/errors.hpp"
#include "phrec/pipeline.hpp"
#include "phrec/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <thread>

namespace phrec {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(threads, static_cast<int>(n));
    pool.reserve(count);
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

Volume downsample_n(Volume v, int steps) {
    for (int s = 0; s < steps; ++s) v = downsample_avg2(v);
    return v;
}

// Spearman rank correlation with midranks.
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
            return v[i] < v[j];
        });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j < n && v[idx[j]] == v[idx[i]]) ++j;
            const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j - 1)) + 1.0;
            for (std::size_t q = i; q < j; ++q) r[idx[q]] = mid;
            i = j;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return num / std::sqrt(va * vb);
}

// Signed coordinate of 2D points along their own leading principal direction.
std::vector<double> principal_positions(const std::vector<Eigen::Vector2d>& pts) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& p : pts) {
        const Eigen::Vector2d d = p - mean;
        sxx += d[0] * d[0];
        sxy += d[0] * d[1];
        syy += d[1] * d[1];
    }
    // leading eigenvector of [[sxx, sxy], [sxy, syy]]
    const double tr = sxx + syy;
    const double det = sxx * syy - sxy * sxy;
    const double lam = 0.5 * tr + std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
    Eigen::Vector2d dir;
    if (std::abs(sxy) > 1e-300)
        dir = Eigen::Vector2d(lam - syy, sxy).normalized();
    else
        dir = sxx >= syy ? Eigen::Vector2d(1, 0) : Eigen::Vector2d(0, 1);
    std::vector<double> t;
    t.reserve(pts.size());
    for (const auto& p : pts) t.push_back(dir.dot(p - mean));
    return t;
}

struct TestImage {
    std::string image_id;
    std::string subject_id;
    Volume x;    // evaluation grid
    Volume xhat; // model reconstruction of x
};

std::string bool_cell(bool b) { return b ? "true" : "false"; }

} // namespace

ExperimentSummary run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                                 int threads) {
    cfg.validate();
    fs::create_directories(out_dir);
    save_experiment_config(cfg, out_dir / "config_echo.json");

    json index;
    index["format"] = "phrec-report-index";
    json sections = json::object();
    auto section_done = [&](const std::string& name, const std::vector<std::string>& artifacts) {
        sections[name] = {{"status", "done"}, {"artifacts", artifacts}};
    };
    auto section_skipped = [&](const std::string& name, const std::string& reason) {
        sections[name] = {{"status", "skipped"}, {"reason", reason}};
    };

    // ---- cohort and atlas ------------------------------------------------------
    CohortManifest cohort;
    Atlas gen_atlas;
    if (cfg.cohort_manifest) {
        cohort = load_cohort_manifest(*cfg.cohort_manifest);
        cohort.validate(true);
        gen_atlas = load_atlas(*cfg.atlas_stem);
    } else {
        cohort = generate_cohort(*cfg.phantom, out_dir / "cohort");
        gen_atlas = synthetic_atlas(cfg.phantom->dims, cfg.phantom->spacing_mm,
                                    cfg.phantom->region_count);
        save_atlas(gen_atlas, out_dir / "cohort" / "atlas");
    }
    if (gen_atlas.labels.dims != Dims3{0, 0, 0}) {
        const Volume probe = load_volume(cohort.resolve(cohort.records.at(0)));
        if (probe.dims != gen_atlas.labels.dims)
            throw ValidationError("cohort volumes and atlas live on different grids");
    }
    Atlas eval_atlas = gen_atlas;
    for (int s = 0; s < cfg.downsample_steps; ++s) eval_atlas = atlas_downsample2(eval_atlas);
    const Mask eval_brain = eval_atlas.brain_mask();

    // ---- quality control -------------------------------------------------------
    Mask outside;
    {
        const Mask brain = gen_atlas.brain_mask();
        outside.dims = brain.dims;
        outside.spacing_mm = brain.spacing_mm;
        outside.data.resize(brain.data.size());
        for (std::size_t i = 0; i < brain.data.size(); ++i) outside.data[i] = !brain.data[i];
    }
    std::vector<QcResult> qc_results(cohort.records.size());
    std::atomic<bool> range_ok{true};
    parallel_for(cohort.records.size(), threads, [&](std::size_t i) {
        const Volume v = load_volume(cohort.resolve(cohort.records[i]));
        // normalized-uptake convention enforced at ingestion
        for (double x : v.data)
            if (x < 0.0 || x > 1.0) {
                range_ok = false;
                break;
            }
        qc_results[i] = qc_overlap(v, outside, cfg.qc_threshold);
    });
    if (!range_ok)
        throw ValidationError("cohort volumes must hold normalized uptake in [0, 1]");
    CohortManifest working;
    working.base_dir = cohort.base_dir;
    {
        csvu::Writer qc_csv(out_dir / "qc.csv",
                            {"image_id", "subject_id", "session_id", "score", "pass"});
        for (std::size_t i = 0; i < cohort.records.size(); ++i) {
            const auto& r = cohort.records[i];
            qc_csv.row({r.subject_id + "_" + r.session_id, r.subject_id, r.session_id,
                        csvu::fmt(qc_results[i].score), bool_cell(qc_results[i].pass)});
            if (qc_results[i].pass) working.records.push_back(r);
        }
    }
    section_done("qc", {"qc.csv"});

    // ---- split -----------------------------------------------------------------
    const CohortSplit split = split_cohort(working, cfg.split);
    {
        json s;
        s["test_subjects"] = json::array();
        std::set<std::string> test_ids;
        for (const auto& r : split.test.records) test_ids.insert(r.subject_id);
        for (const auto& id : test_ids) s["test_subjects"].push_back(id);
        s["folds"] = json::array();
        for (std::size_t f = 0; f < split.validation_folds.size(); ++f) {
            std::set<std::string> val_ids, train_ids;
            for (const auto& r : split.validation_folds[f].records) val_ids.insert(r.subject_id);
            for (const auto& r : split.train_folds[f].records) train_ids.insert(r.subject_id);
            json fold;
            fold["fold"] = f;
            fold["validation_subjects"] = json::array();
            for (const auto& id : val_ids) fold["validation_subjects"].push_back(id);
            fold["n_train_subjects"] = train_ids.size();
            fold["n_train_images"] = split.train_folds[f].records.size();
            s["folds"].push_back(fold);
        }
        fs::create_directories(out_dir / "split");
        std::ofstream f(out_dir / "split" / "split.json");
        f << s.dump(2) << "\n";
    }
    section_done("split", {"split/split.json"});

    // ---- model / folds ---------------------------------------------------------
    ExperimentSummary summary;
    VaeArchitecture arch;
    arch.input_dims = eval_atlas.labels.dims;
    arch.input_spacing = eval_atlas.labels.spacing_mm;
    arch.latent_dim = cfg.latent_dim;
    arch.encoder_hidden = cfg.encoder_hidden;
    arch.decoder_hidden = cfg.decoder_hidden;

    auto load_eval = [&](const CohortManifest& m, const CohortRecord& r) {
        return downsample_n(load_volume(m.resolve(r)), cfg.downsample_steps);
    };

    std::unique_ptr<Reconstructor> model;
    if (cfg.model == "identity") {
        model = identity_baseline();
        summary.selected_fold = -1;
        section_skipped("folds", "identity baseline needs no training");
    } else {
        double best_min_ssim = -2.0;
        int best_fold = -1;
        std::vector<std::string> fold_artifacts;
        for (std::size_t f = 0; f < split.train_folds.size(); ++f) {
            std::vector<Volume> train_imgs, val_imgs;
            for (const auto& r : split.train_folds[f].records)
                train_imgs.push_back(load_eval(split.train_folds[f], r));
            for (const auto& r : split.validation_folds[f].records)
                val_imgs.push_back(load_eval(split.validation_folds[f], r));

            TrainConfig tc = cfg.train;
            tc.rng_seed = mix_seed(cfg.train.rng_seed, 0x666f6c64, f); // "fold"
            std::vector<TrainTraceRow> trace;
            const VaeParams params = train_vae(train_imgs, val_imgs, arch, tc, &trace);

            const fs::path fold_dir = out_dir / "folds" / ("fold_" + std::to_string(f));
            fs::create_directories(fold_dir);
            save_checkpoint(params, fold_dir / "checkpoint.vae");
            {
                csvu::Writer w(fold_dir / "loss_trace.csv",
                               {"epoch", "train_loss", "val_loss", "mse_term", "kl_term"});
                for (const auto& row : trace)
                    w.row({csvu::fmt(row.epoch), csvu::fmt(row.train_loss),
                           csvu::fmt(row.val_loss), csvu::fmt(row.mse_term),
                           csvu::fmt(row.kl_term)});
            }
            double min_ssim = 2.0;
            {
                csvu::Writer w(fold_dir / "val_metrics.csv",
                               {"image_id", "comparison", "mse", "psnr", "ssim", "ms_ssim"});
                for (std::size_t i = 0; i < val_imgs.size(); ++i) {
                    const Volume rec = reconstruct(params, val_imgs[i]);
                    const ImageMetrics m = image_metrics(val_imgs[i], rec, cfg.metrics);
                    const auto& r = split.validation_folds[f].records[i];
                    w.row({r.subject_id + "_" + r.session_id, "x_vs_xhat", csvu::fmt(m.mse),
                           csvu::fmt(m.psnr), csvu::fmt(m.ssim), csvu::fmt(m.ms_ssim)});
                    min_ssim = std::min(min_ssim, m.ssim);
                }
            }
            fold_artifacts.push_back("folds/fold_" + std::to_string(f) + "/checkpoint.vae");
            if (min_ssim > best_min_ssim) {
                best_min_ssim = min_ssim;
                best_fold = static_cast<int>(f);
            }
        }
        if (cfg.fold_override) best_fold = *cfg.fold_override;
        summary.selected_fold = best_fold;
        {
            json sel;
            sel["selected_fold"] = best_fold;
            sel["criterion"] = cfg.fold_override ? "override" : "highest minimum validation SSIM";
            std::ofstream f(out_dir / "fold_selection.json");
            f << sel.dump(2) << "\n";
        }
        model = std::make_unique<VaeModel>(load_checkpoint(
            out_dir / "folds" / ("fold_" + std::to_string(best_fold)) / "checkpoint.vae"));
        fold_artifacts.push_back("fold_selection.json");
        section_done("folds", fold_artifacts);
    }

    // ---- CN test reconstruction (Table 2 analog) --------------------------------
    std::vector<TestImage> test_images(split.test.records.size());
    parallel_for(split.test.records.size(), threads, [&](std::size_t i) {
        const auto& r = split.test.records[i];
        TestImage t;
        t.image_id = r.subject_id + "_" + r.session_id;
        t.subject_id = r.subject_id;
        t.x = load_eval(split.test, r);
        t.xhat = model->reconstruct(t.x);
        test_images[i] = std::move(t);
    });
    {
        csvu::Writer w(out_dir / "recon_metrics_cn.csv",
                       {"image_id", "comparison", "mse", "psnr", "ssim", "ms_ssim"});
        for (const auto& t : test_images) {
            const ImageMetrics m = image_metrics(t.x, t.xhat, cfg.metrics);
            w.row({t.image_id, "x_vs_xhat", csvu::fmt(m.mse), csvu::fmt(m.psnr),
                   csvu::fmt(m.ssim), csvu::fmt(m.ms_ssim)});
            summary.healthy_mse.push_back(m.mse);
            summary.healthy_ssim.push_back(m.ssim);
        }
    }
    summary.healthy_mse_mean =
        std::accumulate(summary.healthy_mse.begin(), summary.healthy_mse.end(), 0.0) /
        static_cast<double>(summary.healthy_mse.size());
    section_done("reconstruction", {"recon_metrics_cn.csv"});

    // ---- simulated test sets -----------------------------------------------------
    const std::vector<SimulatedSet> sets =
        materialize_test_sets(split.test, gen_atlas, cfg.ad_severities, cfg.subtypes,
                              cfg.subtype_severity, cfg.smoothing_sigma_mm, out_dir / "sim");
    summary.severities = cfg.ad_severities;
    section_done("simulation", {"sim/sets.jsonl"});

    std::map<std::string, Mask> eval_subtype_masks;
    for (const auto& set : sets)
        if (!eval_subtype_masks.count(set.subtype))
            eval_subtype_masks[set.subtype] = build_subtype_mask(eval_atlas, set.subtype);

    std::map<std::string, std::size_t> test_index;
    for (std::size_t i = 0; i < test_images.size(); ++i)
        test_index[test_images[i].image_id] = i;

    fs::create_directories(out_dir / "regional");
    {
        // per-image regional uptake of the healthy CN inputs (reference cohort)
        csvu::Writer w(out_dir / "regional" / "uptake_cn_input.csv", [&] {
            std::vector<std::string> h{"image_id"};
            for (int id = 1; id <= eval_atlas.merged_count(); ++id)
                h.push_back(eval_atlas.merged_names.at(id));
            return h;
        }());
        for (const auto& t : test_images) {
            RegionalUptake u = regional_uptake(t.x, eval_atlas, t.image_id);
            std::vector<std::string> cells{t.image_id};
            for (int id = 1; id <= eval_atlas.merged_count(); ++id)
                cells.push_back(csvu::fmt(u.mean_uptake.at(id)));
            w.row(cells);
        }
    }

    std::vector<RegionalUptake> cn_uptakes;
    for (const auto& t : test_images)
        cn_uptakes.push_back(regional_uptake(t.x, eval_atlas, t.image_id));

    csvu::Writer fig4_csv(out_dir / "fig4_mse.csv",
                          {"set_id", "severity", "image_id", "mse_gt_recon", "mse_sim_recon"});
    csvu::Writer subtype_csv(out_dir / "subtype_metrics.csv",
                             {"set_id", "subtype", "image_id", "comparison", "mse", "psnr",
                              "ssim", "ms_ssim"});
    csvu::Writer recon_pair_csv(out_dir / "subtype_ssim_recon.csv",
                                {"set_id", "subtype", "image_id", "ssim_xhat_xhatp"});
    csvu::Writer health_csv(out_dir / "healthiness.csv",
                            {"set_id", "subtype", "severity", "image_id", "h_ground_truth",
                             "h_simulated", "h_reconstruction"});

    struct SetEval {
        std::vector<Volume> sim_inputs; // evaluation grid
        std::vector<Volume> recons;
    };

    std::map<std::string, std::vector<Eigen::VectorXd>> sim_latents; // per set, test order

    for (const auto& set : sets) {
        SetEval ev;
        ev.sim_inputs.resize(set.records.size());
        ev.recons.resize(set.records.size());
        parallel_for(set.records.size(), threads, [&](std::size_t i) {
            const Volume sim64 = load_volume(out_dir / "sim" / set.records[i].simulated_path);
            ev.sim_inputs[i] = downsample_n(sim64, cfg.downsample_steps);
            ev.recons[i] = model->reconstruct(ev.sim_inputs[i]);
        });

        const Mask& anomaly = eval_subtype_masks.at(set.subtype);
        HealthinessSummary hsum;
        std::vector<RegionalUptake> in_up, rec_up;
        std::size_t specificity_hits = 0;
        double ssim_pair_sum = 0.0;

        for (std::size_t i = 0; i < set.records.size(); ++i) {
            const auto& rec = set.records[i];
            const TestImage& t = test_images.at(test_index.at(rec.image_id));
            const Volume& xp = ev.sim_inputs[i];
            const Volume& xhatp = ev.recons[i];

            const double m_gt = mse(t.x, xhatp);
            const double m_sim = mse(xp, xhatp);
            summary.mse_gt_recon[set.set_id].push_back(m_gt);
            summary.mse_sim_recon[set.set_id].push_back(m_sim);
            fig4_csv.row({set.set_id, csvu::fmt(set.severity), rec.image_id, csvu::fmt(m_gt),
                          csvu::fmt(m_sim)});

            const ImageMetrics mm = image_metrics(t.x, xhatp, cfg.metrics);
            subtype_csv.row({set.set_id, set.subtype, rec.image_id, "x_vs_xhatp",
                             csvu::fmt(mm.mse), csvu::fmt(mm.psnr), csvu::fmt(mm.ssim),
                             csvu::fmt(mm.ms_ssim)});

            const double ssim_pair = ssim(t.xhat, xhatp, cfg.metrics);
            ssim_pair_sum += ssim_pair;
            recon_pair_csv.row({set.set_id, set.subtype, rec.image_id, csvu::fmt(ssim_pair)});
            if (ssim_pair > ssim(t.x, xp, cfg.metrics)) ++specificity_hits;

            const double hx = healthiness(t.x, anomaly, eval_brain);
            const double hs = healthiness(xp, anomaly, eval_brain);
            const double hr = healthiness(xhatp, anomaly, eval_brain);
            hsum.h_ground_truth.push_back(hx);
            hsum.h_simulated.push_back(hs);
            hsum.h_reconstruction.push_back(hr);
            health_csv.row({set.set_id, set.subtype, csvu::fmt(set.severity), rec.image_id,
                            csvu::fmt(hx), csvu::fmt(hs), csvu::fmt(hr)});

            in_up.push_back(regional_uptake(xp, eval_atlas, rec.image_id));
            rec_up.push_back(regional_uptake(xhatp, eval_atlas, rec.image_id));
        }

        summary.healthiness[set.set_id] = std::move(hsum);
        summary.subtype_ssim_recon[set.set_id] =
            ssim_pair_sum / static_cast<double>(set.records.size());
        summary.subject_specificity[set.set_id] =
            static_cast<double>(specificity_hits) / static_cast<double>(set.records.size());
        summary.set_mask_regions[set.set_id] = eval_atlas.subtype_regions.at(set.subtype);

        // per-image regional uptake tables for the plot layer
        for (const char* kind : {"input", "recon"}) {
            csvu::Writer w(out_dir / "regional" /
                               ("uptake_" + set.set_id + "_" + kind + ".csv"),
                           [&] {
                               std::vector<std::string> h{"image_id"};
                               for (int id = 1; id <= eval_atlas.merged_count(); ++id)
                                   h.push_back(eval_atlas.merged_names.at(id));
                               return h;
                           }());
            const auto& ups = std::string(kind) == "input" ? in_up : rec_up;
            for (const auto& u : ups) {
                std::vector<std::string> cells{u.image_id};
                for (int id = 1; id <= eval_atlas.merged_count(); ++id)
                    cells.push_back(csvu::fmt(u.mean_uptake.at(id)));
                w.row(cells);
            }
        }

        const auto rows =
            regional_anomaly_report(in_up, rec_up, eval_atlas, cfg.regional_test, cfg.alpha);
        summary.regional[set.set_id] = rows;
        {
            csvu::Writer w(out_dir / "regional" / ("report_" + set.set_id + ".csv"),
                           {"region_id", "region_name", "mean_input", "mean_recon", "statistic",
                            "p", "p_adjusted", "significant"});
            for (const auto& row : rows)
                w.row({csvu::fmt(row.region_id), row.region_name, csvu::fmt(row.mean_input),
                       csvu::fmt(row.mean_recon), csvu::fmt(row.statistic), csvu::fmt(row.p),
                       csvu::fmt(row.p_adjusted), bool_cell(row.significant)});
        }
        {
            // reconstruction vs the CN reference cohort (Fig. 8 analog)
            const auto ref_rows =
                regional_anomaly_report(rec_up, cn_uptakes, eval_atlas, cfg.regional_test,
                                        cfg.alpha);
            csvu::Writer w(out_dir / "regional" / ("report_cnref_" + set.set_id + ".csv"),
                           {"region_id", "region_name", "mean_input", "mean_recon", "statistic",
                            "p", "p_adjusted", "significant"});
            for (const auto& row : ref_rows)
                w.row({csvu::fmt(row.region_id), row.region_name, csvu::fmt(row.mean_input),
                       csvu::fmt(row.mean_recon), csvu::fmt(row.statistic), csvu::fmt(row.p),
                       csvu::fmt(row.p_adjusted), bool_cell(row.significant)});
        }

        if (model->has_latent()) {
            std::vector<Eigen::VectorXd> lat(set.records.size());
            for (std::size_t i = 0; i < set.records.size(); ++i)
                lat[i] = model->latent_mean(ev.sim_inputs[i]);
            sim_latents[set.set_id] = std::move(lat);
        }
    }
    section_done("fig4", {"fig4_mse.csv", "fig4_tests.csv"});
    section_done("subtypes", {"subtype_metrics.csv", "subtype_ssim_recon.csv"});
    section_done("healthiness", {"healthiness.csv"});
    section_done("regional", {"regional/"});

    // Welch t-tests of MSE(x, xhat') against the healthy-input reconstruction
    // error, Bonferroni-corrected across the AD severity grid
    {
        std::vector<const SimulatedSet*> ad_sets;
        for (const auto& set : sets)
            if (set.subtype == "AD") ad_sets.push_back(&set);
        csvu::Writer w(out_dir / "fig4_tests.csv",
                       {"set_id", "severity", "statistic", "df", "p", "p_adjusted",
                        "significant", "n1", "n2"});
        for (const SimulatedSet* set : ad_sets) {
            TestResult t = welch_t_test(summary.mse_gt_recon.at(set->set_id),
                                        summary.healthy_mse);
            t.p_adjusted = bonferroni(t.p_value, static_cast<int>(ad_sets.size()));
            summary.fig4_tests[set->set_id] = t;
            w.row({set->set_id, csvu::fmt(set->severity), csvu::fmt(t.statistic),
                   csvu::fmt(t.df), csvu::fmt(t.p_value), csvu::fmt(t.p_adjusted),
                   bool_cell(t.p_adjusted < cfg.alpha), csvu::fmt(t.n1), csvu::fmt(t.n2)});
        }
    }

    // ---- latent-space analyses ---------------------------------------------------
    if (!model->has_latent()) {
        section_skipped("latent", "identity model has no latent space");
    } else {
        fs::create_directories(out_dir / "latent");
        std::vector<std::string> latent_artifacts;

        // PCA fitted on the selected fold's training latents
        const CohortManifest& train_m = split.train_folds.at(summary.selected_fold);
        std::vector<Eigen::VectorXd> train_latents(train_m.records.size());
        parallel_for(train_m.records.size(), threads, [&](std::size_t i) {
            train_latents[i] = model->latent_mean(load_eval(train_m, train_m.records[i]));
        });
        const PcaModel pca = pca_fit(train_latents, cfg.latent.pca_components);

        {
            json scatter = json::array();
            auto add_point = [&](const std::string& id, const std::string& group,
                                 const Eigen::VectorXd& latent) {
                const Eigen::VectorXd p = pca_project(pca, latent);
                json pt;
                pt["image_id"] = id;
                pt["group"] = group;
                pt["pc1"] = p[0];
                pt["pc2"] = p.size() > 1 ? p[1] : 0.0;
                scatter.push_back(pt);
            };
            for (std::size_t i = 0; i < train_m.records.size(); ++i)
                add_point(train_m.records[i].subject_id + "_" + train_m.records[i].session_id,
                          "train", train_latents[i]);
            std::vector<Eigen::VectorXd> test_latents(test_images.size());
            parallel_for(test_images.size(), threads, [&](std::size_t i) {
                test_latents[i] = model->latent_mean(test_images[i].x);
            });
            for (std::size_t i = 0; i < test_images.size(); ++i)
                add_point(test_images[i].image_id, "test_cn", test_latents[i]);
            for (const auto& set : sets)
                for (std::size_t i = 0; i < set.records.size(); ++i)
                    add_point(set.records[i].image_id, "sim_" + set.set_id,
                              sim_latents.at(set.set_id)[i]);
            std::ofstream f(out_dir / "latent" / "pca_scatter.json");
            f << scatter.dump(2) << "\n";
            latent_artifacts.push_back("latent/pca_scatter.json");

            // severity ordering along the projected trajectory (Fig. 9d analog)
            std::vector<const SimulatedSet*> ad_sets;
            for (const auto& set : sets)
                if (set.subtype == "AD") ad_sets.push_back(&set);
            std::sort(ad_sets.begin(), ad_sets.end(),
                      [](const SimulatedSet* a, const SimulatedSet* b) {
                          return a->severity < b->severity;
                      });
            csvu::Writer w(out_dir / "latent" / "severity_ordering.csv",
                           {"image_id", "spearman_rank_corr"});
            for (std::size_t i = 0; i < test_images.size(); ++i) {
                std::vector<Eigen::Vector2d> pts;
                std::vector<double> sevs;
                const Eigen::VectorXd p0 = pca_project(pca, test_latents[i]);
                pts.emplace_back(p0[0], p0.size() > 1 ? p0[1] : 0.0);
                sevs.push_back(0.0);
                for (const SimulatedSet* set : ad_sets) {
                    const Eigen::VectorXd p =
                        pca_project(pca, sim_latents.at(set->set_id)[i]);
                    pts.emplace_back(p[0], p.size() > 1 ? p[1] : 0.0);
                    sevs.push_back(set->severity);
                }
                const double rho = std::abs(spearman(sevs, principal_positions(pts)));
                summary.severity_rank_corr.push_back(rho);
                w.row({test_images[i].image_id, csvu::fmt(rho)});
            }
            latent_artifacts.push_back("latent/severity_ordering.csv");
        }

        // intra/inter subject distances on a multi-session cohort
        if (cfg.phantom) {
            PhantomParams mp = *cfg.phantom;
            mp.sessions_per_subject = cfg.latent.multisession_count;
            mp.n_subjects = std::min(cfg.latent.multisession_subjects, mp.n_subjects);
            const CohortManifest multi = generate_cohort(mp, out_dir / "latent_cohort");
            std::vector<Eigen::VectorXd> lat(multi.records.size());
            parallel_for(multi.records.size(), threads, [&](std::size_t i) {
                lat[i] = model->latent_mean(load_eval(multi, multi.records[i]));
            });
            std::vector<std::string> subjects;
            for (const auto& r : multi.records) subjects.push_back(r.subject_id);
            summary.intra_inter =
                intra_inter_study(lat, subjects, cfg.latent.minkowski_p, 5);
            json ii;
            ii["intra"] = summary.intra_inter.intra;
            ii["inter"] = summary.intra_inter.inter;
            ii["mann_whitney_u"] = summary.intra_inter.test.statistic;
            ii["p_value"] = summary.intra_inter.test.p_value;
            ii["degenerate"] = summary.intra_inter.degenerate;
            std::ofstream f(out_dir / "latent" / "intra_inter.json");
            f << ii.dump(2) << "\n";
            latent_artifacts.push_back("latent/intra_inter.json");
        } else {
            section_skipped("latent_intra_inter",
                            "no phantom parameters to build a multi-session cohort");
        }

        // neighbor curves + linear mixed-effects models on the CN test set
        {
            std::vector<Eigen::VectorXd> test_latents(test_images.size());
            std::vector<const Volume*> vols(test_images.size());
            std::vector<std::string> subjects(test_images.size()), ids(test_images.size());
            for (std::size_t i = 0; i < test_images.size(); ++i) {
                test_latents[i] = model->latent_mean(test_images[i].x);
                vols[i] = &test_images[i].x;
                subjects[i] = test_images[i].subject_id;
                ids[i] = test_images[i].image_id;
            }
            const auto curves = neighbor_image_distance_curves(
                test_latents, subjects, vols, ids, cfg.latent.neighbor_ranks,
                cfg.latent.minkowski_p, cfg.metrics);
            csvu::Writer w(out_dir / "latent" / "neighbor_curves.csv",
                           {"image_id", "rank", "latent_distance", "image_mse", "image_ssim"});
            std::vector<std::vector<std::pair<double, double>>> mse_groups, ssim_groups;
            for (const auto& c : curves) {
                std::vector<std::pair<double, double>> gm, gs;
                for (const auto& pt : c.points) {
                    w.row({c.image_id, csvu::fmt(pt.rank), csvu::fmt(pt.latent_distance),
                           csvu::fmt(pt.image_mse), csvu::fmt(pt.image_ssim)});
                    gm.emplace_back(pt.latent_distance, pt.image_mse);
                    gs.emplace_back(pt.latent_distance, pt.image_ssim);
                }
                mse_groups.push_back(std::move(gm));
                ssim_groups.push_back(std::move(gs));
            }
            summary.lmm_mse = lmm_fit(mse_groups);
            summary.lmm_ssim = lmm_fit(ssim_groups);
            csvu::Writer lw(out_dir / "latent" / "lmm_report.csv",
                            {"target", "term", "coef", "std_err", "z", "p_value", "ci_low",
                             "ci_high", "converged"});
            auto emit = [&](const std::string& target, const LmmFit& fit) {
                lw.row({target, "intercept", csvu::fmt(fit.beta0), csvu::fmt(fit.se0),
                        csvu::fmt(fit.z0), csvu::fmt(fit.p0), csvu::fmt(fit.ci0_lo),
                        csvu::fmt(fit.ci0_hi), bool_cell(fit.converged)});
                lw.row({target, "latent", csvu::fmt(fit.beta1), csvu::fmt(fit.se1),
                        csvu::fmt(fit.z1), csvu::fmt(fit.p1), csvu::fmt(fit.ci1_lo),
                        csvu::fmt(fit.ci1_hi), bool_cell(fit.converged)});
            };
            emit("mse", summary.lmm_mse);
            emit("ssim", summary.lmm_ssim);
            latent_artifacts.push_back("latent/neighbor_curves.csv");
            latent_artifacts.push_back("latent/lmm_report.csv");
        }
        summary.has_latent = true;
        section_done("latent", latent_artifacts);
    }

    index["sections"] = sections;
    {
        std::ofstream f(out_dir / "manifest_index.json");
        f << index.dump(2) << "\n";
    }
    return summary;
}

} // namespace phrec
