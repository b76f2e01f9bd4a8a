#include "phrec/pipeline.hpp"

#include "csv_util.hpp"
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

void SplitSpec::validate() const {
    if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
        throw ValidationError("test_fraction must be in (0, 1)");
    if (n_folds < 2) throw ValidationError("n_folds must be >= 2");
    for (const auto& s : stratify_on)
        if (s != "sex" && s != "age")
            throw ValidationError("unknown stratification covariate: " + s);
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

struct SubjectInfo {
    std::string id;
    std::string sex;
    double age = 0.0;
    std::vector<std::size_t> record_indices;
};

// quartile bucket edges over the subject age distribution
std::array<double, 3> age_quartiles(std::vector<double> ages) {
    std::sort(ages.begin(), ages.end());
    auto q = [&](double f) {
        const double pos = f * (static_cast<double>(ages.size()) - 1.0);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, ages.size() - 1);
        return ages[lo] + (pos - lo) * (ages[hi] - ages[lo]);
    };
    return {q(0.25), q(0.5), q(0.75)};
}

} // namespace

CohortSplit split_cohort(const CohortManifest& cohort, const SplitSpec& spec) {
    spec.validate();
    cohort.validate(false);
    if (cohort.records.empty()) throw ValidationError("split_cohort: empty cohort");

    std::map<std::string, SubjectInfo> subjects;
    for (std::size_t i = 0; i < cohort.records.size(); ++i) {
        const auto& r = cohort.records[i];
        auto& s = subjects[r.subject_id];
        s.id = r.subject_id;
        s.sex = r.sex;
        s.age = r.age;
        s.record_indices.push_back(i);
    }

    const bool by_sex = std::count(spec.stratify_on.begin(), spec.stratify_on.end(), "sex") > 0;
    const bool by_age = std::count(spec.stratify_on.begin(), spec.stratify_on.end(), "age") > 0;
    std::array<double, 3> q{0, 0, 0};
    if (by_age) {
        std::vector<double> ages;
        for (const auto& [id, s] : subjects) {
            (void)id;
            ages.push_back(s.age);
        }
        q = age_quartiles(std::move(ages));
    }
    auto stratum_key = [&](const SubjectInfo& s) {
        std::string key;
        if (by_sex) key += "sex=" + s.sex + ";";
        if (by_age) {
            const int bucket = s.age < q[0] ? 0 : s.age < q[1] ? 1 : s.age < q[2] ? 2 : 3;
            key += "age_q" + std::to_string(bucket) + ";";
        }
        if (key.empty()) key = "all";
        return key;
    };

    std::map<std::string, std::vector<const SubjectInfo*>> strata;
    for (const auto& [id, s] : subjects) {
        (void)id;
        strata[stratum_key(s)].push_back(&s);
    }

    // deterministic shuffle within each stratum
    for (auto& [key, list] : strata) {
        std::sort(list.begin(), list.end(),
                  [](const SubjectInfo* a, const SubjectInfo* b) { return a->id < b->id; });
        Rng rng(mix_seed(spec.rng_seed, fnv1a(key)));
        rng.shuffle(list);
    }

    // largest-remainder apportionment of the global test count across strata
    const auto n_subjects = subjects.size();
    const long total_test = std::lround(spec.test_fraction * static_cast<double>(n_subjects));
    std::vector<std::pair<std::string, long>> base_counts;
    std::vector<std::pair<double, std::string>> remainders;
    long assigned = 0;
    for (const auto& [key, list] : strata) {
        const double quota = spec.test_fraction * static_cast<double>(list.size());
        const long base = static_cast<long>(quota);
        base_counts.emplace_back(key, base);
        remainders.emplace_back(quota - static_cast<double>(base), key);
        assigned += base;
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::map<std::string, long> test_count;
    for (const auto& [key, base] : base_counts) test_count[key] = base;
    for (std::size_t i = 0; assigned < total_test && i < remainders.size(); ++i) {
        ++test_count[remainders[i].second];
        ++assigned;
    }

    std::set<std::string> test_subjects;
    std::vector<std::set<std::string>> fold_subjects(spec.n_folds);
    for (const auto& [key, list] : strata) {
        const long t = test_count[key];
        if (t >= static_cast<long>(list.size()))
            throw ValidationError("stratum too small to split: " + key);
        for (long i = 0; i < t; ++i) test_subjects.insert(list[i]->id);
        long pos = 0;
        for (std::size_t i = t; i < list.size(); ++i, ++pos)
            fold_subjects[pos % spec.n_folds].insert(list[i]->id);
    }
    for (int f = 0; f < spec.n_folds; ++f)
        if (fold_subjects[f].empty())
            throw ValidationError("not enough subjects to fill " +
                                  std::to_string(spec.n_folds) + " folds");

    auto baseline_session = [&](const SubjectInfo& s) {
        std::string best = cohort.records[s.record_indices[0]].session_id;
        for (std::size_t idx : s.record_indices)
            best = std::min(best, cohort.records[idx].session_id);
        return best;
    };

    auto make_manifest = [&](const std::set<std::string>& ids, bool baseline_only) {
        CohortManifest m;
        m.base_dir = cohort.base_dir;
        for (const auto& r : cohort.records) {
            if (!ids.count(r.subject_id)) continue;
            if (baseline_only && r.session_id != baseline_session(subjects.at(r.subject_id)))
                continue;
            m.records.push_back(r);
        }
        std::sort(m.records.begin(), m.records.end(), [](const auto& a, const auto& b) {
            return std::tie(a.subject_id, a.session_id) < std::tie(b.subject_id, b.session_id);
        });
        return m;
    };

    CohortSplit out;
    out.test = make_manifest(test_subjects, true);
    for (int f = 0; f < spec.n_folds; ++f) {
        std::set<std::string> train_ids;
        for (int g = 0; g < spec.n_folds; ++g)
            if (g != f)
                train_ids.insert(fold_subjects[g].begin(), fold_subjects[g].end());
        out.train_folds.push_back(make_manifest(train_ids, false));
        out.validation_folds.push_back(make_manifest(fold_subjects[f], true));
    }
    return out;
}

QcResult qc_overlap(const Volume& x, const Mask& outside_brain, double threshold) {
    if (x.dims != outside_brain.dims) throw ValidationError("qc_overlap: dim mismatch");
    double outside = 0.0, total = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        total += x.data[i];
        if (outside_brain.data[i]) outside += x.data[i];
    }
    if (total == 0.0) throw ValidationError("qc_overlap: zero total uptake");
    QcResult r;
    r.score = outside / total;
    r.pass = r.score <= threshold;
    return r;
}

void ExperimentConfig::validate() const {
    if (model != "vae" && model != "identity")
        throw ValidationError("model must be vae or identity");
    if (!cohort_manifest.has_value() && !phantom.has_value())
        throw ValidationError("config needs either cohort paths or phantom parameters");
    if (cohort_manifest.has_value() != atlas_stem.has_value())
        throw ValidationError("cohort_manifest and atlas_stem must be given together");
    if (downsample_steps < 0) throw ValidationError("downsample_steps must be >= 0");
    split.validate();
    if (fold_override && (*fold_override < 0 || *fold_override >= split.n_folds))
        throw ValidationError("fold_override outside 0..n_folds-1");
    train.validate();
    if (phantom) phantom->validate();
    if (ad_severities.empty()) throw ValidationError("ad_severities must be nonempty");
    for (double f : ad_severities)
        if (!(f > 0.0) || f > 1.0) throw ValidationError("severity outside (0, 1]");
    if (!(subtype_severity > 0.0) || subtype_severity > 1.0)
        throw ValidationError("subtype_severity outside (0, 1]");
    metrics.validate();
    if (!(qc_threshold > 0.0)) throw ValidationError("qc_threshold must be positive");
    if (latent.pca_components < 1) throw ValidationError("pca_components must be >= 1");
    if (latent.neighbor_ranks.empty()) throw ValidationError("neighbor_ranks must be nonempty");
    if (latent.multisession_count < 2 || latent.multisession_subjects < 2)
        throw ValidationError("multisession study needs >= 2 subjects and sessions");
}

namespace {

json dims_to_json(const Dims3& d) { return json::array({d[0], d[1], d[2]}); }
json spacing_to_json(const Spacing3& s) { return json::array({s[0], s[1], s[2]}); }

Dims3 dims_from_json(const json& j) {
    return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}
Spacing3 spacing_from_json(const json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

} // namespace

ExperimentConfig load_experiment_config(const fs::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open " + json_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("bad config JSON: " + std::string(e.what()));
    }
    ExperimentConfig cfg;
    try {
        cfg.seed = j.value("seed", cfg.seed);
        cfg.model = j.value("model", cfg.model);
        if (j.contains("cohort_manifest"))
            cfg.cohort_manifest = fs::path(j.at("cohort_manifest").get<std::string>());
        if (j.contains("atlas_stem"))
            cfg.atlas_stem = fs::path(j.at("atlas_stem").get<std::string>());
        if (j.contains("phantom")) {
            const json& p = j.at("phantom");
            PhantomParams pp;
            if (p.contains("dims")) pp.dims = dims_from_json(p.at("dims"));
            if (p.contains("spacing_mm")) pp.spacing_mm = spacing_from_json(p.at("spacing_mm"));
            pp.global_seed = p.value("global_seed", cfg.seed);
            pp.n_subjects = p.value("n_subjects", pp.n_subjects);
            pp.sessions_per_subject = p.value("sessions_per_subject", pp.sessions_per_subject);
            pp.subject_variability_sigma =
                p.value("subject_variability_sigma", pp.subject_variability_sigma);
            pp.session_noise_sigma = p.value("session_noise_sigma", pp.session_noise_sigma);
            pp.region_count = p.value("region_count", pp.region_count);
            cfg.phantom = pp;
        }
        cfg.downsample_steps = j.value("downsample_steps", cfg.downsample_steps);
        if (j.contains("split")) {
            const json& s = j.at("split");
            cfg.split.test_fraction = s.value("test_fraction", cfg.split.test_fraction);
            cfg.split.n_folds = s.value("n_folds", cfg.split.n_folds);
            if (s.contains("stratify_on"))
                cfg.split.stratify_on = s.at("stratify_on").get<std::vector<std::string>>();
            cfg.split.rng_seed = s.value("seed", cfg.seed);
        } else {
            cfg.split.rng_seed = cfg.seed;
        }
        if (j.contains("fold_override"))
            cfg.fold_override = j.at("fold_override").get<int>();
        if (j.contains("train")) {
            const json& t = j.at("train");
            if (t.value("preset", "") == "paper") {
                // the reference protocol: 200 epochs, lr 1e-5, batch 8
                cfg.train.epochs = 200;
                cfg.train.learning_rate = 1e-5;
                cfg.train.batch_size = 8;
            }
            cfg.train.epochs = t.value("epochs", cfg.train.epochs);
            cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
            cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
            cfg.train.optimizer = t.value("optimizer", cfg.train.optimizer);
            cfg.train.kl_weight = t.value("kl_weight", cfg.train.kl_weight);
            cfg.train.rng_seed = t.value("rng_seed", cfg.seed);
        } else {
            cfg.train.rng_seed = cfg.seed;
        }
        if (j.contains("arch")) {
            const json& a = j.at("arch");
            cfg.latent_dim = a.value("latent_dim", cfg.latent_dim);
            if (a.contains("encoder_hidden"))
                cfg.encoder_hidden = a.at("encoder_hidden").get<std::vector<int>>();
            if (a.contains("decoder_hidden"))
                cfg.decoder_hidden = a.at("decoder_hidden").get<std::vector<int>>();
        }
        if (j.contains("simulation")) {
            const json& s = j.at("simulation");
            if (s.contains("ad_severities"))
                cfg.ad_severities = s.at("ad_severities").get<std::vector<double>>();
            if (s.contains("subtypes"))
                cfg.subtypes = s.at("subtypes").get<std::vector<std::string>>();
            cfg.subtype_severity = s.value("subtype_severity", cfg.subtype_severity);
            cfg.smoothing_sigma_mm = s.value("smoothing_sigma_mm", cfg.smoothing_sigma_mm);
        }
        if (j.contains("metrics")) {
            const json& m = j.at("metrics");
            cfg.metrics.psnr_max = m.value("psnr_max", cfg.metrics.psnr_max);
            cfg.metrics.ssim_c1 = m.value("ssim_c1", cfg.metrics.ssim_c1);
            cfg.metrics.ssim_c2 = m.value("ssim_c2", cfg.metrics.ssim_c2);
            cfg.metrics.msssim_levels = m.value("msssim_levels", cfg.metrics.msssim_levels);
            if (m.contains("msssim_weights"))
                cfg.metrics.msssim_weights = m.at("msssim_weights").get<std::vector<double>>();
            cfg.metrics.ssim_window = m.value("ssim_window", cfg.metrics.ssim_window);
        }
        cfg.qc_threshold = j.value("qc_threshold", cfg.qc_threshold);
        if (j.contains("regional_test")) {
            const std::string rt = j.at("regional_test").get<std::string>();
            if (rt == "welch_t")
                cfg.regional_test = TestMethod::welch_t;
            else if (rt == "mann_whitney")
                cfg.regional_test = TestMethod::mann_whitney;
            else
                throw ValidationError("unknown regional_test: " + rt);
        }
        cfg.alpha = j.value("alpha", cfg.alpha);
        if (j.contains("latent")) {
            const json& l = j.at("latent");
            cfg.latent.minkowski_p = l.value("minkowski_p", cfg.latent.minkowski_p);
            if (l.contains("neighbor_ranks"))
                cfg.latent.neighbor_ranks = l.at("neighbor_ranks").get<std::vector<int>>();
            cfg.latent.pca_components = l.value("pca_components", cfg.latent.pca_components);
            cfg.latent.multisession_subjects =
                l.value("multisession_subjects", cfg.latent.multisession_subjects);
            cfg.latent.multisession_count =
                l.value("multisession_count", cfg.latent.multisession_count);
        }
    } catch (const json::exception& e) {
        throw ValidationError("bad config field: " + std::string(e.what()));
    }
    cfg.validate();
    return cfg;
}

void save_experiment_config(const ExperimentConfig& cfg, const fs::path& json_path) {
    json j;
    j["seed"] = cfg.seed;
    j["model"] = cfg.model;
    if (cfg.cohort_manifest) j["cohort_manifest"] = cfg.cohort_manifest->string();
    if (cfg.atlas_stem) j["atlas_stem"] = cfg.atlas_stem->string();
    if (cfg.phantom) {
        json p;
        p["dims"] = dims_to_json(cfg.phantom->dims);
        p["spacing_mm"] = spacing_to_json(cfg.phantom->spacing_mm);
        p["global_seed"] = cfg.phantom->global_seed;
        p["n_subjects"] = cfg.phantom->n_subjects;
        p["sessions_per_subject"] = cfg.phantom->sessions_per_subject;
        p["subject_variability_sigma"] = cfg.phantom->subject_variability_sigma;
        p["session_noise_sigma"] = cfg.phantom->session_noise_sigma;
        p["region_count"] = cfg.phantom->region_count;
        j["phantom"] = p;
    }
    j["downsample_steps"] = cfg.downsample_steps;
    if (cfg.fold_override) j["fold_override"] = *cfg.fold_override;
    j["split"] = {{"test_fraction", cfg.split.test_fraction},
                  {"n_folds", cfg.split.n_folds},
                  {"stratify_on", cfg.split.stratify_on},
                  {"seed", cfg.split.rng_seed}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"optimizer", cfg.train.optimizer},
                  {"kl_weight", cfg.train.kl_weight},
                  {"rng_seed", cfg.train.rng_seed}};
    j["arch"] = {{"latent_dim", cfg.latent_dim},
                 {"encoder_hidden", cfg.encoder_hidden},
                 {"decoder_hidden", cfg.decoder_hidden}};
    j["simulation"] = {{"ad_severities", cfg.ad_severities},
                       {"subtypes", cfg.subtypes},
                       {"subtype_severity", cfg.subtype_severity},
                       {"smoothing_sigma_mm", cfg.smoothing_sigma_mm}};
    j["metrics"] = {{"psnr_max", cfg.metrics.psnr_max},
                    {"ssim_c1", cfg.metrics.ssim_c1},
                    {"ssim_c2", cfg.metrics.ssim_c2},
                    {"msssim_levels", cfg.metrics.msssim_levels},
                    {"msssim_weights", cfg.metrics.msssim_weights},
                    {"ssim_window", cfg.metrics.ssim_window}};
    j["qc_threshold"] = cfg.qc_threshold;
    j["regional_test"] = test_method_name(cfg.regional_test);
    j["alpha"] = cfg.alpha;
    j["latent"] = {{"minkowski_p", cfg.latent.minkowski_p},
                   {"neighbor_ranks", cfg.latent.neighbor_ranks},
                   {"pca_components", cfg.latent.pca_components},
                   {"multisession_subjects", cfg.latent.multisession_subjects},
                   {"multisession_count", cfg.latent.multisession_count}};
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + json_path.string());
}

void emit_plot_data(const fs::path& report_dir, const fs::path& plot_dir) {
    std::vector<std::string> missing;
    const fs::path healthiness_csv = report_dir / "healthiness.csv";
    const fs::path fig4_csv = report_dir / "fig4_mse.csv";
    const fs::path cn_csv = report_dir / "recon_metrics_cn.csv";
    const fs::path pca_json = report_dir / "latent" / "pca_scatter.json";
    const fs::path index_json = report_dir / "manifest_index.json";
    for (const auto& p : {healthiness_csv, fig4_csv, cn_csv, index_json})
        if (!fs::exists(p)) missing.push_back(p.filename().string());
    if (!missing.empty()) {
        std::string what = "emit_plot_data: missing report sections:";
        for (const auto& m : missing) what += " " + m;
        throw ValidationError(what);
    }
    fs::create_directories(plot_dir);

    // healthiness violins: per set, three series
    {
        csvu::Table t = csvu::read_table(healthiness_csv);
        const int c_set = t.column("set_id");
        const int c_sub = t.column("subtype");
        const int c_sev = t.column("severity");
        const int c_hx = t.column("h_ground_truth");
        const int c_hs = t.column("h_simulated");
        const int c_hr = t.column("h_reconstruction");
        std::map<std::string, json> sets;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const std::string set = t.rows[r][c_set];
            if (!sets.count(set)) {
                json s;
                s["set_id"] = set;
                s["subtype"] = t.rows[r][c_sub];
                s["severity"] = t.num(r, c_sev);
                s["series"] = {{{"group", "ground_truth"}, {"values", json::array()}},
                               {{"group", "simulated"}, {"values", json::array()}},
                               {{"group", "reconstruction"}, {"values", json::array()}}};
                sets[set] = s;
            }
            sets[set]["series"][0]["values"].push_back(t.num(r, c_hx));
            sets[set]["series"][1]["values"].push_back(t.num(r, c_hs));
            sets[set]["series"][2]["values"].push_back(t.num(r, c_hr));
        }
        json out;
        out["figure"] = "healthiness_violin";
        out["sets"] = json::array();
        for (const auto& [id, s] : sets) {
            (void)id;
            out["sets"].push_back(s);
        }
        std::ofstream f(plot_dir / "healthiness_violin.json");
        f << out.dump(2) << "\n";
    }

    // fig4 MSE distributions normalized by the healthy-reconstruction mean
    {
        csvu::Table cn = csvu::read_table(cn_csv);
        const int c_mse = cn.column("mse");
        double healthy_mean = 0.0;
        for (std::size_t r = 0; r < cn.rows.size(); ++r) healthy_mean += cn.num(r, c_mse);
        healthy_mean /= static_cast<double>(cn.rows.size());

        csvu::Table t = csvu::read_table(fig4_csv);
        const int c_sev = t.column("severity");
        const int c_gt = t.column("mse_gt_recon");
        const int c_sim = t.column("mse_sim_recon");
        std::map<double, std::pair<json, json>> by_sev;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const double sev = t.num(r, c_sev);
            by_sev[sev].first.push_back(t.num(r, c_gt) / healthy_mean);
            by_sev[sev].second.push_back(t.num(r, c_sim) / healthy_mean);
        }
        json out;
        out["figure"] = "mse_vs_severity_violin";
        out["normalized_by"] = "mean MSE of healthy-input reconstructions";
        out["healthy_mean_mse"] = healthy_mean;
        out["severities"] = json::array();
        for (const auto& [sev, series] : by_sev) {
            json s;
            s["severity"] = sev;
            s["series"] = {{{"group", "mse_ground_truth_vs_recon"}, {"values", series.first}},
                           {{"group", "mse_simulated_vs_recon"}, {"values", series.second}}};
            out["severities"].push_back(s);
        }
        std::ofstream f(plot_dir / "mse_vs_severity.json");
        f << out.dump(2) << "\n";
    }

    // PCA scatter passes through when the model has a latent space
    if (fs::exists(pca_json)) {
        fs::copy_file(pca_json, plot_dir / "pca_scatter.json",
                      fs::copy_options::overwrite_existing);
    }

    // regional uptake distributions, when present
    const fs::path regional_dir = report_dir / "regional";
    if (fs::exists(regional_dir)) {
        for (const auto& entry : fs::directory_iterator(regional_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("uptake_", 0) != 0) continue;
            csvu::Table t = csvu::read_table(entry.path());
            json out;
            out["figure"] = "regional_uptake";
            out["source"] = name;
            out["regions"] = json::array();
            for (std::size_t c = 1; c < t.header.size(); ++c) {
                json reg;
                reg["region"] = t.header[c];
                json vals = json::array();
                for (std::size_t r = 0; r < t.rows.size(); ++r)
                    vals.push_back(t.num(r, static_cast<int>(c)));
                reg["values"] = vals;
                out["regions"].push_back(reg);
            }
            std::ofstream f(plot_dir / (entry.path().stem().string() + ".json"));
            f << out.dump(2) << "\n";
        }
    }
}

} // namespace phrec
