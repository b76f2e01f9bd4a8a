#include "phrec/errors.hpp"
#include "phrec/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace phrec;

namespace {

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

std::vector<std::string> parse_string_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    for (double v : parse_double_list(csv)) out.push_back(static_cast<int>(v));
    return out;
}

Volume load_eval_volume(const fs::path& p, int downsample_steps) {
    Volume v = load_volume(p);
    for (int s = 0; s < downsample_steps; ++s) v = downsample_avg2(v);
    return v;
}

std::string fmtd(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

struct GlobalArgs {
    std::string config;
    std::string out_dir = "phrec_out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

int run_phantom_generate(const GlobalArgs& g, const PhantomParams& params) {
    fs::create_directories(g.out_dir);
    PhantomParams p = params;
    if (g.seed_set) p.global_seed = g.seed;
    CohortManifest m = generate_cohort(p, g.out_dir);
    Atlas atlas = synthetic_atlas(p.dims, p.spacing_mm, p.region_count);
    save_atlas(atlas, fs::path(g.out_dir) / "atlas");
    std::cout << "wrote " << m.records.size() << " volumes, cohort.jsonl and atlas under "
              << g.out_dir << "\n";
    return 0;
}

int run_cohort_split(const GlobalArgs& g, const std::string& manifest, const SplitSpec& spec) {
    CohortManifest cohort = load_cohort_manifest(manifest);
    SplitSpec s = spec;
    if (g.seed_set) s.rng_seed = g.seed;
    CohortSplit split = split_cohort(cohort, s);
    const fs::path out(g.out_dir);
    fs::create_directories(out);

    auto absolute_paths = [&](CohortManifest m) {
        for (auto& r : m.records)
            r.volume_path = fs::relative(cohort.base_dir / r.volume_path, out).string();
        m.base_dir = out;
        return m;
    };
    save_cohort_manifest(absolute_paths(split.test), out / "test.jsonl");
    for (std::size_t f = 0; f < split.train_folds.size(); ++f) {
        save_cohort_manifest(absolute_paths(split.train_folds[f]),
                             out / ("fold_" + std::to_string(f) + "_train.jsonl"));
        save_cohort_manifest(absolute_paths(split.validation_folds[f]),
                             out / ("fold_" + std::to_string(f) + "_val.jsonl"));
    }
    std::cout << "wrote test.jsonl and " << split.train_folds.size() << " fold manifests under "
              << g.out_dir << "\n";
    return 0;
}

int run_qc(const GlobalArgs& g, const std::string& manifest, const std::string& atlas_stem,
           double threshold) {
    CohortManifest cohort = load_cohort_manifest(manifest);
    Atlas atlas = load_atlas(atlas_stem);
    Mask outside = atlas.brain_mask();
    for (auto& b : outside.data) b = !b;
    fs::create_directories(g.out_dir);
    std::ofstream out(fs::path(g.out_dir) / "qc.csv");
    out << "image_id,score,pass\n";
    for (const auto& r : cohort.records) {
        const Volume v = load_volume(cohort.resolve(r));
        const QcResult q = qc_overlap(v, outside, threshold);
        out << r.subject_id << "_" << r.session_id << "," << fmtd(q.score) << ","
            << (q.pass ? "true" : "false") << "\n";
    }
    std::cout << "wrote qc.csv under " << g.out_dir << "\n";
    return 0;
}

int run_simulate(const GlobalArgs& g, const std::string& manifest, const std::string& atlas_stem,
                 const std::string& severities, const std::string& subtypes,
                 double subtype_severity, double sigma) {
    CohortManifest cohort = load_cohort_manifest(manifest);
    Atlas atlas = load_atlas(atlas_stem);
    auto sets = materialize_test_sets(cohort, atlas, parse_double_list(severities),
                                      parse_string_list(subtypes), subtype_severity, sigma,
                                      g.out_dir);
    std::size_t total = 0;
    for (const auto& s : sets) total += s.records.size();
    std::cout << "wrote " << sets.size() << " simulated sets (" << total << " images) under "
              << g.out_dir << "\n";
    return 0;
}

int run_model_train(const GlobalArgs& g, const std::string& train_manifest,
                    const std::string& val_manifest, int downsample_steps,
                    const TrainConfig& tc_in, int latent_dim, const std::string& hidden) {
    CohortManifest train_m = load_cohort_manifest(train_manifest);
    std::vector<Volume> train_imgs, val_imgs;
    for (const auto& r : train_m.records)
        train_imgs.push_back(load_eval_volume(train_m.resolve(r), downsample_steps));
    if (!val_manifest.empty()) {
        CohortManifest val_m = load_cohort_manifest(val_manifest);
        for (const auto& r : val_m.records)
            val_imgs.push_back(load_eval_volume(val_m.resolve(r), downsample_steps));
    }
    if (train_imgs.empty()) throw ValidationError("empty training manifest");

    VaeArchitecture arch;
    arch.input_dims = train_imgs[0].dims;
    arch.input_spacing = train_imgs[0].spacing_mm;
    arch.latent_dim = latent_dim;
    arch.encoder_hidden = parse_int_list(hidden);
    arch.decoder_hidden = arch.encoder_hidden;
    std::reverse(arch.decoder_hidden.begin(), arch.decoder_hidden.end());

    TrainConfig tc = tc_in;
    if (g.seed_set) tc.rng_seed = g.seed;
    std::vector<TrainTraceRow> trace;
    VaeParams params = train_vae(train_imgs, val_imgs, arch, tc, &trace);

    fs::create_directories(g.out_dir);
    save_checkpoint(params, fs::path(g.out_dir) / "checkpoint.vae");
    std::ofstream tr(fs::path(g.out_dir) / "loss_trace.csv");
    tr << "epoch,train_loss,val_loss,mse_term,kl_term\n";
    for (const auto& row : trace)
        tr << row.epoch << "," << fmtd(row.train_loss) << "," << fmtd(row.val_loss) << ","
           << fmtd(row.mse_term) << "," << fmtd(row.kl_term) << "\n";
    std::cout << "wrote checkpoint.vae and loss_trace.csv under " << g.out_dir << "\n";
    return 0;
}

int run_model_reconstruct(const GlobalArgs& g, const std::string& model_kind,
                          const std::string& checkpoint, const std::string& input,
                          const std::string& manifest, int downsample_steps) {
    std::unique_ptr<Reconstructor> model;
    if (model_kind == "identity") {
        model = identity_baseline();
    } else {
        if (checkpoint.empty()) throw ValidationError("--checkpoint required for the vae model");
        model = std::make_unique<VaeModel>(load_checkpoint(checkpoint));
    }
    fs::create_directories(g.out_dir);
    if (!input.empty()) {
        const Volume x = load_eval_volume(input, downsample_steps);
        save_volume(model->reconstruct(x), fs::path(g.out_dir) / "recon");
        std::cout << "wrote recon.vol1 under " << g.out_dir << "\n";
        return 0;
    }
    if (manifest.empty()) throw ValidationError("need --input or --manifest");
    CohortManifest m = load_cohort_manifest(manifest);
    for (const auto& r : m.records) {
        const Volume x = load_eval_volume(m.resolve(r), downsample_steps);
        save_volume(model->reconstruct(x),
                    fs::path(g.out_dir) / (r.subject_id + "_" + r.session_id + "_recon"));
    }
    std::cout << "wrote " << m.records.size() << " reconstructions under " << g.out_dir << "\n";
    return 0;
}

int run_eval_metrics(const std::string& x_path, const std::string& y_path, int msssim_levels,
                     const std::string& anomaly_mask, const std::string& brain_mask) {
    const Volume x = load_volume(x_path);
    const Volume y = load_volume(y_path);
    MetricConfig cfg;
    cfg.msssim_levels = msssim_levels;
    cfg.msssim_weights.assign(msssim_levels, 1.0 / msssim_levels);
    if (msssim_levels == 5)
        cfg.msssim_weights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    const ImageMetrics m = image_metrics(x, y, cfg);
    std::cout << "mse,psnr,ssim,ms_ssim";
    if (!anomaly_mask.empty()) std::cout << ",healthiness";
    std::cout << "\n" << fmtd(m.mse) << "," << fmtd(m.psnr) << "," << fmtd(m.ssim) << ","
              << fmtd(m.ms_ssim);
    if (!anomaly_mask.empty()) {
        if (brain_mask.empty())
            throw ValidationError("--brain-mask required with --anomaly-mask");
        std::cout << "," << fmtd(healthiness(y, load_mask(anomaly_mask), load_mask(brain_mask)));
    }
    std::cout << "\n";
    return 0;
}

int run_eval_regional(const GlobalArgs& g, const std::string& atlas_stem,
                      const std::string& inputs_manifest, const std::string& recon_dir,
                      const std::string& method_name, double alpha, int downsample_steps) {
    Atlas atlas = load_atlas(atlas_stem);
    for (int s = 0; s < downsample_steps; ++s) atlas = atlas_downsample2(atlas);
    CohortManifest inputs = load_cohort_manifest(inputs_manifest);
    const TestMethod method =
        method_name == "welch_t" ? TestMethod::welch_t : TestMethod::mann_whitney;

    std::vector<RegionalUptake> in_up, rec_up;
    for (const auto& r : inputs.records) {
        const std::string id = r.subject_id + "_" + r.session_id;
        const Volume x = load_eval_volume(inputs.resolve(r), downsample_steps);
        const Volume y = load_volume(fs::path(recon_dir) / (id + "_recon"));
        in_up.push_back(regional_uptake(x, atlas, id));
        rec_up.push_back(regional_uptake(y, atlas, id));
    }
    const auto rows = regional_anomaly_report(in_up, rec_up, atlas, method, alpha);
    fs::create_directories(g.out_dir);
    std::ofstream out(fs::path(g.out_dir) / "regional_report.csv");
    out << "region_id,region_name,mean_input,mean_recon,statistic,p,p_adjusted,significant\n";
    for (const auto& row : rows)
        out << row.region_id << "," << row.region_name << "," << fmtd(row.mean_input) << ","
            << fmtd(row.mean_recon) << "," << fmtd(row.statistic) << "," << fmtd(row.p) << ","
            << fmtd(row.p_adjusted) << "," << (row.significant ? "true" : "false") << "\n";
    std::cout << "wrote regional_report.csv under " << g.out_dir << "\n";
    return 0;
}

int run_eval_latent(const GlobalArgs& g, const std::string& checkpoint,
                    const std::string& manifest, int downsample_steps, double p,
                    int components) {
    VaeModel model(load_checkpoint(checkpoint));
    CohortManifest m = load_cohort_manifest(manifest);
    std::vector<Eigen::VectorXd> latents;
    std::vector<std::string> subjects, ids;
    for (const auto& r : m.records) {
        latents.push_back(model.latent_mean(load_eval_volume(m.resolve(r), downsample_steps)));
        subjects.push_back(r.subject_id);
        ids.push_back(r.subject_id + "_" + r.session_id);
    }
    fs::create_directories(g.out_dir);
    {
        std::ofstream out(fs::path(g.out_dir) / "latents.csv");
        out << "image_id,subject_id";
        for (Eigen::Index c = 0; c < latents[0].size(); ++c) out << ",mu_" << c;
        out << "\n";
        for (std::size_t i = 0; i < latents.size(); ++i) {
            out << ids[i] << "," << subjects[i];
            for (Eigen::Index c = 0; c < latents[i].size(); ++c)
                out << "," << fmtd(latents[i][c]);
            out << "\n";
        }
    }
    {
        const PcaModel pca = pca_fit(latents, components);
        json scatter = json::array();
        for (std::size_t i = 0; i < latents.size(); ++i) {
            const Eigen::VectorXd pr = pca_project(pca, latents[i]);
            json pt;
            pt["image_id"] = ids[i];
            pt["group"] = "cohort";
            pt["pc1"] = pr[0];
            pt["pc2"] = pr.size() > 1 ? pr[1] : 0.0;
            scatter.push_back(pt);
        }
        std::ofstream out(fs::path(g.out_dir) / "pca_scatter.json");
        out << scatter.dump(2) << "\n";
    }
    // intra/inter study when the cohort is longitudinal
    std::map<std::string, int> sessions;
    for (const auto& s : subjects) ++sessions[s];
    int multi = 0;
    for (const auto& [s, c] : sessions) {
        (void)s;
        multi += c >= 2;
    }
    if (multi >= 2) {
        const IntraInterResult r = intra_inter_study(latents, subjects, p, 5);
        json ii;
        ii["intra"] = r.intra;
        ii["inter"] = r.inter;
        ii["mann_whitney_u"] = r.test.statistic;
        ii["p_value"] = r.test.p_value;
        ii["degenerate"] = r.degenerate;
        std::ofstream out(fs::path(g.out_dir) / "intra_inter.json");
        out << ii.dump(2) << "\n";
    }
    std::cout << "wrote latent analyses under " << g.out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulation-based evaluation for pseudo-healthy 3D reconstruction models"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config, "JSON experiment config file");
    app.add_option("--out-dir", g.out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", g.seed, "override the RNG seed");
    app.add_option("--threads", g.threads, "worker threads for per-image stages");

    // phantom generate
    auto* phantom = app.add_subcommand("phantom", "synthetic cohort generation");
    auto* ph_gen = phantom->add_subcommand("generate", "generate a phantom cohort and atlas");
    PhantomParams pp;
    std::vector<int> dims{64, 64, 64};
    std::vector<double> spacing{2.0, 2.0, 2.0};
    ph_gen->add_option("--subjects", pp.n_subjects, "number of subjects");
    ph_gen->add_option("--sessions", pp.sessions_per_subject, "sessions per subject");
    ph_gen->add_option("--dims", dims, "grid dims")->expected(3);
    ph_gen->add_option("--spacing", spacing, "voxel spacing in mm")->expected(3);
    ph_gen->add_option("--regions", pp.region_count, "merged atlas regions");
    ph_gen->add_option("--subject-sigma", pp.subject_variability_sigma,
                       "per-subject field amplitude");
    ph_gen->add_option("--session-sigma", pp.session_noise_sigma, "per-session noise amplitude");

    // cohort split
    auto* cohort = app.add_subcommand("cohort", "cohort operations");
    auto* co_split = cohort->add_subcommand("split", "subject-level stratified split");
    std::string manifest_path;
    SplitSpec split_spec;
    std::string stratify = "sex,age";
    co_split->add_option("--manifest", manifest_path, "cohort JSONL manifest")->required();
    co_split->add_option("--test-fraction", split_spec.test_fraction, "test subject fraction");
    co_split->add_option("--folds", split_spec.n_folds, "number of folds");
    co_split->add_option("--stratify", stratify, "comma list of covariates (sex,age)");

    // qc run
    auto* qc = app.add_subcommand("qc", "quality control");
    auto* qc_run = qc->add_subcommand("run", "overlap QC against the outside-brain mask");
    std::string qc_manifest, qc_atlas;
    double qc_threshold = 0.1;
    qc_run->add_option("--manifest", qc_manifest, "cohort JSONL manifest")->required();
    qc_run->add_option("--atlas", qc_atlas, "atlas stem")->required();
    qc_run->add_option("--threshold", qc_threshold, "failure threshold");

    // simulate make-sets
    auto* simulate = app.add_subcommand("simulate", "hypometabolism simulation");
    auto* sim_make = simulate->add_subcommand("make-sets", "materialize simulated test sets");
    std::string sim_manifest, sim_atlas;
    std::string severities = "0.05,0.1,0.15,0.2,0.3,0.5,0.7";
    std::string subtypes = "bvFTD,PCA,lvPPA,nfvPPA,svPPA";
    double subtype_severity = 0.3, sim_sigma = 5.0;
    sim_make->add_option("--manifest", sim_manifest, "test cohort JSONL manifest")->required();
    sim_make->add_option("--atlas", sim_atlas, "atlas stem")->required();
    sim_make->add_option("--severities", severities, "comma list of AD severities");
    sim_make->add_option("--subtypes", subtypes, "comma list of extra subtypes");
    sim_make->add_option("--subtype-severity", subtype_severity, "severity for extra subtypes");
    sim_make->add_option("--sigma", sim_sigma, "mask smoothing sigma in mm");

    // model train / reconstruct
    auto* model = app.add_subcommand("model", "generative model operations");
    auto* mo_train = model->add_subcommand("train", "train the reference VAE");
    std::string train_manifest, val_manifest, hidden = "1024,256";
    TrainConfig tc;
    int latent_dim = 64, train_ds = 2;
    mo_train->add_option("--train-manifest", train_manifest, "training JSONL manifest")
        ->required();
    mo_train->add_option("--val-manifest", val_manifest, "validation JSONL manifest");
    mo_train->add_option("--downsample-steps", train_ds, "2x pooling steps before the model");
    mo_train->add_option("--epochs", tc.epochs, "training epochs");
    mo_train->add_option("--batch-size", tc.batch_size, "batch size");
    mo_train->add_option("--lr", tc.learning_rate, "learning rate");
    mo_train->add_option("--optimizer", tc.optimizer, "adam or sgd");
    mo_train->add_option("--kl-weight", tc.kl_weight, "KL term weight");
    mo_train->add_option("--latent-dim", latent_dim, "latent dimension");
    mo_train->add_option("--hidden", hidden, "comma list of encoder hidden sizes");

    auto* mo_rec = model->add_subcommand("reconstruct", "posterior-mean reconstruction");
    std::string rec_model = "vae", rec_checkpoint, rec_input, rec_manifest;
    int rec_ds = 0;
    mo_rec->add_option("--model", rec_model, "vae or identity");
    mo_rec->add_option("--checkpoint", rec_checkpoint, "VAE checkpoint file");
    mo_rec->add_option("--input", rec_input, "single input volume");
    mo_rec->add_option("--manifest", rec_manifest, "JSONL manifest to reconstruct");
    mo_rec->add_option("--downsample-steps", rec_ds, "2x pooling steps before the model");

    // eval metrics / regional / latent
    auto* eval = app.add_subcommand("eval", "evaluation");
    auto* ev_metrics = eval->add_subcommand("metrics", "reconstruction metrics for a pair");
    std::string ev_x, ev_y, ev_anomaly, ev_brain;
    int ev_levels = 5;
    ev_metrics->add_option("--x", ev_x, "reference volume")->required();
    ev_metrics->add_option("--y", ev_y, "comparison volume")->required();
    ev_metrics->add_option("--msssim-levels", ev_levels, "MS-SSIM scale count");
    ev_metrics->add_option("--anomaly-mask", ev_anomaly, "healthiness anomaly mask");
    ev_metrics->add_option("--brain-mask", ev_brain, "healthiness brain mask");

    auto* ev_regional = eval->add_subcommand("regional", "atlas-region anomaly report");
    std::string reg_atlas, reg_inputs, reg_recon_dir, reg_method = "mann_whitney";
    double reg_alpha = 0.05;
    int reg_ds = 0;
    ev_regional->add_option("--atlas", reg_atlas, "atlas stem")->required();
    ev_regional->add_option("--inputs", reg_inputs, "input cohort JSONL manifest")->required();
    ev_regional->add_option("--recon-dir", reg_recon_dir, "directory of <id>_recon volumes")
        ->required();
    ev_regional->add_option("--method", reg_method, "welch_t or mann_whitney");
    ev_regional->add_option("--alpha", reg_alpha, "significance level");
    ev_regional->add_option("--downsample-steps", reg_ds, "2x pooling steps for inputs/atlas");

    auto* ev_latent = eval->add_subcommand("latent", "latent-space analyses for a cohort");
    std::string lat_checkpoint, lat_manifest;
    int lat_ds = 0, lat_components = 2;
    double lat_p = 10.0;
    ev_latent->add_option("--checkpoint", lat_checkpoint, "VAE checkpoint")->required();
    ev_latent->add_option("--manifest", lat_manifest, "cohort JSONL manifest")->required();
    ev_latent->add_option("--downsample-steps", lat_ds, "2x pooling steps before the model");
    ev_latent->add_option("--minkowski-p", lat_p, "Minkowski order");
    ev_latent->add_option("--components", lat_components, "PCA components");

    // report emit
    auto* report = app.add_subcommand("report", "report post-processing");
    auto* rep_emit = report->add_subcommand("emit", "emit plot-data JSON from a report bundle");
    std::string rep_dir;
    rep_emit->add_option("--report-dir", rep_dir, "run_experiment output directory")->required();

    // experiment run
    auto* experiment = app.add_subcommand("experiment", "end-to-end experiment");
    auto* exp_run = experiment->add_subcommand("run", "run the full evaluation suite");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        if (ph_gen->parsed()) {
            pp.dims = {dims[0], dims[1], dims[2]};
            pp.spacing_mm = {spacing[0], spacing[1], spacing[2]};
            return run_phantom_generate(g, pp);
        }
        if (co_split->parsed()) {
            split_spec.stratify_on = parse_string_list(stratify);
            return run_cohort_split(g, manifest_path, split_spec);
        }
        if (qc_run->parsed()) return run_qc(g, qc_manifest, qc_atlas, qc_threshold);
        if (sim_make->parsed())
            return run_simulate(g, sim_manifest, sim_atlas, severities, subtypes,
                                subtype_severity, sim_sigma);
        if (mo_train->parsed())
            return run_model_train(g, train_manifest, val_manifest, train_ds, tc, latent_dim,
                                   hidden);
        if (mo_rec->parsed())
            return run_model_reconstruct(g, rec_model, rec_checkpoint, rec_input, rec_manifest,
                                         rec_ds);
        if (ev_metrics->parsed())
            return run_eval_metrics(ev_x, ev_y, ev_levels, ev_anomaly, ev_brain);
        if (ev_regional->parsed())
            return run_eval_regional(g, reg_atlas, reg_inputs, reg_recon_dir, reg_method,
                                     reg_alpha, reg_ds);
        if (ev_latent->parsed())
            return run_eval_latent(g, lat_checkpoint, lat_manifest, lat_ds, lat_p,
                                   lat_components);
        if (rep_emit->parsed()) {
            emit_plot_data(rep_dir, g.out_dir);
            std::cout << "wrote plot data under " << g.out_dir << "\n";
            return 0;
        }
        if (exp_run->parsed()) {
            if (g.config.empty()) throw ValidationError("experiment run needs --config");
            ExperimentConfig cfg = load_experiment_config(g.config);
            if (g.seed_set) {
                cfg.seed = g.seed;
                cfg.split.rng_seed = g.seed;
                cfg.train.rng_seed = g.seed;
                if (cfg.phantom) cfg.phantom->global_seed = g.seed;
            }
            run_experiment(cfg, g.out_dir, g.threads);
            std::cout << "report bundle written under " << g.out_dir << "\n";
            return 0;
        }
        std::cerr << "no action selected; see --help\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}
