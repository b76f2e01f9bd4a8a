#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "phrec/errors.hpp"
#include "phrec/simulate.hpp"

#include <cmath>
#include <set>

using namespace phrec;
using test_helpers::TmpDir;

TEST_CASE("subtype mask is the union of configured regions") {
    Atlas a = synthetic_atlas({24, 24, 24}, {4, 4, 4}, 12);
    a.subtype_regions["custom"] = {3, 7};
    Mask m = build_subtype_mask(a, "custom");
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        const int merged = a.merged_at(i);
        CHECK(m.data[i] == (merged == 3 || merged == 7 ? 1 : 0));
    }
    CHECK_THROWS_WITH_AS(build_subtype_mask(a, "XYZ"), doctest::Contains("unknown subtype"),
                         ValidationError);
}

TEST_CASE("default PCA and svPPA masks are disjoint") {
    Atlas a = synthetic_atlas({32, 32, 32}, {4, 4, 4}, 23);
    Mask pca = build_subtype_mask(a, "PCA");
    Mask svppa = build_subtype_mask(a, "svPPA");
    std::size_t overlap = 0;
    for (std::size_t i = 0; i < pca.data.size(); ++i)
        overlap += pca.data[i] & svppa.data[i];
    CHECK(overlap == 0);
    CHECK(pca.count() > 0);
    CHECK(svppa.count() > 0);
}

TEST_CASE("smooth mask") {
    Mask m({33, 33, 33}, {1, 1, 1}, 0);
    for (int k = 8; k < 25; ++k)
        for (int j = 8; j < 25; ++j)
            for (int i = 8; i < 25; ++i)
                m.data[static_cast<std::size_t>(i) + 33 * (j + 33 * static_cast<std::size_t>(k))] =
                    1;

    SUBCASE("sigma zero keeps the mask") {
        WeightMask w = smooth_mask(m, 0.0);
        for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(w.data[i] == double(m.data[i]));
    }

    SUBCASE("interior saturates, far exterior vanishes (sigma = 2 voxels)") {
        WeightMask w = smooth_mask(m, 2.0);
        auto at = [&](int i, int j, int k) {
            return w.data[static_cast<std::size_t>(i) + 33 * (j + 33 * static_cast<std::size_t>(k))];
        };
        CHECK(at(16, 16, 16) >= 0.999); // >= 4 sigma from every boundary
        CHECK(at(0, 0, 0) <= 1e-3);     // >= 4 sigma away from the cube
        for (double x : w.data) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
        }
    }
}

TEST_CASE("hypometabolism attenuation") {
    const Dims3 dims{10, 10, 10};
    Volume x(dims, {1, 1, 1}, 1.0);
    Mask m = test_helpers::random_mask(dims, 5, 0.4);
    WeightMask w = smooth_mask(m, 0.0); // binary weights

    SUBCASE("binary mask, uniform image") {
        Volume sim = simulate_hypometabolism(x, w, 0.3);
        for (std::size_t i = 0; i < sim.data.size(); ++i)
            CHECK(sim.data[i] == (m.data[i] ? 0.7 : 1.0));
    }

    SUBCASE("continuity near zero severity") {
        Volume sim = simulate_hypometabolism(x, w, 1e-12);
        double max_change = 0.0;
        for (std::size_t i = 0; i < sim.data.size(); ++i)
            max_change = std::max(max_change, std::abs(sim.data[i] - x.data[i]));
        CHECK(max_change <= 1e-12);
    }

    SUBCASE("matches the voxelwise oracle on smoothed weights") {
        Volume r = test_helpers::random_volume(dims, 9);
        WeightMask ws = smooth_mask(m, 1.5);
        Volume sim = simulate_hypometabolism(r, ws, 0.3);
        for (std::size_t i = 0; i < sim.data.size(); ++i)
            CHECK(sim.data[i] == r.data[i] * (1.0 - 0.3 * ws.data[i]));
    }

    SUBCASE("severity domain") {
        CHECK_THROWS_AS(simulate_hypometabolism(x, w, 0.0), ValidationError);
        CHECK_THROWS_AS(simulate_hypometabolism(x, w, 1.5), ValidationError);
        Volume small({4, 4, 4}, {1, 1, 1}, 1.0);
        CHECK_THROWS_AS(simulate_hypometabolism(small, w, 0.3), ValidationError);
    }
}

TEST_CASE("locality, bounds and monotonicity") {
    const Dims3 dims{16, 16, 16};
    Atlas a = synthetic_atlas(dims, {4, 4, 4}, 8);
    Volume x = test_helpers::random_volume(dims, 31);
    WeightMask w = smooth_mask(build_subtype_mask(a, "AD"), 6.0);
    Mask brain = a.brain_mask();

    double prev_mean = 1e300;
    Mask support(dims, {4, 4, 4}, 0);
    for (std::size_t i = 0; i < w.data.size(); ++i) support.data[i] = w.data[i] > 0.0;
    REQUIRE(support.count() > 0);

    for (double f : {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0}) {
        Volume sim = simulate_hypometabolism(x, w, f);
        for (std::size_t i = 0; i < sim.data.size(); ++i) {
            if (w.data[i] == 0.0) CHECK(sim.data[i] == x.data[i]); // bit-exact locality
            CHECK(sim.data[i] >= 0.0);
            CHECK(sim.data[i] <= 1.0);
        }
        const double mean = masked_mean(sim, support);
        CHECK(mean < prev_mean);
        prev_mean = mean;
    }
    (void)brain;
}

TEST_CASE("materialize test sets") {
    TmpDir tmp("simsets");
    PhantomParams p;
    p.dims = {16, 16, 16};
    p.spacing_mm = {8, 8, 8};
    p.global_seed = 2;
    p.n_subjects = 60;
    p.sessions_per_subject = 1;
    CohortManifest cohort = generate_cohort(p, tmp.path / "cohort");
    Atlas atlas = synthetic_atlas(p.dims, p.spacing_mm, p.region_count);

    SUBCASE("7 AD severities + 5 subtypes give 12 sets of 60 images") {
        const std::vector<double> sev{0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 0.70};
        const std::vector<std::string> subtypes{"bvFTD", "PCA", "lvPPA", "nfvPPA", "svPPA"};
        auto sets = materialize_test_sets(cohort, atlas, sev, subtypes, 0.30, 5.0,
                                          tmp.path / "sim");
        CHECK(sets.size() == 12);
        std::size_t total = 0;
        for (const auto& s : sets) {
            CHECK(s.records.size() == 60);
            total += s.records.size();
        }
        CHECK(total == 720);

        // referential integrity: sources and simulated volumes all resolve
        auto loaded = load_simulated_sets(tmp.path / "sim" / "sets.jsonl");
        REQUIRE(loaded.size() == 12);
        for (const auto& s : loaded)
            for (const auto& r : s.records) {
                CHECK(std::filesystem::exists(tmp.path / "sim" /
                                              (r.source_path.substr(0, r.source_path.size()))));
                CHECK(std::filesystem::exists(tmp.path / "sim" / r.simulated_path));
            }
    }

    SUBCASE("single severity, no extra subtypes") {
        auto sets = materialize_test_sets(cohort, atlas, {0.3}, {}, 0.30, 5.0,
                                          tmp.path / "sim1");
        REQUIRE(sets.size() == 1);
        CHECK(sets[0].records.size() == 60);
        CHECK(sets[0].set_id == "AD_0p3");
    }

    SUBCASE("empty severity list rejected") {
        CHECK_THROWS_AS(materialize_test_sets(cohort, atlas, {}, {}, 0.3, 5.0, tmp.path / "x"),
                        ValidationError);
    }
}
