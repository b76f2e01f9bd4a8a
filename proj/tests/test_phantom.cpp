#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "phrec/errors.hpp"
#include "phrec/phantom.hpp"

#include <map>
#include <set>

using namespace phrec;
using test_helpers::TmpDir;

namespace {

double mse_between(const Volume& a, const Volume& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

PhantomParams small_params() {
    PhantomParams p;
    p.dims = {24, 24, 24};
    p.spacing_mm = {4.0, 4.0, 4.0};
    p.global_seed = 77;
    p.n_subjects = 6;
    p.sessions_per_subject = 3;
    return p;
}

} // namespace

TEST_CASE("synthetic atlas is deterministic and partitions the brain") {
    Atlas a = synthetic_atlas({32, 32, 32}, {4, 4, 4}, 23);
    Atlas b = synthetic_atlas({32, 32, 32}, {4, 4, 4}, 23);
    CHECK(a.labels.data == b.labels.data);
    CHECK(a.merged_count() == 23);

    // union of all region masks equals the brain mask
    Mask brain = a.brain_mask();
    std::vector<std::uint8_t> covered(brain.data.size(), 0);
    for (int id = 1; id <= a.merged_count(); ++id) {
        Mask r = a.region_mask(id);
        for (std::size_t i = 0; i < r.data.size(); ++i) {
            CHECK(!(covered[i] && r.data[i])); // disjoint
            covered[i] |= r.data[i];
        }
    }
    CHECK(covered == brain.data);
}

TEST_CASE("synthetic atlas regions are nonzero at 64^3 with 23 regions") {
    Atlas a = synthetic_atlas({64, 64, 64}, {2, 2, 2}, 23);
    std::map<int, std::size_t> counts;
    for (std::size_t i = 0; i < a.labels.data.size(); ++i)
        if (a.labels.data[i]) ++counts[a.merged_at(i)];
    REQUIRE(counts.size() == 23);
    for (const auto& [id, c] : counts) {
        CHECK(id >= 1);
        CHECK(id <= 23);
        CHECK(c > 0);
    }
    // the merge is nontrivial: two fine labels per merged region
    CHECK(a.label_table.size() == 46);
}

TEST_CASE("synthetic atlas subtype config") {
    Atlas a = synthetic_atlas({32, 32, 32}, {4, 4, 4}, 23);
    for (const char* st : {"AD", "bvFTD", "PCA", "lvPPA", "nfvPPA", "svPPA"}) {
        REQUIRE(a.subtype_regions.count(st));
        CHECK(!a.subtype_regions.at(st).empty());
        for (int id : a.subtype_regions.at(st)) {
            CHECK(id >= 1);
            CHECK(id <= 23);
        }
    }
    // default config keeps PCA and svPPA disjoint
    std::set<int> pca(a.subtype_regions.at("PCA").begin(), a.subtype_regions.at("PCA").end());
    for (int id : a.subtype_regions.at("svPPA")) CHECK(!pca.count(id));

    CHECK_THROWS_AS(synthetic_atlas({32, 32, 32}, {4, 4, 4}, 5), ValidationError);
    // more sectors than a tiny grid can hold
    CHECK_THROWS_AS(synthetic_atlas({6, 6, 6}, {4, 4, 4}, 64), ValidationError);
}

TEST_CASE("atlas downsample keeps regions alive at evaluation scale") {
    Atlas a = synthetic_atlas({64, 64, 64}, {2, 2, 2}, 23);
    Atlas d1 = atlas_downsample2(a);
    Atlas d2 = atlas_downsample2(d1);
    CHECK(d2.labels.dims == Dims3{16, 16, 16});
    CHECK(d2.merged_count() == 23);
    CHECK(d2.labels.spacing_mm[0] == 8.0);
}

TEST_CASE("atlas save/load round trip") {
    TmpDir tmp("atlas");
    Atlas a = synthetic_atlas({16, 16, 16}, {8, 8, 8}, 8);
    save_atlas(a, tmp.path / "atlas");
    Atlas r = load_atlas(tmp.path / "atlas");
    CHECK(r.labels.data == a.labels.data);
    CHECK(r.label_table == a.label_table);
    CHECK(r.merge_map == a.merge_map);
    CHECK(r.merged_names == a.merged_names);
    CHECK(r.subtype_regions == a.subtype_regions);
}

TEST_CASE("phantom generation is deterministic") {
    PhantomParams p = small_params();
    Volume a = generate_phantom(p, 2, 1);
    Volume b = generate_phantom(p, 2, 1);
    CHECK(a.data == b.data);

    for (double x : a.data) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }

    SUBCASE("zero session noise makes sessions identical") {
        p.session_noise_sigma = 0.0;
        Volume s0 = generate_phantom(p, 3, 0);
        Volume s1 = generate_phantom(p, 3, 1);
        CHECK(s0.data == s1.data);
    }

    SUBCASE("different subjects differ") {
        Volume other = generate_phantom(p, 3, 1);
        CHECK(a.data != other.data);
    }

    CHECK_THROWS_AS(generate_phantom(p, p.n_subjects, 0), ValidationError);
}

TEST_CASE("phantom exterior is exactly zero") {
    PhantomParams p = small_params();
    Atlas atlas = synthetic_atlas(p.dims, p.spacing_mm, p.region_count);
    Mask brain = atlas.brain_mask();
    Volume v = generate_phantom(p, 0, 0);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        if (!brain.data[i]) CHECK(v.data[i] == 0.0);
}

TEST_CASE("intra-subject distance below inter-subject distance") {
    PhantomParams p = small_params();
    p.n_subjects = 12;
    p.sessions_per_subject = 2;
    // triples: (subject s session 0, subject s session 1, subject t session 0)
    Rng rng(123);
    int wins = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        const int s = static_cast<int>(rng.uniform_int(p.n_subjects));
        int o = static_cast<int>(rng.uniform_int(p.n_subjects - 1));
        if (o >= s) ++o;
        const Volume a0 = generate_phantom(p, s, 0);
        const Volume a1 = generate_phantom(p, s, 1);
        const Volume b0 = generate_phantom(p, o, 0);
        if (mse_between(a0, a1) < mse_between(a0, b0)) ++wins;
    }
    CHECK(wins >= 95);
}

TEST_CASE("cohort generation") {
    TmpDir tmp("cohort");
    PhantomParams p = small_params();
    p.n_subjects = 10;
    p.sessions_per_subject = 2;
    CohortManifest m = generate_cohort(p, tmp.path / "c");
    CHECK(m.records.size() == 20);
    std::set<std::string> subjects;
    for (const auto& r : m.records) {
        subjects.insert(r.subject_id);
        CHECK(r.diagnosis == "CN");
        CHECK(std::filesystem::exists(m.resolve(r)));
    }
    CHECK(subjects.size() == 10);

    // regeneration with the same seed is identical, including covariates
    CohortManifest m2 = generate_cohort(p, tmp.path / "c2");
    REQUIRE(m2.records.size() == m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        CHECK(m.records[i].age == m2.records[i].age);
        CHECK(m.records[i].sex == m2.records[i].sex);
    }

    // manifest round trip
    CohortManifest loaded = load_cohort_manifest(tmp.path / "c" / "cohort.jsonl");
    REQUIRE(loaded.records.size() == m.records.size());
    CHECK(loaded.records[3].subject_id == m.records[3].subject_id);
    CHECK(loaded.records[3].age == doctest::Approx(m.records[3].age));
    loaded.validate(true);
}

TEST_CASE("cohort sex ratio is near balanced") {
    TmpDir tmp("sexratio");
    PhantomParams p;
    p.dims = {8, 8, 8};
    p.spacing_mm = {16, 16, 16};
    p.global_seed = 2024;
    p.n_subjects = 100;
    p.sessions_per_subject = 1;
    CohortManifest m = generate_cohort(p, tmp.path / "c");
    int f = 0;
    for (const auto& r : m.records) f += r.sex == "F";
    CHECK(f >= 30);
    CHECK(f <= 70);
}

TEST_CASE("duplicate records rejected") {
    CohortManifest m;
    CohortRecord r{"sub001", "ses00", 70.0, "F", "CN", "x.vol1.json"};
    m.records = {r, r};
    CHECK_THROWS_AS(m.validate(false), ValidationError);
}
