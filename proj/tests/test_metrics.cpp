#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "metric_oracles.hpp"
#include "phrec/errors.hpp"
#include "phrec/metrics.hpp"
#include "phrec/simulate.hpp"

#include <cmath>

using namespace phrec;

TEST_CASE("mse") {
    Volume x = test_helpers::random_volume({8, 8, 8}, 1);
    CHECK(mse(x, x) == 0.0);

    Volume z({8, 8, 8}, {1, 1, 1}, 0.0);
    Volume p({8, 8, 8}, {1, 1, 1}, 0.1);
    CHECK(mse(z, p) == doctest::Approx(0.01).epsilon(1e-12));

    Volume y = test_helpers::random_volume({8, 8, 8}, 2);
    const double want = metric_oracles::mse_oracle(x, y);
    CHECK(std::abs(mse(x, y) - want) <= 1e-12 * want);
    CHECK(mse(x, y) == mse(y, x));

    Volume wrong({4, 4, 4}, {1, 1, 1}, 0.0);
    CHECK_THROWS_AS(mse(x, wrong), ValidationError);
}

TEST_CASE("psnr") {
    Volume z({4, 4, 4}, {1, 1, 1}, 0.0);
    Volume p({4, 4, 4}, {1, 1, 1}, 0.1);
    CHECK(psnr(z, p, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
    Volume q({4, 4, 4}, {1, 1, 1}, 1.0);
    CHECK(psnr(z, q, 1.0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(std::isinf(psnr(z, z, 1.0)));

    // strictly decreasing in mse
    Volume a({4, 4, 4}, {1, 1, 1}, 0.05);
    CHECK(psnr(z, a, 1.0) > psnr(z, p, 1.0));
}

TEST_CASE("ssim") {
    Volume x = test_helpers::random_volume({10, 9, 8}, 3);
    CHECK(ssim(x, x) == 1.0); // exact

    MetricConfig cfg;
    Volume ca({6, 6, 6}, {1, 1, 1}, 0.4);
    Volume cb({6, 6, 6}, {1, 1, 1}, 0.7);
    const double want_const = (2.0 * 0.4 * 0.7 + cfg.ssim_c1) /
                              (0.4 * 0.4 + 0.7 * 0.7 + cfg.ssim_c1);
    CHECK(ssim(ca, cb) == doctest::Approx(want_const).epsilon(1e-12));

    Volume y = test_helpers::random_volume({10, 9, 8}, 4);
    const double want = metric_oracles::ssim_oracle(x, y, cfg.ssim_c1, cfg.ssim_c2);
    CHECK(ssim(x, y) == doctest::Approx(want).epsilon(1e-12));
    CHECK(ssim(x, y) == ssim(y, x));
}

TEST_CASE("ssim sliding window variant") {
    MetricConfig cfg;
    cfg.ssim_window = 4;
    Volume x = test_helpers::random_volume({8, 8, 8}, 5);
    CHECK(ssim(x, x, cfg) == doctest::Approx(1.0).epsilon(1e-12));
    Volume y = test_helpers::random_volume({8, 8, 8}, 6);
    const double windowed = ssim(x, y, cfg);
    CHECK(std::isfinite(windowed));
    CHECK(windowed != ssim(x, y)); // differs from the global-statistics value
}

TEST_CASE("ms_ssim") {
    MetricConfig cfg;
    Volume x = test_helpers::random_volume({64, 64, 64}, 7);
    CHECK(ms_ssim(x, x, cfg) == 1.0);

    Volume small = test_helpers::random_volume({8, 8, 8}, 8);
    CHECK_THROWS_WITH_AS(ms_ssim(small, small, cfg), doctest::Contains("too small"),
                         ValidationError);

    Volume y = test_helpers::random_volume({64, 64, 64}, 9);
    const double want = metric_oracles::ms_ssim_oracle(x, y, cfg);
    CHECK(ms_ssim(x, y, cfg) == doctest::Approx(want).epsilon(1e-9));
    CHECK(ms_ssim(x, y, cfg) == ms_ssim(y, x, cfg));

    cfg.msssim_levels = 3;
    cfg.msssim_weights = {0.2, 0.3, 0.5};
    Volume a = test_helpers::random_volume({16, 16, 16}, 10);
    Volume b = test_helpers::random_volume({16, 16, 16}, 11);
    CHECK(ms_ssim(a, b, cfg) ==
          doctest::Approx(metric_oracles::ms_ssim_oracle(a, b, cfg)).epsilon(1e-9));

    cfg.msssim_weights = {0.2, 0.3};
    CHECK_THROWS_AS(ms_ssim(a, b, cfg), ValidationError);
}

TEST_CASE("healthiness") {
    const Dims3 dims{12, 12, 12};
    Mask brain(dims, {1, 1, 1}, 0);
    Mask anomaly(dims, {1, 1, 1}, 0);
    for (int k = 2; k < 10; ++k)
        for (int j = 2; j < 10; ++j)
            for (int i = 2; i < 10; ++i)
                brain.data[i + 12 * (j + 12 * std::size_t(k))] = 1;
    for (int k = 3; k < 6; ++k)
        for (int j = 3; j < 6; ++j)
            for (int i = 3; i < 6; ++i)
                anomaly.data[i + 12 * (j + 12 * std::size_t(k))] = 1;

    Volume u(dims, {1, 1, 1}, 0.5);
    CHECK(healthiness(u, anomaly, brain) == doctest::Approx(1.0).epsilon(1e-15));

    SUBCASE("region scaled by 0.7 scores 0.7") {
        Volume x(dims, {1, 1, 1}, 1.0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
            if (anomaly.data[i]) x.data[i] = 0.7;
        CHECK(healthiness(x, anomaly, brain) == doctest::Approx(0.7).epsilon(1e-15));
    }

    SUBCASE("invariant to global intensity scaling") {
        Volume x = test_helpers::random_volume(dims, 12, 0.1, 1.0);
        Volume cx = x;
        for (auto& v : cx.data) v *= 3.7;
        CHECK(healthiness(cx, anomaly, brain) ==
              doctest::Approx(healthiness(x, anomaly, brain)).epsilon(1e-12));
    }

    SUBCASE("hyper-intensity pushes the score above 1") {
        Volume x(dims, {1, 1, 1}, 0.5);
        for (std::size_t i = 0; i < x.data.size(); ++i)
            if (anomaly.data[i]) x.data[i] *= 1.3;
        CHECK(healthiness(x, anomaly, brain) > 1.0);
    }

    SUBCASE("binary-mask attenuation scales healthiness by exactly (1 - f)") {
        Volume x(dims, {1, 1, 1}, 0.8);
        WeightMask w;
        w.dims = dims;
        w.spacing_mm = {1, 1, 1};
        w.data.assign(x.data.size(), 0.0);
        for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] = anomaly.data[i];
        const double h0 = healthiness(x, anomaly, brain);
        for (double f : {0.05, 0.1, 0.2, 0.3, 0.5, 0.7}) {
            Volume sim = simulate_hypometabolism(x, w, f);
            const double h = healthiness(sim, anomaly, brain);
            CHECK(std::abs(h - (1.0 - f) * h0) <= 1e-12 * std::abs(h0));
        }
    }

    SUBCASE("degenerate masks error") {
        Mask empty(dims, {1, 1, 1}, 0);
        CHECK_THROWS_AS(healthiness(u, empty, brain), ValidationError);
        CHECK_THROWS_AS(healthiness(u, brain, brain), ValidationError); // empty complement
        Mask outside(dims, {1, 1, 1}, 0);
        outside.data[0] = 1; // voxel not in the brain
        CHECK_THROWS_AS(healthiness(u, outside, brain), ValidationError);
    }
}

TEST_CASE("image_metrics bundles the four metrics") {
    Volume x = test_helpers::random_volume({32, 32, 32}, 20);
    MetricConfig cfg;
    cfg.msssim_levels = 4;
    cfg.msssim_weights = {0.25, 0.25, 0.25, 0.25};
    ImageMetrics m = image_metrics(x, x, cfg);
    CHECK(m.mse == 0.0);
    CHECK(std::isinf(m.psnr));
    CHECK(m.ssim == 1.0);
    CHECK(m.ms_ssim == 1.0);
}
