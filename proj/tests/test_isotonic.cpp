#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "voxcal/isotonic.hpp"
#include "voxcal/rng.hpp"

#include "test_support.hpp"

using namespace voxcal;

namespace {

// Pooling/KKT structure: nondecreasing, strictly increasing across block
// boundaries, each maximal constant block valued at the weighted mean of
// its targets.
void check_pool_property(std::span<const double> targets, std::span<const double> weights,
                         std::span<const double> fitted) {
    REQUIRE(std::is_sorted(fitted.begin(), fitted.end()));
    std::size_t i = 0;
    while (i < fitted.size()) {
        std::size_t j = i;
        double wsum = 0.0, twsum = 0.0;
        while (j < fitted.size() && fitted[j] == fitted[i]) {
            wsum += weights[j];
            twsum += targets[j] * weights[j];
            ++j;
        }
        REQUIRE(fitted[i] == Catch::Approx(twsum / wsum).margin(1e-10));
        if (j < fitted.size()) REQUIRE(fitted[j] > fitted[i]);
        i = j;
    }
}

} // namespace

TEST_CASE("pava leaves monotone input unchanged") {
    auto fit = pava(std::vector<double>{0.1, 0.5, 0.9}, std::vector<double>{1, 1, 1});
    REQUIRE(fit.block_values == std::vector<double>{0.1, 0.5, 0.9});
    REQUIRE(fit.objective == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("pava pools a single violation to the weighted mean") {
    auto fit = pava(std::vector<double>{0.6, 0.4}, std::vector<double>{1, 1});
    REQUIRE(fit.block_values[0] == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(fit.block_values[1] == Catch::Approx(0.5).margin(1e-15));

    auto weighted = pava(std::vector<double>{0.6, 0.4}, std::vector<double>{3, 1});
    REQUIRE(weighted.block_values[0] == Catch::Approx(0.55).margin(1e-15));
    REQUIRE(weighted.block_values[1] == Catch::Approx(0.55).margin(1e-15));
}

TEST_CASE("pava rejects bad input") {
    try {
        (void)pava(std::vector<double>{}, std::vector<double>{});
        FAIL("expected empty_input");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::empty_input);
    }
    try {
        (void)pava(std::vector<double>{0.5}, std::vector<double>{0.0});
        FAIL("expected nonpositive_weight");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::nonpositive_weight);
    }
}

TEST_CASE("pava matches the brute-force grid minimizer on random instances") {
    rng::Engine eng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        std::size_t m = 1 + rng::bounded(eng, 7);
        std::vector<double> targets(m), weights(m);
        for (std::size_t i = 0; i < m; ++i) {
            // coarse-grid targets keep the DP oracle exact
            targets[i] = static_cast<double>(rng::bounded(eng, 101)) / 100.0;
            weights[i] = 0.25 + static_cast<double>(rng::bounded(eng, 16)) / 4.0;
        }
        auto fit = pava(targets, weights);
        double grid_min = testsup::grid_isotonic_minimum(targets, weights, 0.001);
        REQUIRE(std::abs(fit.objective - grid_min) <= 1e-4);
        check_pool_property(targets, weights, fit.block_values);
    }
}

TEST_CASE("pava is idempotent and scale invariant") {
    rng::Engine eng(99);
    for (int trial = 0; trial < 25; ++trial) {
        std::size_t m = 2 + rng::bounded(eng, 30);
        std::vector<double> targets(m), weights(m);
        for (std::size_t i = 0; i < m; ++i) {
            targets[i] = rng::uniform01(eng);
            weights[i] = 0.1 + rng::uniform01(eng);
        }
        auto fit = pava(targets, weights);
        auto refit = pava(fit.block_values, weights);
        for (std::size_t i = 0; i < m; ++i)
            REQUIRE(refit.block_values[i] == Catch::Approx(fit.block_values[i]).margin(1e-12));

        std::vector<double> scaled(weights);
        for (auto& w : scaled) w *= 37.5;
        auto fit2 = pava(targets, scaled);
        for (std::size_t i = 0; i < m; ++i)
            REQUIRE(fit2.block_values[i] == Catch::Approx(fit.block_values[i]).margin(1e-12));
    }
}

TEST_CASE("single-bin map is constant everywhere") {
    BinStats bins;
    bins.weights = {1.0};
    bins.mean_confidence = {0.4};
    bins.mhr_rate = {0.7};
    bins.counts = {10};
    bins.per_rater_rate = {{0.7}};
    bins.rater_count = 1;
    bins.total_count = 10;
    IsotonicFit fit{{0.7}, 0.0};
    CalibrationMap map = build_map(bins, fit);
    REQUIRE(map.evaluate(0.0) == 0.7);
    REQUIRE(map.evaluate(0.4) == 0.7);
    REQUIRE(map.evaluate(1.0) == 0.7);
}

TEST_CASE("two-breakpoint map interpolates and clamps") {
    CalibrationMap map({0.2, 0.8}, {0.1, 0.7});
    REQUIRE(map.evaluate(0.5) == Catch::Approx(0.4).margin(1e-15));
    REQUIRE(map.evaluate(0.0) == 0.1);
    REQUIRE(map.evaluate(1.0) == 0.7);
}

TEST_CASE("identity map reproduces its argument") {
    auto map = CalibrationMap::identity();
    REQUIRE(map.evaluate(0.37) == Catch::Approx(0.37).margin(1e-15));
    try {
        (void)map.evaluate(1.5);
        FAIL("expected out_of_range");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::out_of_range);
    }
}

TEST_CASE("evaluate is monotone for random maps") {
    rng::Engine eng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t m = 1 + rng::bounded(eng, 12);
        std::vector<double> xs(m), ys(m);
        double x = 0.0, y = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            x += rng::uniform01(eng) * 0.1 + 1e-3;
            y += rng::uniform01(eng) * 0.1;
            xs[i] = std::min(x, 1.0);
            ys[i] = std::min(y, 1.0);
        }
        // keep xs strictly increasing after the clamp at 1.0
        xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
        ys.resize(xs.size());
        CalibrationMap map(xs, ys);
        double prev = map.evaluate(0.0);
        for (int k = 1; k <= 200; ++k) {
            double p = static_cast<double>(k) / 200.0;
            double cur = map.evaluate(p);
            REQUIRE(cur >= prev);
            REQUIRE(cur >= 0.0);
            REQUIRE(cur <= 1.0);
            prev = cur;
        }
    }
}

TEST_CASE("build_map collapses duplicate confidences to the mean value") {
    BinStats bins;
    bins.weights = {0.25, 0.25, 0.5};
    bins.mean_confidence = {0.3, 0.3, 0.9};
    bins.mhr_rate = {0.1, 0.3, 0.8};
    bins.counts = {1, 1, 2};
    bins.per_rater_rate = {{0.1}, {0.3}, {0.8}};
    bins.rater_count = 1;
    bins.total_count = 4;
    IsotonicFit fit{{0.1, 0.3, 0.8}, 0.0};
    CalibrationMap map = build_map(bins, fit);
    REQUIRE(map.breakpoints_x().size() == 2);
    REQUIRE(map.evaluate(0.3) == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("build_map rejects mismatched lengths") {
    BinStats bins;
    bins.weights = {1.0};
    bins.mean_confidence = {0.5};
    bins.mhr_rate = {0.5};
    bins.counts = {1};
    bins.per_rater_rate = {{0.5}};
    bins.rater_count = 1;
    bins.total_count = 1;
    try {
        (void)build_map(bins, IsotonicFit{{0.1, 0.2}, 0.0});
        FAIL("expected length_mismatch");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::length_mismatch);
    }
}

TEST_CASE("calibration map serializes to JSON and back") {
    CalibrationMap map({0.1, 0.6, 0.9}, {0.05, 0.5, 0.95});
    auto j = map.to_json();
    REQUIRE(j.at("extrapolation") == "clamp");
    CalibrationMap back = CalibrationMap::from_json(j);
    for (int k = 0; k <= 100; ++k) {
        double p = static_cast<double>(k) / 100.0;
        REQUIRE(back.evaluate(p) == map.evaluate(p));
    }
}

TEST_CASE("maps preserve the ordering of voxel arrays") {
    rng::Engine eng(31);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t m = 1 + rng::bounded(eng, 8);
        std::vector<double> targets(m), weights(m), confs;
        double c = 0.05;
        for (std::size_t i = 0; i < m; ++i) {
            targets[i] = rng::uniform01(eng);
            weights[i] = 0.5 + rng::uniform01(eng);
            confs.push_back(c);
            c += rng::uniform01(eng) * 0.1 + 0.01;
        }
        BinStats bins;
        bins.weights = weights;
        bins.mean_confidence = confs;
        bins.mhr_rate = targets;
        bins.counts.assign(m, 1);
        bins.per_rater_rate.assign(m, std::vector<double>{0.0});
        bins.rater_count = 1;
        bins.total_count = static_cast<std::int64_t>(m);
        CalibrationMap map = build_map(bins, pava(targets, weights));

        std::vector<double> voxels(200);
        for (auto& v : voxels) v = rng::uniform01(eng);
        std::vector<double> mapped(voxels.size());
        for (std::size_t i = 0; i < voxels.size(); ++i) mapped[i] = map.evaluate(voxels[i]);
        for (std::size_t i = 0; i < voxels.size(); ++i)
            for (std::size_t j = i + 1; j < voxels.size(); ++j)
                if (voxels[i] < voxels[j]) REQUIRE(mapped[i] <= mapped[j]);
    }
}
