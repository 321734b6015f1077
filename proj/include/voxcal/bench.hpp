#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxcal/calibration.hpp"
#include "voxcal/error.hpp"
#include "voxcal/format.hpp"
#include "voxcal/manifest.hpp"
#include "voxcal/metrics.hpp"
#include "voxcal/rng.hpp"

namespace voxcal {

// Case-level bootstrap: resample indices with replacement, return the
// grand mean of the resample means and a percentile interval computed
// with linear-interpolation quantiles.
[[nodiscard]] inline BootstrapEstimate bootstrap_ci(std::span<const double> values, int resamples,
                                                    std::uint64_t seed, double level = 0.95) {
    if (values.empty()) throw Error(Errc::empty_input, "bootstrap needs at least one value");
    if (resamples < 1) throw Error(Errc::invalid_argument, "resamples must be >= 1");
    if (!(level > 0.0 && level < 1.0))
        throw Error(Errc::invalid_argument, "level must lie in (0,1)");

    const std::size_t n = values.size();
    rng::Engine eng(rng::splitmix64(seed));
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (auto& m : means) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += values[rng::bounded(eng, n)];
        m = sum / static_cast<double>(n);
    }

    double grand = 0.0;
    for (double m : means) grand += m;
    grand /= static_cast<double>(means.size());

    std::sort(means.begin(), means.end());
    auto quantile = [&](double q) {
        double h = q * static_cast<double>(means.size() - 1);
        auto lo = static_cast<std::size_t>(h);
        if (lo + 1 >= means.size()) return means.back();
        double frac = h - static_cast<double>(lo);
        return means[lo] + frac * (means[lo + 1] - means[lo]);
    };
    double alpha = (1.0 - level) / 2.0;
    return {grand, quantile(alpha), quantile(1.0 - alpha)};
}

struct BenchConfig {
    std::filesystem::path manifest_path;
    std::vector<TargetSpec> targets; // empty = default protocol set
    int bootstrap_resamples = 5000;
    std::uint64_t bootstrap_seed = 0;
    double ci_level = 0.95;
    std::vector<double> tdsc_thresholds = default_tdsc_thresholds();
    int ece_bins = 50;
    int train_bins = 250;
    bool with_tdsc = true;
    bool with_ece = true;
    bool with_crps = true;
    bool clamp_on_read = false;

    [[nodiscard]] std::vector<TargetSpec> effective_targets() const {
        if (!targets.empty()) return targets;
        return {TargetSpec{TargetKind::none, 0, train_bins},
                TargetSpec{TargetKind::single_rater, 0, train_bins},
                TargetSpec{TargetKind::hard_label, 0, train_bins},
                TargetSpec{TargetKind::mhr, 0, train_bins}};
    }

    [[nodiscard]] std::vector<std::string> enabled_metrics() const {
        std::vector<std::string> out;
        if (with_tdsc) out.push_back("tdsc");
        if (with_ece) out.push_back("ece");
        if (with_crps) out.push_back("crps");
        return out;
    }
};

struct TargetResult {
    std::string target;
    MetricsReport report;
    ReliabilityCurve curve;
};

struct BenchResult {
    std::vector<TargetResult> per_target;
    // metric -> target names ordered best to worst.
    std::map<std::string, std::vector<std::string>> ranking;
    nlohmann::json run_meta;
    double wall_seconds = 0.0; // reported on stderr only, never serialized

    [[nodiscard]] const TargetResult& target(const std::string& name) const {
        for (const auto& t : per_target)
            if (t.target == name) return t;
        throw Error(Errc::invalid_argument, "no bench result for target " + name);
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json targets = nlohmann::json::array();
        for (const auto& t : per_target)
            targets.push_back(nlohmann::json{{"target", t.target}, {"metrics", t.report.to_json()}});
        return nlohmann::json{
            {"targets", std::move(targets)}, {"ranking", ranking}, {"run", run_meta}};
    }

    // One row per (target, metric): target,metric,mean,ci_lo,ci_hi.
    [[nodiscard]] std::string table_csv() const {
        std::string out = "target,metric,mean,ci_lo,ci_hi\n";
        for (const auto& t : per_target) {
            for (const auto& [name, est] : t.report.aggregate) {
                out += t.target + ',' + name + ',' + format_double(est.mean) + ',' +
                       format_double(est.lo) + ',' + format_double(est.hi) + '\n';
            }
        }
        return out;
    }
};

namespace detail {

struct BenchCase {
    std::string case_id;
    Volume pooled_prediction;
    std::vector<Volume> raters;
    Volume mhr;
};

inline std::vector<BenchCase> load_bench_cases(const Manifest& manifest, Split split,
                                               bool clamp) {
    auto records = manifest.split_cases(split);
    std::vector<BenchCase> cases(records.size());
    par::for_each_index(records.size(), [&](std::size_t i) {
        ReadOptions opts;
        opts.clamp = clamp;
        LoadedCase lc = load_case(manifest, *records[i], opts);
        BenchCase bc;
        bc.case_id = records[i]->case_id;
        bc.pooled_prediction = pool_ensemble(lc.predictions);
        bc.raters = std::move(lc.raters);
        if (lc.has_mask()) {
            auto mask = lc.mask.labels();
            bc.pooled_prediction = apply_roi_mask(bc.pooled_prediction, mask);
            for (auto& r : bc.raters) r = apply_roi_mask(r, mask);
        }
        bc.mhr = mean_human_response(bc.raters);
        cases[i] = std::move(bc);
    });
    return cases;
}

} // namespace detail

// Table-2-style protocol: fit every target on the calibration split,
// apply to the test split, aggregate per-case metrics with a case-level
// bootstrap, and rank targets per metric.
[[nodiscard]] inline BenchResult run_bench(const BenchConfig& cfg) {
    auto started = std::chrono::steady_clock::now();
    Manifest manifest = load_manifest(cfg.manifest_path);

    auto calib = detail::load_bench_cases(manifest, Split::calibration, cfg.clamp_on_read);
    auto test = detail::load_bench_cases(manifest, Split::test, cfg.clamp_on_read);
    if (calib.empty()) throw Error(Errc::empty_split, "manifest has no calibration cases");
    if (test.empty()) throw Error(Errc::empty_split, "manifest has no test cases");

    std::vector<FitCase> fit_cases(calib.size());
    for (std::size_t i = 0; i < calib.size(); ++i) {
        fit_cases[i].prediction = calib[i].pooled_prediction.probabilities();
        for (const auto& r : calib[i].raters) fit_cases[i].raters.push_back(r.labels());
    }

    BenchResult result;
    auto targets = cfg.effective_targets();
    for (const auto& spec : targets) {
        TargetSpec effective = spec;
        effective.train_bins = cfg.train_bins;
        CalibratorBundle bundle = fit(fit_cases, effective);

        TargetResult tr;
        tr.target = effective.name();
        std::vector<Volume> calibrated(test.size());
        par::for_each_index(test.size(), [&](std::size_t i) {
            calibrated[i] = apply(bundle, test[i].pooled_prediction);
        });

        std::vector<CaseMetrics> metrics(test.size());
        par::for_each_index(test.size(), [&](std::size_t i) {
            CaseMetrics m;
            if (cfg.with_tdsc) m.tdsc = tdsc(calibrated[i], test[i].mhr, cfg.tdsc_thresholds);
            if (cfg.with_ece) m.ece = ece_per_rater(calibrated[i], test[i].raters, cfg.ece_bins);
            if (cfg.with_crps) m.crps = crps_case(calibrated[i], test[i].raters);
            m.soft_volume = soft_volume(calibrated[i]);
            for (const auto& r : test[i].raters) m.rater_volumes.push_back(binary_volume(r));
            metrics[i] = std::move(m);
        });
        for (std::size_t i = 0; i < test.size(); ++i)
            tr.report.per_case.emplace_back(test[i].case_id, std::move(metrics[i]));

        for (const auto& name : cfg.enabled_metrics()) {
            auto values = tr.report.metric_values(name);
            tr.report.aggregate[name] =
                bootstrap_ci(values, cfg.bootstrap_resamples, cfg.bootstrap_seed, cfg.ci_level);
        }

        std::vector<CasePrediction> curve_cases(test.size());
        for (std::size_t i = 0; i < test.size(); ++i)
            curve_cases[i] = {&calibrated[i], test[i].raters};
        tr.curve = reliability(curve_cases, cfg.ece_bins);

        result.per_target.push_back(std::move(tr));
    }

    for (const auto& name : cfg.enabled_metrics()) {
        const bool higher_better = name == "tdsc";
        std::vector<std::pair<double, std::string>> scored;
        for (const auto& t : result.per_target)
            scored.emplace_back(t.report.aggregate.at(name).mean, t.target);
        std::stable_sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
            return higher_better ? a.first > b.first : a.first < b.first;
        });
        auto& order = result.ranking[name];
        for (const auto& [score, target] : scored) order.push_back(target);
    }

    result.run_meta = nlohmann::json{{"manifest", cfg.manifest_path.string()},
                                     {"bootstrap_resamples", cfg.bootstrap_resamples},
                                     {"bootstrap_seed", cfg.bootstrap_seed},
                                     {"ci_level", cfg.ci_level},
                                     {"tdsc_thresholds", cfg.tdsc_thresholds},
                                     {"ece_bins", cfg.ece_bins},
                                     {"train_bins", cfg.train_bins},
                                     {"calibration_cases", calib.size()},
                                     {"test_cases", test.size()}};
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

// Writes bench_result.json, bench_table.csv, and one reliability CSV per
// target. Output bytes depend only on configuration and seeds.
inline void write_bench_outputs(const BenchResult& result, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    auto write_text = [&](const std::filesystem::path& p, const std::string& text) {
        std::ofstream out(p, std::ios::trunc | std::ios::binary);
        if (!out) throw Error(Errc::io_failure, "cannot write " + p.string());
        out << text;
        if (!out) throw Error(Errc::io_failure, "short write to " + p.string());
    };
    write_text(out_dir / "bench_result.json", result.to_json().dump(2) + "\n");
    write_text(out_dir / "bench_table.csv", result.table_csv());
    for (const auto& t : result.per_target)
        write_text(out_dir / ("reliability_" + t.target + ".csv"), t.curve.to_csv());
}

} // namespace voxcal
