// voxcal: probability-map calibration against multi-rater consensus, plus
// the ambiguity-aware evaluation suite and a synthetic benchmark driver.
//
// Subcommands: synth, fit, apply, eval, bench, reliability.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "voxcal/voxcal.hpp"

namespace {

using namespace voxcal;

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };
LogLevel g_log_level = LogLevel::warn;
bool g_json_output = false;

void log_line(LogLevel level, const std::string& msg) {
    if (level > g_log_level) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string file_hash(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "";
    std::ostringstream ss;
    ss << in.rdbuf();
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(ss.str())));
    return buf;
}

void write_text_file(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    if (!out) throw Error(Errc::io_failure, "cannot write " + p.string());
    out << text;
    if (!out) throw Error(Errc::io_failure, "short write to " + p.string());
}

synth::Distortion parse_distortion(const std::string& spec) {
    try {
        return synth::parse_distortion_spec(spec);
    } catch (const Error&) {
        throw CLI::ValidationError("--distortion", "expected identity, power:G, or logistic:A:B");
    }
}

TargetSpec parse_target(const std::string& name, int rater_index, int train_bins) {
    auto kind = parse_target_kind(name);
    if (!kind) throw CLI::ValidationError("--target", "unknown target \"" + name + "\"");
    return TargetSpec{*kind, rater_index, train_bins};
}

// Loads the cases of one split with pooled predictions, ready for fit/eval.
struct SplitData {
    std::vector<std::string> case_ids;
    std::vector<Volume> predictions;
    std::vector<std::vector<Volume>> raters;
};

// Loads one split with pooled predictions; ROI masks, when present,
// restrict both fitting and evaluation to the masked region.
SplitData load_split(const Manifest& manifest, Split split, bool clamp) {
    SplitData data;
    ReadOptions opts;
    std::size_t clamped = 0;
    opts.clamp = clamp;
    opts.clamped_count = &clamped;
    for (const auto* rec : manifest.split_cases(split)) {
        LoadedCase lc = load_case(manifest, *rec, opts);
        data.case_ids.push_back(rec->case_id);
        Volume pooled = pool_ensemble(lc.predictions);
        if (lc.has_mask()) {
            auto mask = lc.mask.labels();
            pooled = apply_roi_mask(pooled, mask);
            for (auto& r : lc.raters) r = apply_roi_mask(r, mask);
        }
        data.predictions.push_back(std::move(pooled));
        data.raters.push_back(std::move(lc.raters));
    }
    if (clamped > 0)
        log_line(LogLevel::warn, std::to_string(clamped) + " probability values clamped into [0,1]");
    return data;
}

int cmd_synth(const std::filesystem::path& out_dir, synth::SynthConfig cfg) {
    cfg.validate();
    auto cases = synth::generate(cfg);
    synth::write_dataset(cfg, cases, out_dir);
    nlohmann::json summary{{"output_dir", out_dir.string()},
                           {"cases", cases.size()},
                           {"calibration_cases", cfg.n_calibration_cases},
                           {"test_cases", cfg.n_test_cases},
                           {"raters", cfg.n_raters},
                           {"seed", cfg.seed}};
    if (g_json_output) {
        std::cout << summary.dump(2) << "\n";
    } else {
        std::cout << "wrote " << cases.size() << " cases (" << cfg.n_calibration_cases
                  << " calibration / " << cfg.n_test_cases << " test) to " << out_dir.string()
                  << "\n";
    }
    return 0;
}

int cmd_fit(const std::filesystem::path& manifest_path, const TargetSpec& spec,
            const std::filesystem::path& out_path, double subsample, std::uint64_t seed,
            bool clamp) {
    Manifest manifest = load_manifest(manifest_path);
    SplitData data = load_split(manifest, Split::calibration, clamp);
    if (data.predictions.empty()) throw Error(Errc::empty_split, "manifest has no calibration cases");

    std::vector<FitCase> cases(data.predictions.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        cases[i].prediction = data.predictions[i].probabilities();
        for (const auto& r : data.raters[i]) cases[i].raters.push_back(r.labels());
    }
    FitOptions opts;
    opts.subsample_fraction = subsample;
    opts.subsample_seed = seed;
    opts.manifest_hash = file_hash(manifest_path);
    CalibratorBundle bundle = fit(cases, spec, opts);
    write_text_file(out_path, bundle.to_json().dump(2) + "\n");

    log_line(LogLevel::info, "fitted " + spec.name() + " calibrator on " +
                                 std::to_string(cases.size()) + " cases");
    if (g_json_output)
        std::cout << nlohmann::json{{"target", spec.name()},
                                    {"maps", bundle.maps.size()},
                                    {"train_bins", spec.train_bins},
                                    {"out", out_path.string()}}
                         .dump(2)
                  << "\n";
    else
        std::cout << "wrote " << spec.name() << " calibrator to " << out_path.string() << "\n";
    return 0;
}

int cmd_apply(const std::filesystem::path& map_path, const std::filesystem::path& in_path,
              const std::filesystem::path& out_path, bool clamp) {
    std::ifstream in(map_path);
    if (!in) throw Error(Errc::io_failure, "cannot open " + map_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, map_path.string() + ": " + e.what());
    }
    CalibratorBundle bundle = CalibratorBundle::from_json(j);
    ReadOptions opts;
    opts.clamp = clamp;
    Volume prediction = read_volume(in_path, opts);
    write_volume(apply(bundle, prediction), out_path);
    if (g_json_output)
        std::cout << nlohmann::json{{"in", in_path.string()}, {"out", out_path.string()}}.dump(2)
                  << "\n";
    else
        std::cout << "wrote calibrated volume to " << out_path.string() << "\n";
    return 0;
}

int cmd_eval(const std::filesystem::path& manifest_path, const std::string& split_name,
             const std::optional<std::filesystem::path>& map_path,
             const std::filesystem::path& out_csv, const std::filesystem::path& out_json,
             std::vector<double> thresholds, int ece_bins, int resamples, std::uint64_t seed,
             bool clamp) {
    Manifest manifest = load_manifest(manifest_path);
    Split split = split_name == "calibration" ? Split::calibration : Split::test;
    SplitData data = load_split(manifest, split, clamp);
    if (data.predictions.empty())
        throw Error(Errc::empty_split, "manifest has no " + split_name + " cases");

    CalibratorBundle bundle; // kind none = identity
    if (map_path) {
        std::ifstream in(*map_path);
        if (!in) throw Error(Errc::io_failure, "cannot open " + map_path->string());
        nlohmann::json j;
        in >> j;
        bundle = CalibratorBundle::from_json(j);
    }
    if (thresholds.empty()) thresholds = default_tdsc_thresholds();

    MetricsReport report;
    for (std::size_t i = 0; i < data.predictions.size(); ++i) {
        Volume calibrated = apply(bundle, data.predictions[i]);
        Volume mhr = mean_human_response(data.raters[i]);
        CaseMetrics m;
        m.tdsc = tdsc(calibrated, mhr, thresholds);
        m.ece = ece_per_rater(calibrated, data.raters[i], ece_bins);
        m.crps = crps_case(calibrated, data.raters[i]);
        m.soft_volume = soft_volume(calibrated);
        for (const auto& r : data.raters[i]) m.rater_volumes.push_back(binary_volume(r));
        report.per_case.emplace_back(data.case_ids[i], std::move(m));
    }
    for (const char* name : {"tdsc", "ece", "crps"})
        report.aggregate[name] = bootstrap_ci(report.metric_values(name), resamples, seed);

    if (!out_csv.empty()) write_text_file(out_csv, report.to_csv());
    if (!out_json.empty()) write_text_file(out_json, report.to_json().dump(2) + "\n");
    if (g_json_output) {
        std::cout << report.to_json().dump(2) << "\n";
    } else {
        std::printf("%-16s %10s %10s %12s\n", "case", "tdsc", "ece", "crps");
        for (const auto& [id, m] : report.per_case)
            std::printf("%-16s %10.4f %10.5f %12.3f\n", id.c_str(), m.tdsc, m.ece, m.crps);
        for (const auto& [name, est] : report.aggregate)
            std::printf("%-10s mean %.5f  ci95 [%.5f, %.5f]\n", name.c_str(), est.mean, est.lo,
                        est.hi);
    }
    return 0;
}

int cmd_bench(BenchConfig cfg, const std::filesystem::path& out_dir) {
    BenchResult result = run_bench(cfg);
    write_bench_outputs(result, out_dir);
    log_line(LogLevel::info,
             "bench finished in " + format_double(result.wall_seconds) + " s");
    if (g_json_output) {
        std::cout << result.to_json().dump(2) << "\n";
    } else {
        std::printf("%-16s %12s %12s %14s\n", "target", "tdsc", "ece", "crps");
        for (const auto& t : result.per_target) {
            auto get = [&](const char* n) {
                auto it = t.report.aggregate.find(n);
                return it == t.report.aggregate.end() ? 0.0 : it->second.mean;
            };
            std::printf("%-16s %12.4f %12.5f %14.3f\n", t.target.c_str(), get("tdsc"), get("ece"),
                        get("crps"));
        }
        std::cout << "wrote bench_result.json and bench_table.csv to " << out_dir.string() << "\n";
    }
    return 0;
}

int cmd_reliability(const std::filesystem::path& manifest_path, const std::string& split_name,
                    const std::optional<std::filesystem::path>& map_path, int bins,
                    const std::filesystem::path& out_csv, bool clamp) {
    Manifest manifest = load_manifest(manifest_path);
    Split split = split_name == "calibration" ? Split::calibration : Split::test;
    SplitData data = load_split(manifest, split, clamp);
    if (data.predictions.empty())
        throw Error(Errc::empty_split, "manifest has no " + split_name + " cases");

    CalibratorBundle bundle;
    if (map_path) {
        std::ifstream in(*map_path);
        if (!in) throw Error(Errc::io_failure, "cannot open " + map_path->string());
        nlohmann::json j;
        in >> j;
        bundle = CalibratorBundle::from_json(j);
    }
    std::vector<Volume> calibrated;
    calibrated.reserve(data.predictions.size());
    for (const auto& p : data.predictions) calibrated.push_back(apply(bundle, p));
    std::vector<CasePrediction> cases(calibrated.size());
    for (std::size_t i = 0; i < calibrated.size(); ++i)
        cases[i] = {&calibrated[i], data.raters[i]};
    ReliabilityCurve curve = reliability(cases, bins);
    write_text_file(out_csv, curve.to_csv());
    if (g_json_output)
        std::cout << nlohmann::json{{"out", out_csv.string()},
                                    {"weighted_gap", curve.weighted_gap()}}
                         .dump(2)
                  << "\n";
    else
        std::cout << "weighted |confidence - MHR| gap: " << format_double(curve.weighted_gap())
                  << "\nwrote curve to " << out_csv.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Voxelwise probability calibration to multi-rater consensus"};
    app.require_subcommand(1);
    app.fallthrough(false);

    std::uint64_t global_seed = 0;
    int threads = 0;
    std::string log_level = "warn";
    app.add_option("--seed", global_seed, "Default seed for seeded subcommands");
    auto* threads_opt =
        app.add_option("--threads", threads, "Worker thread cap (0 = hardware; env VOXCAL_THREADS)");
    app.add_option("--log-level", log_level, "error|warn|info|debug")
        ->check(CLI::IsMember({"error", "warn", "info", "debug"}));
    app.add_flag("--json", g_json_output, "Machine-readable JSON on stdout");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multi-rater dataset");
    std::string synth_out;
    std::vector<std::int64_t> dims{32, 32, 32};
    synth::SynthConfig scfg;
    std::string distortion = "identity";
    std::string rater_model = "bernoulli";
    std::vector<int> lesions{1, 3};
    bool have_synth_seed = false;
    std::uint64_t synth_seed = 0;
    synth_cmd->add_option("--out", synth_out, "Output dataset directory")->required();
    synth_cmd->add_option("--dims", dims, "Grid dims (1 or 3 values)")->expected(1, 3);
    synth_cmd->add_option("--raters", scfg.n_raters, "Rater count N");
    synth_cmd->add_option("--calib-cases", scfg.n_calibration_cases, "Calibration-split cases");
    synth_cmd->add_option("--test-cases", scfg.n_test_cases, "Test-split cases");
    synth_cmd->add_option("--lesions", lesions, "Lesion count range LO HI")->expected(2);
    synth_cmd->add_option("--distortion", distortion, "identity | power:G | logistic:A:B");
    synth_cmd->add_option("--rater-model", rater_model, "bernoulli | jitter:SIGMA");
    synth_cmd->add_option("--bias-fraction", scfg.jitter_bias_fraction,
                          "Share of jitter variance that is per-rater systematic");
    synth_cmd->add_option("--pred-noise", scfg.prediction_noise_sigma,
                          "Gaussian noise sigma added to predictions");
    synth_cmd->add_option("--radius-range", scfg.lesion_radius_range,
                          "Lesion radius range as fractions of min dim")->expected(2);
    synth_cmd->add_option("--softness-range", scfg.lesion_softness_range,
                          "Lesion boundary softness range as fractions of min dim")->expected(2);
    synth_cmd->add_option("--plateau-range", scfg.plateau_level_range,
                          "Annulus plateau level range")->expected(2);
    synth_cmd->add_option("--inner-fraction-range", scfg.inner_radius_fraction_range,
                          "Inner/outer shell radius ratio range")->expected(2);
    synth_cmd->add_option("--plateau-levels", scfg.plateau_levels,
                          "Quantize plateau levels to this many grades (0 = continuous)");
    synth_cmd->add_option("--fp-lesions", scfg.fp_lesion_count_range,
                          "False-positive blob count range LO HI (prediction only)")->expected(2);
    synth_cmd->add_option("--fp-level-range", scfg.fp_level_range,
                          "False-positive blob level range")->expected(2);
    auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed, "Dataset seed");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "Fit a calibration map on the calibration split");
    std::string fit_manifest, fit_target = "mhr", fit_out;
    int fit_rater = 0, fit_bins = 250;
    double fit_subsample = 1.0;
    bool clamp = false;
    std::uint64_t fit_seed = 0;
    bool have_fit_seed = false;
    fit_cmd->add_option("--manifest", fit_manifest, "Dataset manifest JSON")->required();
    fit_cmd->add_option("--target", fit_target, "none | mhr | single_rater | hard_label");
    fit_cmd->add_option("--rater", fit_rater, "Rater index for single_rater");
    fit_cmd->add_option("--bins", fit_bins, "Equal-mass training bins M");
    fit_cmd->add_option("--subsample", fit_subsample, "Voxel subsample fraction in (0,1]");
    auto* fit_seed_opt = fit_cmd->add_option("--seed", fit_seed, "Subsample seed");
    fit_cmd->add_option("--out", fit_out, "Output calibrator JSON")->required();

    // apply
    auto* apply_cmd = app.add_subcommand("apply", "Apply a calibrator to a probability volume");
    std::string apply_map, apply_in, apply_out;
    apply_cmd->add_option("--map", apply_map, "Calibrator JSON from fit")->required();
    apply_cmd->add_option("--in", apply_in, "Input probability volume (.raw)")->required();
    apply_cmd->add_option("--out", apply_out, "Output volume (.raw)")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate metrics on a manifest split");
    std::string eval_manifest, eval_split = "test", eval_map, eval_csv = "metrics.csv",
                eval_json;
    std::vector<double> eval_thresholds;
    int eval_bins = 50, eval_resamples = 5000;
    std::uint64_t eval_seed = 0;
    bool have_eval_seed = false;
    eval_cmd->add_option("--manifest", eval_manifest, "Dataset manifest JSON")->required();
    eval_cmd->add_option("--split", eval_split, "calibration | test")
        ->check(CLI::IsMember({"calibration", "test"}));
    eval_cmd->add_option("--map", eval_map, "Optional calibrator JSON applied before scoring");
    eval_cmd->add_option("--out-csv", eval_csv, "Per-case metrics CSV");
    eval_cmd->add_option("--out-json", eval_json, "Full report JSON");
    eval_cmd->add_option("--tdsc-thresholds", eval_thresholds, "TDSC operating points");
    eval_cmd->add_option("--ece-bins", eval_bins, "Uniform ECE bins");
    eval_cmd->add_option("--resamples", eval_resamples, "Bootstrap resamples");
    auto* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed, "Bootstrap seed");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Fit and compare calibration targets");
    std::string bench_manifest, bench_out = ".";
    std::vector<std::string> bench_targets;
    BenchConfig bcfg;
    std::uint64_t bench_seed = 0;
    bool have_bench_seed = false;
    int bench_rater = 0;
    bench_cmd->add_option("--manifest", bench_manifest, "Dataset manifest JSON")->required();
    bench_cmd->add_option("--out-dir", bench_out, "Output directory");
    bench_cmd->add_option("--targets", bench_targets,
                          "Targets to compare (default: none single_rater hard_label mhr)");
    bench_cmd->add_option("--rater", bench_rater, "Rater index for single_rater");
    bench_cmd->add_option("--resamples", bcfg.bootstrap_resamples, "Bootstrap resamples");
    auto* bench_seed_opt = bench_cmd->add_option("--seed", bench_seed, "Bootstrap seed");
    bench_cmd->add_option("--tdsc-thresholds", bcfg.tdsc_thresholds, "TDSC operating points");
    bench_cmd->add_option("--ece-bins", bcfg.ece_bins, "Uniform evaluation bins");
    bench_cmd->add_option("--train-bins", bcfg.train_bins, "Equal-mass training bins");

    // reliability
    auto* rel_cmd = app.add_subcommand("reliability", "Emit reliability-curve CSV for a split");
    std::string rel_manifest, rel_split = "test", rel_map, rel_out = "reliability.csv";
    int rel_bins = 50;
    rel_cmd->add_option("--manifest", rel_manifest, "Dataset manifest JSON")->required();
    rel_cmd->add_option("--split", rel_split, "calibration | test")
        ->check(CLI::IsMember({"calibration", "test"}));
    rel_cmd->add_option("--map", rel_map, "Optional calibrator JSON applied first");
    rel_cmd->add_option("--bins", rel_bins, "Uniform bins");
    rel_cmd->add_option("--out", rel_out, "Output CSV path");

    for (auto* cmd : {fit_cmd, apply_cmd, eval_cmd, bench_cmd, rel_cmd})
        cmd->add_flag("--clamp", clamp, "Clamp out-of-range probabilities with a warning");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (threads_opt->count() == 0) {
        if (const char* env = std::getenv("VOXCAL_THREADS")) threads = std::atoi(env);
    }
    have_synth_seed = synth_seed_opt->count() > 0;
    have_fit_seed = fit_seed_opt->count() > 0;
    have_eval_seed = eval_seed_opt->count() > 0;
    have_bench_seed = bench_seed_opt->count() > 0;

    if (log_level == "error") g_log_level = LogLevel::error;
    else if (log_level == "warn") g_log_level = LogLevel::warn;
    else if (log_level == "info") g_log_level = LogLevel::info;
    else g_log_level = LogLevel::debug;
    par::set_threads(threads);

    try {
        if (synth_cmd->parsed()) {
            if (dims.size() == 1) dims = {dims[0], dims[0], dims[0]};
            if (dims.size() != 3) throw CLI::ValidationError("--dims", "give 1 or 3 values");
            std::copy(dims.begin(), dims.end(), scfg.dims.begin());
            scfg.lesion_count_range = {lesions[0], lesions[1]};
            scfg.distortion = parse_distortion(distortion);
            if (rater_model == "bernoulli") {
                scfg.rater_model = synth::RaterModel::bernoulli;
            } else if (rater_model.rfind("jitter:", 0) == 0) {
                scfg.rater_model = synth::RaterModel::threshold_jitter;
                scfg.jitter_sigma = std::stod(rater_model.substr(7));
            } else {
                throw CLI::ValidationError("--rater-model", "expected bernoulli or jitter:SIGMA");
            }
            scfg.seed = have_synth_seed ? synth_seed : global_seed;
            return cmd_synth(synth_out, scfg);
        }
        if (fit_cmd->parsed()) {
            TargetSpec spec = parse_target(fit_target, fit_rater, fit_bins);
            return cmd_fit(fit_manifest, spec, fit_out, fit_subsample,
                           have_fit_seed ? fit_seed : global_seed, clamp);
        }
        if (apply_cmd->parsed()) return cmd_apply(apply_map, apply_in, apply_out, clamp);
        if (eval_cmd->parsed()) {
            std::optional<std::filesystem::path> map;
            if (!eval_map.empty()) map = eval_map;
            return cmd_eval(eval_manifest, eval_split, map, eval_csv, eval_json, eval_thresholds,
                            eval_bins, eval_resamples, have_eval_seed ? eval_seed : global_seed,
                            clamp);
        }
        if (bench_cmd->parsed()) {
            bcfg.manifest_path = bench_manifest;
            bcfg.clamp_on_read = clamp;
            bcfg.bootstrap_seed = have_bench_seed ? bench_seed : global_seed;
            for (const auto& t : bench_targets)
                bcfg.targets.push_back(parse_target(t, bench_rater, bcfg.train_bins));
            return cmd_bench(bcfg, bench_out);
        }
        if (rel_cmd->parsed()) {
            std::optional<std::filesystem::path> map;
            if (!rel_map.empty()) map = rel_map;
            return cmd_reliability(rel_manifest, rel_split, map, rel_bins, rel_out, clamp);
        }
    } catch (const CLI::Error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        if (g_json_output)
            std::cout << nlohmann::json{{"error", std::string(errc_name(e.code()))},
                                        {"message", e.what()}}
                             .dump(2)
                      << "\n";
        log_line(LogLevel::error, e.what());
        return 2;
    } catch (const std::exception& e) {
        log_line(LogLevel::error, e.what());
        return 2;
    }
    return 1;
}
