#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxcal/error.hpp"
#include "voxcal/format.hpp"
#include "voxcal/manifest.hpp"
#include "voxcal/parallel.hpp"
#include "voxcal/rng.hpp"
#include "voxcal/volume.hpp"

namespace voxcal::synth {

enum class DistortionKind : std::uint8_t { identity, power, logistic };

// Voxelwise miscalibration applied to the latent probability: identity,
// p^gamma, or the logit-linear family sigmoid(a*logit(p) + b), all
// strictly monotone bijections of [0,1].
struct Distortion {
    DistortionKind kind = DistortionKind::identity;
    double gamma = 1.0; // power
    double a = 1.0;     // logistic
    double b = 0.0;

    [[nodiscard]] double apply(double p) const {
        switch (kind) {
            case DistortionKind::identity:
                return p;
            case DistortionKind::power:
                return std::pow(p, gamma);
            case DistortionKind::logistic: {
                if (p <= 0.0) return 0.0;
                if (p >= 1.0) return 1.0;
                double logit = std::log(p / (1.0 - p));
                return 1.0 / (1.0 + std::exp(-(a * logit + b)));
            }
        }
        return p;
    }

    [[nodiscard]] double inverse(double q) const {
        switch (kind) {
            case DistortionKind::identity:
                return q;
            case DistortionKind::power:
                if (!(gamma > 0.0))
                    throw Error(Errc::non_invertible_distortion, "power exponent must be > 0");
                return std::pow(q, 1.0 / gamma);
            case DistortionKind::logistic: {
                if (!(a > 0.0))
                    throw Error(Errc::non_invertible_distortion, "logistic slope must be > 0");
                if (q <= 0.0) return 0.0;
                if (q >= 1.0) return 1.0;
                double logit = std::log(q / (1.0 - q));
                double x = (logit - b) / a;
                return 1.0 / (1.0 + std::exp(-x));
            }
        }
        return q;
    }

    [[nodiscard]] std::string describe() const {
        switch (kind) {
            case DistortionKind::identity:
                return "identity";
            case DistortionKind::power:
                return "power:" + format_double(gamma);
            case DistortionKind::logistic:
                return "logistic:" + format_double(a) + ":" + format_double(b);
        }
        return "identity";
    }
};

enum class RaterModel : std::uint8_t { bernoulli, threshold_jitter };

struct SynthConfig {
    std::array<std::int64_t, 3> dims{32, 32, 32};
    int n_raters = 5;
    int n_calibration_cases = 4;
    int n_test_cases = 0;
    std::array<int, 2> lesion_count_range{1, 3};
    Distortion distortion{};
    RaterModel rater_model = RaterModel::bernoulli;
    // threshold_jitter: per-rater thresholds are Normal(0.5, jitter_sigma)
    // marginally, decomposed into a per-rater systematic bias (drawn once
    // per dataset) plus per-case variation. bias_fraction is the share of
    // the variance carried by the systematic part.
    double jitter_sigma = 0.08;
    double jitter_bias_fraction = 0.75;
    // Optional i.i.d. Gaussian noise added to the distorted prediction,
    // clipped back to [0,1].
    double prediction_noise_sigma = 0.0;
    // Optional spatially correlated prediction errors: blobs added to the
    // prediction only (no rater marks them), mimicking model false
    // positives. Count 0 disables them.
    std::array<int, 2> fp_lesion_count_range{0, 0};
    std::array<double, 2> fp_level_range{0.35, 0.65};
    // Lesion geometry as fractions of the smallest grid dimension.
    std::array<double, 2> lesion_radius_range{0.14, 0.30};
    std::array<double, 2> lesion_softness_range{0.02, 0.05};
    // Each lesion stacks an outer and an inner shell: the region between
    // them plateaus at an intermediate probability (the ambiguous rim
    // around a solid core). plateau_level_range draws that level.
    std::array<double, 2> plateau_level_range{0.35, 0.65};
    // 0 draws plateau levels uniformly from the range; L >= 1 snaps them
    // to L evenly spaced grades, as with discrete lesion grades shared
    // across cases.
    int plateau_levels = 0;
    std::array<double, 2> inner_radius_fraction_range{0.55, 0.8};
    std::uint64_t seed = 0;

    void validate() const {
        for (auto d : dims)
            if (d <= 0) throw Error(Errc::invalid_argument, "dims must be positive");
        if (n_raters < 1) throw Error(Errc::invalid_argument, "need at least one rater");
        if (n_calibration_cases < 0 || n_test_cases < 0 ||
            n_calibration_cases + n_test_cases < 1)
            throw Error(Errc::invalid_argument, "need at least one case");
        if (lesion_count_range[0] < 1 || lesion_count_range[1] < lesion_count_range[0])
            throw Error(Errc::invalid_argument, "bad lesion count range");
        if (distortion.kind == DistortionKind::power && !(distortion.gamma > 0.0))
            throw Error(Errc::invalid_argument, "power exponent must be > 0");
        if (distortion.kind == DistortionKind::logistic && !(distortion.a > 0.0))
            throw Error(Errc::invalid_argument, "logistic slope must be > 0");
        if (jitter_sigma < 0.0) throw Error(Errc::invalid_argument, "jitter sigma must be >= 0");
        if (!(jitter_bias_fraction >= 0.0 && jitter_bias_fraction <= 1.0))
            throw Error(Errc::invalid_argument, "bias fraction must lie in [0,1]");
        if (prediction_noise_sigma < 0.0)
            throw Error(Errc::invalid_argument, "prediction noise sigma must be >= 0");
        if (fp_lesion_count_range[0] < 0 || fp_lesion_count_range[1] < fp_lesion_count_range[0])
            throw Error(Errc::invalid_argument, "bad false-positive lesion count range");
        if (!(fp_level_range[0] > 0.0 && fp_level_range[1] <= 1.0 &&
              fp_level_range[0] <= fp_level_range[1]))
            throw Error(Errc::invalid_argument, "bad false-positive level range");
        if (!(plateau_level_range[0] > 0.0 && plateau_level_range[1] <= 1.0 &&
              plateau_level_range[0] <= plateau_level_range[1]))
            throw Error(Errc::invalid_argument, "bad plateau level range");
        if (!(inner_radius_fraction_range[0] > 0.0 && inner_radius_fraction_range[1] < 1.0 &&
              inner_radius_fraction_range[0] <= inner_radius_fraction_range[1]))
            throw Error(Errc::invalid_argument, "bad inner radius fraction range");
        if (plateau_levels < 0)
            throw Error(Errc::invalid_argument, "plateau level count must be >= 0");
    }

    [[nodiscard]] int total_cases() const { return n_calibration_cases + n_test_cases; }

    [[nodiscard]] nlohmann::json to_json() const {
        return nlohmann::json{
            {"dims", dims},
            {"n_raters", n_raters},
            {"n_calibration_cases", n_calibration_cases},
            {"n_test_cases", n_test_cases},
            {"lesion_count_range", lesion_count_range},
            {"distortion", distortion.describe()},
            {"rater_model", rater_model == RaterModel::bernoulli ? "bernoulli" : "threshold_jitter"},
            {"jitter_sigma", jitter_sigma},
            {"jitter_bias_fraction", jitter_bias_fraction},
            {"prediction_noise_sigma", prediction_noise_sigma},
            {"fp_lesion_count_range", fp_lesion_count_range},
            {"fp_level_range", fp_level_range},
            {"lesion_radius_range", lesion_radius_range},
            {"lesion_softness_range", lesion_softness_range},
            {"plateau_level_range", plateau_level_range},
            {"plateau_levels", plateau_levels},
            {"inner_radius_fraction_range", inner_radius_fraction_range},
            {"seed", seed},
            {"rng", rng::kAlgorithmId}};
    }

    static SynthConfig from_json(const nlohmann::json& j);
};

[[nodiscard]] inline Distortion parse_distortion_spec(const std::string& spec) {
    if (spec == "identity") return {};
    if (spec.rfind("power:", 0) == 0) {
        Distortion d;
        d.kind = DistortionKind::power;
        d.gamma = std::stod(spec.substr(6));
        return d;
    }
    if (spec.rfind("logistic:", 0) == 0) {
        Distortion d;
        d.kind = DistortionKind::logistic;
        auto rest = spec.substr(9);
        auto colon = rest.find(':');
        if (colon == std::string::npos)
            throw Error(Errc::parse_error, "logistic distortion needs A:B");
        d.a = std::stod(rest.substr(0, colon));
        d.b = std::stod(rest.substr(colon + 1));
        return d;
    }
    throw Error(Errc::parse_error, "unknown distortion \"" + spec + "\"");
}

inline SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig cfg;
    try {
        auto dims = j.at("dims").get<std::vector<std::int64_t>>();
        if (dims.size() != 3) throw Error(Errc::parse_error, "dims must have 3 entries");
        std::copy(dims.begin(), dims.end(), cfg.dims.begin());
        cfg.n_raters = j.at("n_raters").get<int>();
        cfg.n_calibration_cases = j.at("n_calibration_cases").get<int>();
        cfg.n_test_cases = j.at("n_test_cases").get<int>();
        auto lesions = j.at("lesion_count_range").get<std::vector<int>>();
        if (lesions.size() != 2) throw Error(Errc::parse_error, "lesion_count_range needs 2 entries");
        cfg.lesion_count_range = {lesions[0], lesions[1]};
        cfg.distortion = parse_distortion_spec(j.at("distortion").get<std::string>());
        auto model = j.at("rater_model").get<std::string>();
        if (model == "bernoulli") cfg.rater_model = RaterModel::bernoulli;
        else if (model == "threshold_jitter") cfg.rater_model = RaterModel::threshold_jitter;
        else throw Error(Errc::parse_error, "unknown rater model \"" + model + "\"");
        cfg.jitter_sigma = j.at("jitter_sigma").get<double>();
        cfg.jitter_bias_fraction = j.at("jitter_bias_fraction").get<double>();
        cfg.prediction_noise_sigma = j.at("prediction_noise_sigma").get<double>();
        auto rr = j.at("lesion_radius_range").get<std::vector<double>>();
        auto sr = j.at("lesion_softness_range").get<std::vector<double>>();
        if (rr.size() != 2 || sr.size() != 2)
            throw Error(Errc::parse_error, "lesion geometry ranges need 2 entries");
        cfg.lesion_radius_range = {rr[0], rr[1]};
        cfg.lesion_softness_range = {sr[0], sr[1]};
        if (j.contains("plateau_level_range")) {
            auto pl = j.at("plateau_level_range").get<std::vector<double>>();
            cfg.plateau_level_range = {pl.at(0), pl.at(1)};
        }
        if (j.contains("fp_lesion_count_range")) {
            auto fr = j.at("fp_lesion_count_range").get<std::vector<int>>();
            cfg.fp_lesion_count_range = {fr.at(0), fr.at(1)};
        }
        if (j.contains("fp_level_range")) {
            auto fl = j.at("fp_level_range").get<std::vector<double>>();
            cfg.fp_level_range = {fl.at(0), fl.at(1)};
        }
        if (j.contains("plateau_levels"))
            cfg.plateau_levels = j.at("plateau_levels").get<int>();
        if (j.contains("inner_radius_fraction_range")) {
            auto ir = j.at("inner_radius_fraction_range").get<std::vector<double>>();
            cfg.inner_radius_fraction_range = {ir.at(0), ir.at(1)};
        }
        cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, std::string("synth config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

struct SynthCase {
    std::string case_id;
    Split split = Split::calibration;
    Volume latent_p;
    Volume prediction;
    std::vector<Volume> raters;
};

namespace detail {

struct Lesion {
    std::array<double, 3> center;
    double radius;        // outer shell
    double inner_radius;  // solid core boundary
    double softness;
    double plateau;       // level of the annulus between the shells
};

// Smooth blob field: sum of radial sigmoids, clipped to [0,1]. Backgrounds
// sit near zero, cores near one, with wide soft shells in between.
inline std::vector<float> latent_field(const SynthConfig& cfg, rng::Engine& eng) {
    const auto& d = cfg.dims;
    double min_dim = static_cast<double>(std::min({d[0], d[1], d[2]}));
    int count = cfg.lesion_count_range[0] +
                static_cast<int>(rng::bounded(
                    eng, static_cast<std::uint64_t>(cfg.lesion_count_range[1] -
                                                    cfg.lesion_count_range[0] + 1)));
    std::vector<Lesion> lesions;
    lesions.reserve(static_cast<std::size_t>(count));
    for (int j = 0; j < count; ++j) {
        Lesion l;
        for (int axis = 0; axis < 3; ++axis) {
            double margin = 0.18 * static_cast<double>(d[static_cast<std::size_t>(axis)]);
            l.center[static_cast<std::size_t>(axis)] =
                rng::uniform(eng, margin, static_cast<double>(d[static_cast<std::size_t>(axis)]) - margin);
        }
        l.radius = min_dim * rng::uniform(eng, cfg.lesion_radius_range[0], cfg.lesion_radius_range[1]);
        l.softness = min_dim * rng::uniform(eng, cfg.lesion_softness_range[0], cfg.lesion_softness_range[1]);
        if (cfg.plateau_levels == 0) {
            l.plateau = rng::uniform(eng, cfg.plateau_level_range[0], cfg.plateau_level_range[1]);
        } else if (cfg.plateau_levels == 1) {
            (void)eng(); // keep the draw stream aligned with the continuous case
            l.plateau = 0.5 * (cfg.plateau_level_range[0] + cfg.plateau_level_range[1]);
        } else {
            auto k = rng::bounded(eng, static_cast<std::uint64_t>(cfg.plateau_levels));
            l.plateau = cfg.plateau_level_range[0] +
                        (cfg.plateau_level_range[1] - cfg.plateau_level_range[0]) *
                            (static_cast<double>(k) / (cfg.plateau_levels - 1));
        }
        l.inner_radius = l.radius * rng::uniform(eng, cfg.inner_radius_fraction_range[0],
                                                 cfg.inner_radius_fraction_range[1]);
        lesions.push_back(l);
    }

    std::vector<float> field(static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
                             static_cast<std::size_t>(d[2]));
    std::size_t v = 0;
    for (std::int64_t x = 0; x < d[0]; ++x) {
        for (std::int64_t y = 0; y < d[1]; ++y) {
            for (std::int64_t z = 0; z < d[2]; ++z, ++v) {
                double sum = 0.0;
                for (const auto& l : lesions) {
                    double dx = static_cast<double>(x) - l.center[0];
                    double dy = static_cast<double>(y) - l.center[1];
                    double dz = static_cast<double>(z) - l.center[2];
                    double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                    sum += l.plateau / (1.0 + std::exp(-(l.radius - dist) / l.softness));
                    sum += (1.0 - l.plateau) / (1.0 + std::exp(-(l.inner_radius - dist) / l.softness));
                }
                field[v] = static_cast<float>(std::clamp(sum, 0.0, 1.0));
            }
        }
    }
    return field;
}

// Renders prediction-only blobs (model false positives): a solid plateau
// at a level the raters never corroborate. Draws from a dedicated
// sub-stream so toggling them leaves the rest of the case unchanged.
inline void add_false_positives(const SynthConfig& cfg, std::uint64_t case_seed,
                                std::vector<float>& pred) {
    rng::Engine eng(rng::splitmix64(case_seed ^ 0xfa15eb0b5ULL));
    const auto& d = cfg.dims;
    double min_dim = static_cast<double>(std::min({d[0], d[1], d[2]}));
    int count = cfg.fp_lesion_count_range[0] +
                static_cast<int>(rng::bounded(
                    eng, static_cast<std::uint64_t>(cfg.fp_lesion_count_range[1] -
                                                    cfg.fp_lesion_count_range[0] + 1)));
    for (int j = 0; j < count; ++j) {
        std::array<double, 3> center;
        for (int axis = 0; axis < 3; ++axis) {
            double margin = 0.12 * static_cast<double>(d[static_cast<std::size_t>(axis)]);
            center[static_cast<std::size_t>(axis)] =
                rng::uniform(eng, margin, static_cast<double>(d[static_cast<std::size_t>(axis)]) - margin);
        }
        double radius =
            min_dim * rng::uniform(eng, cfg.lesion_radius_range[0], cfg.lesion_radius_range[1]);
        double softness = min_dim * rng::uniform(eng, cfg.lesion_softness_range[0],
                                                 cfg.lesion_softness_range[1]);
        double level = rng::uniform(eng, cfg.fp_level_range[0], cfg.fp_level_range[1]);

        std::size_t v = 0;
        for (std::int64_t x = 0; x < d[0]; ++x) {
            for (std::int64_t y = 0; y < d[1]; ++y) {
                for (std::int64_t z = 0; z < d[2]; ++z, ++v) {
                    double dx = static_cast<double>(x) - center[0];
                    double dy = static_cast<double>(y) - center[1];
                    double dz = static_cast<double>(z) - center[2];
                    double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                    double bump = level / (1.0 + std::exp(-(radius - dist) / softness));
                    pred[v] = static_cast<float>(std::clamp(pred[v] + bump, 0.0, 1.0));
                }
            }
        }
    }
}

} // namespace detail

// Per-rater systematic thresholds for the threshold_jitter model, drawn
// once per dataset from a stream disjoint from every per-case stream.
[[nodiscard]] inline std::vector<double> rater_biases(const SynthConfig& cfg) {
    std::vector<double> biases(static_cast<std::size_t>(cfg.n_raters), 0.0);
    if (cfg.rater_model != RaterModel::threshold_jitter) return biases;
    rng::Engine eng(rng::splitmix64(~cfg.seed));
    double sigma_bias = cfg.jitter_sigma * std::sqrt(cfg.jitter_bias_fraction);
    for (auto& b : biases) b = sigma_bias * rng::normal01(eng);
    return biases;
}

// Generates one case deterministically from seed ^ case_index.
[[nodiscard]] inline SynthCase generate_case(const SynthConfig& cfg, int case_index,
                                             std::span<const double> biases) {
    rng::Engine eng(cfg.seed ^ static_cast<std::uint64_t>(case_index));
    SynthCase sc;
    {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "case_%03d", case_index);
        sc.case_id = buf;
    }
    sc.split = case_index < cfg.n_calibration_cases ? Split::calibration : Split::test;

    std::vector<float> latent = detail::latent_field(cfg, eng);
    const std::size_t n = latent.size();

    std::vector<float> pred(n);
    for (std::size_t v = 0; v < n; ++v)
        pred[v] = static_cast<float>(cfg.distortion.apply(latent[v]));
    if (cfg.fp_lesion_count_range[1] > 0)
        detail::add_false_positives(cfg, cfg.seed ^ static_cast<std::uint64_t>(case_index), pred);
    if (cfg.prediction_noise_sigma > 0.0) {
        for (std::size_t v = 0; v < n; ++v) {
            double noisy = pred[v] + cfg.prediction_noise_sigma * rng::normal01(eng);
            pred[v] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
        }
    }

    sc.raters.reserve(static_cast<std::size_t>(cfg.n_raters));
    if (cfg.rater_model == RaterModel::bernoulli) {
        for (int i = 0; i < cfg.n_raters; ++i) {
            std::vector<std::uint8_t> mask(n);
            for (std::size_t v = 0; v < n; ++v)
                mask[v] = rng::uniform01(eng) < latent[v] ? 1 : 0;
            sc.raters.push_back(Volume::make_annotation(cfg.dims, std::move(mask)));
        }
    } else {
        double sigma_case = cfg.jitter_sigma * std::sqrt(1.0 - cfg.jitter_bias_fraction);
        for (int i = 0; i < cfg.n_raters; ++i) {
            double tau = 0.5 + biases[static_cast<std::size_t>(i)] + sigma_case * rng::normal01(eng);
            tau = std::clamp(tau, 1e-6, 1.0 - 1e-6);
            std::vector<std::uint8_t> mask(n);
            for (std::size_t v = 0; v < n; ++v) mask[v] = latent[v] >= tau ? 1 : 0;
            sc.raters.push_back(Volume::make_annotation(cfg.dims, std::move(mask)));
        }
    }

    sc.latent_p = Volume::make_probability(cfg.dims, std::move(latent));
    sc.prediction = Volume::make_probability(cfg.dims, std::move(pred));
    return sc;
}

[[nodiscard]] inline std::vector<SynthCase> generate(const SynthConfig& cfg) {
    cfg.validate();
    auto biases = rater_biases(cfg);
    std::vector<SynthCase> cases(static_cast<std::size_t>(cfg.total_cases()));
    par::for_each_index(cases.size(), [&](std::size_t i) {
        cases[i] = generate_case(cfg, static_cast<int>(i), biases);
    });
    return cases;
}

// Closed-form inverse of the configured distortion (the recovery oracle).
[[nodiscard]] inline double true_inverse(const SynthConfig& cfg, double q) {
    return cfg.distortion.inverse(q);
}

// Writes volumes, the manifest, and an echo of the configuration. The
// latent field is stored alongside each case for oracle checks but is not
// referenced by the manifest.
inline Manifest write_dataset(const SynthConfig& cfg, const std::vector<SynthCase>& cases,
                              const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "cases", ec);

    Manifest m;
    m.rater_count = cfg.n_raters;
    m.base_dir = dir;
    for (const auto& sc : cases) {
        write_volume(sc.latent_p, dir / "cases" / (sc.case_id + "_latent.raw"));
        write_volume(sc.prediction, dir / "cases" / (sc.case_id + "_pred.raw"));
        CaseRecord rec;
        rec.case_id = sc.case_id;
        rec.split = sc.split;
        rec.prediction_paths.push_back("cases/" + sc.case_id + "_pred.raw");
        for (std::size_t i = 0; i < sc.raters.size(); ++i) {
            std::string rel = "cases/" + sc.case_id + "_rater" + std::to_string(i) + ".raw";
            write_volume(sc.raters[i], dir / rel);
            rec.rater_paths.push_back(rel);
        }
        m.cases.push_back(std::move(rec));
    }
    save_manifest(m, dir / "manifest.json");

    std::ofstream cfg_out(dir / "synth_config.json", std::ios::trunc);
    if (!cfg_out) throw Error(Errc::io_failure, "cannot write synth_config.json");
    cfg_out << cfg.to_json().dump(2) << '\n';
    return m;
}

} // namespace voxcal::synth
