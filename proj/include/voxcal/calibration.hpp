#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxcal/binning.hpp"
#include "voxcal/error.hpp"
#include "voxcal/isotonic.hpp"
#include "voxcal/parallel.hpp"
#include "voxcal/rng.hpp"
#include "voxcal/volume.hpp"

namespace voxcal {

enum class TargetKind : std::uint8_t { none, mhr, single_rater, hard_label };

[[nodiscard]] constexpr std::string_view target_kind_name(TargetKind k) noexcept {
    switch (k) {
        case TargetKind::none:         return "none";
        case TargetKind::mhr:          return "mhr";
        case TargetKind::single_rater: return "single_rater";
        case TargetKind::hard_label:   return "hard_label";
    }
    return "none";
}

[[nodiscard]] inline std::optional<TargetKind> parse_target_kind(std::string_view s) noexcept {
    if (s == "none") return TargetKind::none;
    if (s == "mhr") return TargetKind::mhr;
    if (s == "single_rater") return TargetKind::single_rater;
    if (s == "hard_label") return TargetKind::hard_label;
    return std::nullopt;
}

struct TargetSpec {
    TargetKind kind = TargetKind::mhr;
    int rater_index = 0; // single_rater only
    int train_bins = 250;

    [[nodiscard]] std::string name() const {
        if (kind == TargetKind::single_rater)
            return "single_rater_" + std::to_string(rater_index);
        return std::string(target_kind_name(kind));
    }
};

// Fitted calibrator: one map for mhr/single_rater, N maps averaged at
// inference for hard_label, no map for none (identity).
struct CalibratorBundle {
    TargetKind kind = TargetKind::none;
    int rater_index = -1;
    int rater_count = 0;
    int train_bins = 0;
    std::vector<CalibrationMap> maps;
    std::string train_manifest_hash;

    [[nodiscard]] double apply_scalar(double p) const {
        switch (kind) {
            case TargetKind::none:
                return p;
            case TargetKind::mhr:
            case TargetKind::single_rater:
                return maps.front().evaluate(p);
            case TargetKind::hard_label: {
                double sum = 0.0;
                for (const auto& m : maps) sum += m.evaluate(p);
                return sum / static_cast<double>(maps.size());
            }
        }
        return p;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json jm = nlohmann::json::array();
        for (const auto& m : maps) jm.push_back(m.to_json());
        return nlohmann::json{{"kind", std::string(target_kind_name(kind))},
                              {"rater_index", rater_index},
                              {"rater_count", rater_count},
                              {"train_bins", train_bins},
                              {"maps", std::move(jm)},
                              {"train_manifest_hash", train_manifest_hash}};
    }

    static CalibratorBundle from_json(const nlohmann::json& j) {
        CalibratorBundle b;
        try {
            auto kind = parse_target_kind(j.at("kind").get<std::string>());
            if (!kind) throw Error(Errc::parse_error, "unknown calibrator kind");
            b.kind = *kind;
            b.rater_index = j.at("rater_index").get<int>();
            b.rater_count = j.at("rater_count").get<int>();
            b.train_bins = j.at("train_bins").get<int>();
            b.train_manifest_hash = j.at("train_manifest_hash").get<std::string>();
            for (const auto& jm : j.at("maps")) b.maps.push_back(CalibrationMap::from_json(jm));
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::parse_error, std::string("calibrator bundle: ") + e.what());
        }
        if (b.kind == TargetKind::hard_label && static_cast<int>(b.maps.size()) != b.rater_count)
            throw Error(Errc::parse_error, "hard_label bundle must hold one map per rater");
        if ((b.kind == TargetKind::mhr || b.kind == TargetKind::single_rater) && b.maps.size() != 1)
            throw Error(Errc::parse_error, "bundle must hold exactly one map");
        return b;
    }
};

// Voxelwise fraction of raters labeling tumor; values in {0, 1/N, ..., 1}.
[[nodiscard]] inline Volume mean_human_response(std::span<const Volume> raters) {
    if (raters.empty()) throw Error(Errc::empty_input, "need at least one rater volume");
    const auto& dims = raters.front().header.dims;
    const std::size_t n = raters.front().header.voxel_count();
    std::vector<std::span<const std::uint8_t>> labels;
    labels.reserve(raters.size());
    for (const auto& r : raters) {
        if (r.header.dims != dims) throw Error(Errc::dims_mismatch, "rater volumes are not aligned");
        labels.push_back(r.labels());
        for (auto v : labels.back())
            if (v > 1) throw Error(Errc::non_binary_annotation, "annotation values must be 0 or 1");
    }
    std::vector<float> out(n);
    const float inv = 1.0f / static_cast<float>(raters.size());
    par::for_ranges(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t v = begin; v < end; ++v) {
            unsigned sum = 0;
            for (const auto& l : labels) sum += l[v];
            out[v] = static_cast<float>(sum) * inv;
        }
    });
    return Volume::make_probability(dims, std::move(out), raters.front().header.spacing);
}

// Voxelwise arithmetic mean of K aligned probability volumes.
[[nodiscard]] inline Volume pool_ensemble(std::span<const Volume> predictions) {
    if (predictions.empty()) throw Error(Errc::empty_input, "need at least one prediction volume");
    const auto& dims = predictions.front().header.dims;
    const std::size_t n = predictions.front().header.voxel_count();
    for (const auto& p : predictions) {
        if (p.header.dims != dims)
            throw Error(Errc::dims_mismatch, "prediction volumes are not aligned");
        (void)p.probabilities();
    }
    if (predictions.size() == 1) return predictions.front();
    std::vector<float> out(n);
    const double inv = 1.0 / static_cast<double>(predictions.size());
    par::for_ranges(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t v = begin; v < end; ++v) {
            double sum = 0.0;
            for (const auto& p : predictions) sum += p.f32[v];
            out[v] = static_cast<float>(sum * inv);
        }
    });
    return Volume::make_probability(dims, std::move(out), predictions.front().header.spacing);
}

// One calibration case as flat views: a pooled prediction, N rater label
// arrays, and an optional ROI mask (empty = all voxels).
struct FitCase {
    std::span<const float> prediction;
    RaterView raters;
    std::span<const std::uint8_t> mask{};
};

struct FitOptions {
    // Uniform random voxel subsample used for fitting; 1.0 = all voxels.
    double subsample_fraction = 1.0;
    std::uint64_t subsample_seed = 0;
    std::string manifest_hash;
};

namespace detail {

struct PooledVoxels {
    std::vector<float> preds;
    std::vector<std::vector<std::uint8_t>> labels;
};

inline PooledVoxels pool_fit_cases(std::span<const FitCase> cases, const FitOptions& opts) {
    if (cases.empty()) throw Error(Errc::empty_input, "need at least one calibration case");
    const std::size_t n_raters = cases.front().raters.size();
    if (n_raters == 0) throw Error(Errc::empty_input, "need at least one rater");
    if (!(opts.subsample_fraction > 0.0 && opts.subsample_fraction <= 1.0))
        throw Error(Errc::invalid_argument, "subsample fraction must be in (0,1]");

    PooledVoxels pooled;
    pooled.labels.resize(n_raters);
    rng::Engine eng(rng::splitmix64(opts.subsample_seed));
    const bool subsample = opts.subsample_fraction < 1.0;

    for (const auto& c : cases) {
        if (c.raters.size() != n_raters)
            throw Error(Errc::rater_count_mismatch, "cases disagree on rater count");
        const std::size_t n = c.prediction.size();
        for (const auto& r : c.raters)
            if (r.size() != n) throw Error(Errc::shape_mismatch, "rater array length mismatch");
        if (!c.mask.empty() && c.mask.size() != n)
            throw Error(Errc::shape_mismatch, "mask length mismatch");
        for (std::size_t v = 0; v < n; ++v) {
            if (!c.mask.empty() && c.mask[v] == 0) continue;
            if (subsample && rng::uniform01(eng) >= opts.subsample_fraction) continue;
            pooled.preds.push_back(c.prediction[v]);
            for (std::size_t i = 0; i < n_raters; ++i)
                pooled.labels[i].push_back(c.raters[i][v]);
        }
    }
    if (pooled.preds.empty()) throw Error(Errc::too_few_voxels, "no voxels left to fit on");
    return pooled;
}

} // namespace detail

// Pools all calibration voxels, bins them into M equal-mass bins, and
// fits the monotone map(s) for the requested target by PAVA.
[[nodiscard]] inline CalibratorBundle fit(std::span<const FitCase> cases, const TargetSpec& spec,
                                          const FitOptions& opts = {}) {
    if (spec.train_bins < 1) throw Error(Errc::invalid_argument, "train_bins must be >= 1");

    CalibratorBundle bundle;
    bundle.kind = spec.kind;
    bundle.train_bins = spec.train_bins;
    bundle.train_manifest_hash = opts.manifest_hash;
    if (!cases.empty()) bundle.rater_count = static_cast<int>(cases.front().raters.size());
    if (spec.kind == TargetKind::none) return bundle;

    auto pooled = detail::pool_fit_cases(cases, opts);
    const int n_raters = static_cast<int>(pooled.labels.size());
    if (spec.kind == TargetKind::single_rater) {
        if (spec.rater_index < 0 || spec.rater_index >= n_raters)
            throw Error(Errc::rater_index_out_of_range,
                        "rater index " + std::to_string(spec.rater_index) + " with N = " +
                            std::to_string(n_raters));
        bundle.rater_index = spec.rater_index;
    }

    RaterView views;
    views.reserve(pooled.labels.size());
    for (const auto& l : pooled.labels) views.emplace_back(l);
    BinStats bins = equal_mass_bins(pooled.preds, views, spec.train_bins);

    auto fit_against = [&](std::span<const double> target) {
        return build_map(bins, pava(target, bins.weights));
    };
    switch (spec.kind) {
        case TargetKind::mhr:
            bundle.maps.push_back(fit_against(bins.mhr_rate));
            break;
        case TargetKind::single_rater: {
            std::vector<double> target(bins.weights.size());
            for (std::size_t b = 0; b < target.size(); ++b)
                target[b] = bins.per_rater_rate[b][static_cast<std::size_t>(spec.rater_index)];
            bundle.maps.push_back(fit_against(target));
            break;
        }
        case TargetKind::hard_label: {
            for (int i = 0; i < n_raters; ++i) {
                std::vector<double> target(bins.weights.size());
                for (std::size_t b = 0; b < target.size(); ++b)
                    target[b] = bins.per_rater_rate[b][static_cast<std::size_t>(i)];
                bundle.maps.push_back(fit_against(target));
            }
            break;
        }
        case TargetKind::none:
            break;
    }
    return bundle;
}

// Applies the bundle voxelwise; kind none copies the input bit-exactly.
[[nodiscard]] inline Volume apply(const CalibratorBundle& bundle, const Volume& prediction) {
    auto preds = prediction.probabilities();
    for (auto p : preds)
        if (!(p >= 0.0f && p <= 1.0f))
            throw Error(Errc::value_out_of_range, "prediction outside [0,1]");
    if (bundle.kind == TargetKind::none) return prediction;

    std::vector<float> out(preds.size());
    par::for_ranges(preds.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t v = begin; v < end; ++v)
            out[v] = static_cast<float>(bundle.apply_scalar(preds[v]));
    });
    return Volume::make_probability(prediction.header.dims, std::move(out),
                                    prediction.header.spacing);
}

} // namespace voxcal
