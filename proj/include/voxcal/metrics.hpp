#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxcal/binning.hpp"
#include "voxcal/error.hpp"
#include "voxcal/format.hpp"
#include "voxcal/parallel.hpp"
#include "voxcal/volume.hpp"

namespace voxcal {

// 2|a&b| / (|a|+|b|) over aligned binary masks; 1.0 when both are empty
// (agreement that nothing is present). The empty-empty convention matters
// for tdsc at extreme thresholds.
[[nodiscard]] inline double dice(const Volume& a, const Volume& b) {
    if (a.header.dims != b.header.dims) throw Error(Errc::dims_mismatch, "dice inputs not aligned");
    auto la = a.labels();
    auto lb = b.labels();
    std::size_t ca = 0, cb = 0, inter = 0;
    for (std::size_t i = 0; i < la.size(); ++i) {
        ca += la[i] != 0;
        cb += lb[i] != 0;
        inter += (la[i] != 0) && (lb[i] != 0);
    }
    if (ca + cb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

namespace detail {

struct MaskCounts {
    std::int64_t a = 0, b = 0, inter = 0;
};

inline double dice_at_threshold(std::span<const float> pred, std::span<const float> target,
                                double threshold) {
    auto counts = par::ordered_reduce<MaskCounts>(
        pred.size(), MaskCounts{},
        [&](std::size_t begin, std::size_t end) {
            MaskCounts c;
            for (std::size_t v = begin; v < end; ++v) {
                bool in_a = pred[v] >= threshold;
                bool in_b = target[v] >= threshold;
                c.a += in_a;
                c.b += in_b;
                c.inter += in_a && in_b;
            }
            return c;
        },
        [](MaskCounts acc, MaskCounts p) {
            acc.a += p.a;
            acc.b += p.b;
            acc.inter += p.inter;
            return acc;
        });
    if (counts.a + counts.b == 0) return 1.0;
    return 2.0 * static_cast<double>(counts.inter) / static_cast<double>(counts.a + counts.b);
}

} // namespace detail

// Thresholding Dice score: mean Dice between prediction and MHR masks
// thresholded at each operating point.
[[nodiscard]] inline double tdsc(const Volume& prediction, const Volume& mhr,
                                 std::span<const double> thresholds) {
    if (prediction.header.dims != mhr.header.dims)
        throw Error(Errc::dims_mismatch, "tdsc inputs not aligned");
    if (thresholds.empty()) throw Error(Errc::empty_thresholds, "tdsc needs operating points");
    for (double t : thresholds)
        if (!(t > 0.0 && t < 1.0))
            throw Error(Errc::out_of_range, "tdsc thresholds must lie in (0,1)");
    auto pred = prediction.probabilities();
    auto target = mhr.probabilities();
    double sum = 0.0;
    for (double t : thresholds) sum += detail::dice_at_threshold(pred, target, t);
    return sum / static_cast<double>(thresholds.size());
}

[[nodiscard]] inline std::vector<double> default_tdsc_thresholds() {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

// Expected calibration error per rater over M uniform bins, averaged
// across raters: (1/N) sum_i sum_b w_b |c_b - acc_{b,i}|.
[[nodiscard]] inline double ece_per_rater(const Volume& prediction, std::span<const Volume> raters,
                                          int bins = 50) {
    if (raters.empty()) throw Error(Errc::empty_input, "ece needs at least one rater");
    RaterView views;
    views.reserve(raters.size());
    for (const auto& r : raters) {
        if (r.header.dims != prediction.header.dims)
            throw Error(Errc::dims_mismatch, "ece inputs not aligned");
        views.push_back(r.labels());
    }
    BinStats stats = uniform_bins(prediction.probabilities(), views, bins);
    double total = 0.0;
    for (std::size_t i = 0; i < raters.size(); ++i) {
        double ece = 0.0;
        for (int b = 0; b < stats.bin_count(); ++b) {
            if (!stats.occupied(b)) continue;
            auto bu = static_cast<std::size_t>(b);
            ece += stats.weights[bu] * std::abs(stats.mean_confidence[bu] - stats.per_rater_rate[bu][i]);
        }
        total += ece;
    }
    return total / static_cast<double>(raters.size());
}

// Reliability diagram data: empirical MHR per uniform confidence bin,
// pooled over the supplied cases.
struct ReliabilityCurve {
    std::vector<double> bin_edges; // M+1
    std::vector<double> mean_confidence;
    std::vector<double> empirical_mhr;
    std::vector<double> weight;
    std::vector<bool> occupied;

    // Weighted mean |confidence - MHR| over occupied bins; the scalar
    // summary used to compare curves.
    [[nodiscard]] double weighted_gap() const {
        double gap = 0.0;
        for (std::size_t b = 0; b < weight.size(); ++b)
            if (occupied[b]) gap += weight[b] * std::abs(mean_confidence[b] - empirical_mhr[b]);
        return gap;
    }

    [[nodiscard]] std::string to_csv() const {
        std::string out = "bin_lo,bin_hi,occupied,weight,mean_confidence,empirical_mhr\n";
        for (std::size_t b = 0; b + 1 < bin_edges.size(); ++b) {
            out += format_double(bin_edges[b]) + ',' + format_double(bin_edges[b + 1]) + ',' +
                   (occupied[b] ? '1' : '0') + (',' + format_double(weight[b])) + ',' +
                   format_double(mean_confidence[b]) + ',' + format_double(empirical_mhr[b]) + '\n';
        }
        return out;
    }
};

struct CasePrediction {
    const Volume* prediction = nullptr;
    std::span<const Volume> raters;
};

[[nodiscard]] inline ReliabilityCurve reliability(std::span<const CasePrediction> cases,
                                                  int bins = 50) {
    if (cases.empty()) throw Error(Errc::empty_input, "reliability needs at least one case");
    std::vector<float> preds;
    std::vector<float> mhr_values;
    for (const auto& c : cases) {
        auto p = c.prediction->probabilities();
        preds.insert(preds.end(), p.begin(), p.end());
        std::vector<const Volume*> rs;
        for (const auto& r : c.raters) {
            if (r.header.dims != c.prediction->header.dims)
                throw Error(Errc::dims_mismatch, "reliability inputs not aligned");
            rs.push_back(&r);
        }
        for (std::size_t v = 0; v < p.size(); ++v) {
            unsigned sum = 0;
            for (auto* r : rs) sum += r->labels()[v];
            mhr_values.push_back(static_cast<float>(sum) / static_cast<float>(rs.size()));
        }
    }

    // Bin predictions and average the pooled MHR per bin directly.
    const int m = bins;
    if (m < 1) throw Error(Errc::invalid_argument, "bin count must be >= 1");
    std::vector<std::int64_t> count(static_cast<std::size_t>(m), 0);
    std::vector<double> conf(static_cast<std::size_t>(m), 0.0);
    std::vector<double> mhr_sum(static_cast<std::size_t>(m), 0.0);
    for (std::size_t v = 0; v < preds.size(); ++v) {
        auto b = static_cast<std::size_t>(uniform_bin_index(preds[v], m));
        ++count[b];
        conf[b] += preds[v];
        mhr_sum[b] += mhr_values[v];
    }

    ReliabilityCurve curve;
    curve.bin_edges.resize(static_cast<std::size_t>(m) + 1);
    for (int b = 0; b <= m; ++b)
        curve.bin_edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / m;
    curve.mean_confidence.assign(static_cast<std::size_t>(m), 0.0);
    curve.empirical_mhr.assign(static_cast<std::size_t>(m), 0.0);
    curve.weight.assign(static_cast<std::size_t>(m), 0.0);
    curve.occupied.assign(static_cast<std::size_t>(m), false);
    for (std::size_t b = 0; b < static_cast<std::size_t>(m); ++b) {
        if (count[b] == 0) {
            curve.mean_confidence[b] = (static_cast<double>(b) + 0.5) / m;
            continue;
        }
        curve.occupied[b] = true;
        curve.weight[b] = static_cast<double>(count[b]) / static_cast<double>(preds.size());
        curve.mean_confidence[b] = conf[b] / static_cast<double>(count[b]);
        curve.empirical_mhr[b] = mhr_sum[b] / static_cast<double>(count[b]);
    }
    return curve;
}

// Soft volume: sum of probabilities, scaled to mm^3 by the voxel spacing.
[[nodiscard]] inline double soft_volume(const Volume& prediction) {
    auto p = prediction.probabilities();
    double sum = par::ordered_reduce<double>(
        p.size(), 0.0,
        [&](std::size_t begin, std::size_t end) {
            double s = 0.0;
            for (std::size_t v = begin; v < end; ++v) s += p[v];
            return s;
        },
        [](double a, double b) { return a + b; });
    return sum * prediction.header.spacing_volume();
}

[[nodiscard]] inline double binary_volume(const Volume& annotation) {
    auto l = annotation.labels();
    std::int64_t count = 0;
    for (auto v : l) count += v != 0;
    return static_cast<double>(count) * annotation.header.spacing_volume();
}

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / 1.4142135623730951); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) * 0.3989422804014327; }

} // namespace detail

// Closed-form CRPS of a point observation against Normal(mu, sigma):
// sigma * [ z(2*Phi(z)-1) + 2*phi(z) - 1/sqrt(pi) ]. sigma = 0 degenerates
// to |x - mu|.
[[nodiscard]] inline double crps_gaussian(double x, double mu, double sigma) {
    if (sigma < 0.0) throw Error(Errc::negative_sigma, "sigma must be >= 0");
    if (sigma == 0.0) return std::abs(x - mu);
    double z = (x - mu) / sigma;
    return sigma * (z * (2.0 * detail::normal_cdf(z) - 1.0) + 2.0 * detail::normal_pdf(z) -
                    0.5641895835477563); // 1/sqrt(pi)
}

// CRPS between the predicted soft volume and a Normal fitted by moments
// to the N rater volumes (sample standard deviation, ddof = 1).
[[nodiscard]] inline double crps_case(const Volume& prediction, std::span<const Volume> raters) {
    if (raters.empty()) throw Error(Errc::empty_input, "crps needs at least one rater");
    std::vector<double> volumes;
    volumes.reserve(raters.size());
    for (const auto& r : raters) {
        if (r.header.dims != prediction.header.dims)
            throw Error(Errc::dims_mismatch, "crps inputs not aligned");
        volumes.push_back(binary_volume(r));
    }
    double mu = 0.0;
    for (double v : volumes) mu += v;
    mu /= static_cast<double>(volumes.size());
    double sigma = 0.0;
    if (volumes.size() > 1) {
        double ss = 0.0;
        for (double v : volumes) ss += (v - mu) * (v - mu);
        sigma = std::sqrt(ss / static_cast<double>(volumes.size() - 1));
    }
    return crps_gaussian(soft_volume(prediction), mu, sigma);
}

// W1 between two empirical distributions: the integral of |F_a - F_b|
// over the merged support.
[[nodiscard]] inline double wasserstein1(std::span<const double> samples_a,
                                         std::span<const double> samples_b) {
    if (samples_a.empty() || samples_b.empty())
        throw Error(Errc::empty_input, "wasserstein1 needs nonempty samples");
    std::vector<double> a(samples_a.begin(), samples_a.end());
    std::vector<double> b(samples_b.begin(), samples_b.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double sum = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
        return sum / static_cast<double>(a.size());
    }
    double dist = 0.0;
    std::size_t ia = 0, ib = 0;
    double prev = std::min(a.front(), b.front());
    const double step_a = 1.0 / static_cast<double>(a.size());
    const double step_b = 1.0 / static_cast<double>(b.size());
    while (ia < a.size() || ib < b.size()) {
        double next = ia < a.size() && (ib >= b.size() || a[ia] <= b[ib]) ? a[ia] : b[ib];
        dist += std::abs(static_cast<double>(ia) * step_a - static_cast<double>(ib) * step_b) *
                (next - prev);
        while (ia < a.size() && a[ia] == next) ++ia;
        while (ib < b.size() && b[ib] == next) ++ib;
        prev = next;
    }
    return dist;
}

// Per-case metric values plus bootstrap aggregates.
struct CaseMetrics {
    double tdsc = 0.0;
    double ece = 0.0;
    double crps = 0.0;
    double soft_volume = 0.0;
    std::vector<double> rater_volumes;
};

struct BootstrapEstimate {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

struct MetricsReport {
    std::vector<std::pair<std::string, CaseMetrics>> per_case;
    std::map<std::string, BootstrapEstimate> aggregate;

    [[nodiscard]] std::vector<double> metric_values(const std::string& name) const {
        std::vector<double> out;
        out.reserve(per_case.size());
        for (const auto& [id, m] : per_case) {
            if (name == "tdsc") out.push_back(m.tdsc);
            else if (name == "ece") out.push_back(m.ece);
            else if (name == "crps") out.push_back(m.crps);
            else if (name == "soft_volume") out.push_back(m.soft_volume);
            else throw Error(Errc::invalid_argument, "unknown metric " + name);
        }
        return out;
    }

    // Column order is fixed and load-bearing for golden-file tests.
    [[nodiscard]] std::string to_csv() const {
        std::string out = "case_id,tdsc,ece,crps,soft_volume\n";
        for (const auto& [id, m] : per_case) {
            out += id + ',' + format_double(m.tdsc) + ',' + format_double(m.ece) + ',' +
                   format_double(m.crps) + ',' + format_double(m.soft_volume) + '\n';
        }
        return out;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json per = nlohmann::json::array();
        for (const auto& [id, m] : per_case) {
            per.push_back(nlohmann::json{{"case_id", id},
                                         {"tdsc", m.tdsc},
                                         {"ece", m.ece},
                                         {"crps", m.crps},
                                         {"soft_volume", m.soft_volume},
                                         {"rater_volumes", m.rater_volumes}});
        }
        nlohmann::json agg = nlohmann::json::object();
        for (const auto& [name, est] : aggregate)
            agg[name] = {{"mean", est.mean}, {"ci_lo", est.lo}, {"ci_hi", est.hi}};
        return nlohmann::json{{"per_case", std::move(per)}, {"aggregate", std::move(agg)}};
    }
};

} // namespace voxcal
