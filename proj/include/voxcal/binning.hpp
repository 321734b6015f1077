#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "voxcal/error.hpp"
#include "voxcal/parallel.hpp"

namespace voxcal {

// Per-bin statistics over a pooled voxel set: bin weight w_b, mean
// predicted confidence, per-rater empirical positive rate and its rater
// average (the binned mean human response).
struct BinStats {
    std::vector<double> weights;                    // w_b = |B_b| / |V|
    std::vector<double> mean_confidence;            // nondecreasing over bins
    std::vector<std::vector<double>> per_rater_rate; // [bin][rater]
    std::vector<double> mhr_rate;                   // row mean of per_rater_rate
    std::vector<std::int64_t> counts;               // |B_b|, 0 for empty uniform bins
    int rater_count = 0;
    std::int64_t total_count = 0;

    [[nodiscard]] int bin_count() const { return static_cast<int>(weights.size()); }
    [[nodiscard]] bool occupied(int b) const { return counts[static_cast<std::size_t>(b)] > 0; }
};

using RaterView = std::vector<std::span<const std::uint8_t>>;

namespace detail {

inline void check_rater_shapes(std::size_t n, const RaterView& raters) {
    if (raters.empty()) throw Error(Errc::empty_input, "need at least one rater target array");
    for (const auto& r : raters)
        if (r.size() != n)
            throw Error(Errc::shape_mismatch, "rater target length " + std::to_string(r.size()) +
                                                  " != prediction length " + std::to_string(n));
}

// Accumulates one bin given the voxel indices it owns.
template <typename IndexRange>
void accumulate_bin(BinStats& stats, int b, std::span<const float> preds, const RaterView& raters,
                    IndexRange&& indices, std::int64_t count) {
    const int n_raters = static_cast<int>(raters.size());
    double conf_sum = 0.0;
    std::vector<double> label_sum(static_cast<std::size_t>(n_raters), 0.0);
    for (auto idx : indices) {
        conf_sum += preds[idx];
        for (int i = 0; i < n_raters; ++i) label_sum[static_cast<std::size_t>(i)] += raters[static_cast<std::size_t>(i)][idx];
    }
    auto bu = static_cast<std::size_t>(b);
    stats.counts[bu] = count;
    stats.weights[bu] = static_cast<double>(count) / static_cast<double>(stats.total_count);
    stats.mean_confidence[bu] = conf_sum / static_cast<double>(count);
    double rate_sum = 0.0;
    for (int i = 0; i < n_raters; ++i) {
        double rate = label_sum[static_cast<std::size_t>(i)] / static_cast<double>(count);
        stats.per_rater_rate[bu][static_cast<std::size_t>(i)] = rate;
        rate_sum += rate;
    }
    stats.mhr_rate[bu] = rate_sum / static_cast<double>(n_raters);
}

} // namespace detail

// Sorts voxels by prediction (stable, ties keep input order) and splits
// them into M contiguous bins whose sizes differ by at most one; the
// remainder |V| mod M goes to the first bins.
[[nodiscard]] inline BinStats equal_mass_bins(std::span<const float> preds, const RaterView& raters,
                                              int bins) {
    if (bins < 1) throw Error(Errc::invalid_argument, "bin count must be >= 1");
    const std::size_t n = preds.size();
    if (n < static_cast<std::size_t>(bins))
        throw Error(Errc::too_few_voxels, std::to_string(n) + " voxels for " +
                                              std::to_string(bins) + " equal-mass bins");
    detail::check_rater_shapes(n, raters);

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return preds[a] < preds[b]; });

    BinStats stats;
    stats.rater_count = static_cast<int>(raters.size());
    stats.total_count = static_cast<std::int64_t>(n);
    stats.weights.assign(static_cast<std::size_t>(bins), 0.0);
    stats.mean_confidence.assign(static_cast<std::size_t>(bins), 0.0);
    stats.mhr_rate.assign(static_cast<std::size_t>(bins), 0.0);
    stats.counts.assign(static_cast<std::size_t>(bins), 0);
    stats.per_rater_rate.assign(static_cast<std::size_t>(bins),
                                std::vector<double>(raters.size(), 0.0));

    const std::size_t base = n / static_cast<std::size_t>(bins);
    const std::size_t remainder = n % static_cast<std::size_t>(bins);
    par::for_each_index(static_cast<std::size_t>(bins), [&](std::size_t b) {
        std::size_t size = base + (b < remainder ? 1 : 0);
        std::size_t begin = b * base + std::min(b, remainder);
        detail::accumulate_bin(stats, static_cast<int>(b), preds, raters,
                               std::span<const std::uint32_t>(order).subspan(begin, size),
                               static_cast<std::int64_t>(size));
    });
    return stats;
}

[[nodiscard]] inline int uniform_bin_index(float p, int bins) {
    int idx = static_cast<int>(static_cast<double>(p) * bins);
    return idx >= bins ? bins - 1 : idx;
}

// Fixed-width bins on [0,1]; empty bins keep zero weight and report the
// bin midpoint as their confidence.
[[nodiscard]] inline BinStats uniform_bins(std::span<const float> preds, const RaterView& raters,
                                           int bins) {
    if (bins < 1) throw Error(Errc::invalid_argument, "bin count must be >= 1");
    const std::size_t n = preds.size();
    if (n == 0) throw Error(Errc::empty_input, "no predictions to bin");
    detail::check_rater_shapes(n, raters);

    const int n_raters = static_cast<int>(raters.size());
    const std::size_t nb = static_cast<std::size_t>(bins);

    struct Partial {
        std::vector<std::int64_t> count;
        std::vector<double> conf;
        std::vector<double> labels; // bin-major, then rater
    };
    auto map_chunk = [&](std::size_t begin, std::size_t end) {
        Partial p;
        p.count.assign(nb, 0);
        p.conf.assign(nb, 0.0);
        p.labels.assign(nb * static_cast<std::size_t>(n_raters), 0.0);
        for (std::size_t v = begin; v < end; ++v) {
            auto b = static_cast<std::size_t>(uniform_bin_index(preds[v], bins));
            ++p.count[b];
            p.conf[b] += preds[v];
            for (int i = 0; i < n_raters; ++i)
                p.labels[b * static_cast<std::size_t>(n_raters) + static_cast<std::size_t>(i)] +=
                    raters[static_cast<std::size_t>(i)][v];
        }
        return p;
    };
    auto fold = [&](Partial acc, Partial part) {
        if (acc.count.empty()) return part;
        for (std::size_t b = 0; b < nb; ++b) {
            acc.count[b] += part.count[b];
            acc.conf[b] += part.conf[b];
        }
        for (std::size_t k = 0; k < acc.labels.size(); ++k) acc.labels[k] += part.labels[k];
        return acc;
    };
    Partial total = par::ordered_reduce<Partial>(n, Partial{}, map_chunk, fold);

    BinStats stats;
    stats.rater_count = n_raters;
    stats.total_count = static_cast<std::int64_t>(n);
    stats.weights.assign(nb, 0.0);
    stats.mean_confidence.assign(nb, 0.0);
    stats.mhr_rate.assign(nb, 0.0);
    stats.counts = total.count;
    stats.per_rater_rate.assign(nb, std::vector<double>(static_cast<std::size_t>(n_raters), 0.0));
    for (std::size_t b = 0; b < nb; ++b) {
        auto c = total.count[b];
        if (c == 0) {
            stats.mean_confidence[b] = (static_cast<double>(b) + 0.5) / bins; // midpoint, reporting only
            continue;
        }
        stats.weights[b] = static_cast<double>(c) / static_cast<double>(n);
        stats.mean_confidence[b] = total.conf[b] / static_cast<double>(c);
        double rate_sum = 0.0;
        for (int i = 0; i < n_raters; ++i) {
            double rate = total.labels[b * static_cast<std::size_t>(n_raters) + static_cast<std::size_t>(i)] /
                          static_cast<double>(c);
            stats.per_rater_rate[b][static_cast<std::size_t>(i)] = rate;
            rate_sum += rate;
        }
        stats.mhr_rate[b] = rate_sum / static_cast<double>(n_raters);
    }
    return stats;
}

} // namespace voxcal
