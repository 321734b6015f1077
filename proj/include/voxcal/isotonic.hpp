#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <json.hpp>

#include "voxcal/binning.hpp"
#include "voxcal/error.hpp"

namespace voxcal {

// Solution of the weighted isotonic least-squares problem: piecewise
// constant over the input positions, nondecreasing.
struct IsotonicFit {
    std::vector<double> block_values;
    double objective = 0.0;
};

// Pool-Adjacent-Violators: unique minimizer of sum_b w_b (v_b - t_b)^2
// subject to v_1 <= ... <= v_M, in O(M).
[[nodiscard]] inline IsotonicFit pava(std::span<const double> targets,
                                      std::span<const double> weights) {
    if (targets.empty()) throw Error(Errc::empty_input, "pava needs at least one target");
    if (targets.size() != weights.size())
        throw Error(Errc::length_mismatch, "targets and weights differ in length");
    for (double w : weights)
        if (!(w > 0.0)) throw Error(Errc::nonpositive_weight, "weights must be strictly positive");

    struct Block {
        double value;
        double weight;
        std::size_t count;
    };
    std::vector<Block> blocks;
    blocks.reserve(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Block cur{targets[i], weights[i], 1};
        while (!blocks.empty() && cur.value < blocks.back().value) {
            const Block& prev = blocks.back();
            double w = prev.weight + cur.weight;
            cur = {(prev.value * prev.weight + cur.value * cur.weight) / w, w, prev.count + cur.count};
            blocks.pop_back();
        }
        blocks.push_back(cur);
    }

    IsotonicFit fit;
    fit.block_values.reserve(targets.size());
    for (const auto& b : blocks)
        fit.block_values.insert(fit.block_values.end(), b.count, b.value);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        double d = fit.block_values[i] - targets[i];
        fit.objective += weights[i] * d * d;
    }
    return fit;
}

// Monotone piecewise-linear mapping [0,1] -> [0,1]. Outside the breakpoint
// range it clamps to the endpoint values.
class CalibrationMap {
public:
    CalibrationMap(std::vector<double> xs, std::vector<double> ys)
        : xs_(std::move(xs)), ys_(std::move(ys)) {
        if (xs_.empty() || xs_.size() != ys_.size())
            throw Error(Errc::length_mismatch, "breakpoint arrays must be nonempty and equal length");
        for (std::size_t i = 0; i < xs_.size(); ++i) {
            if (!(xs_[i] >= 0.0 && xs_[i] <= 1.0) || !(ys_[i] >= 0.0 && ys_[i] <= 1.0))
                throw Error(Errc::value_out_of_range, "breakpoints must lie in [0,1]");
            if (i > 0 && (xs_[i] < xs_[i - 1] || ys_[i] < ys_[i - 1]))
                throw Error(Errc::invalid_argument, "breakpoints must be nondecreasing");
            if (i > 0 && xs_[i] == xs_[i - 1])
                throw Error(Errc::invalid_argument, "duplicate breakpoint confidences");
        }
    }

    static CalibrationMap identity() { return CalibrationMap({0.0, 1.0}, {0.0, 1.0}); }

    [[nodiscard]] double evaluate(double p) const {
        if (!(p >= 0.0 && p <= 1.0))
            throw Error(Errc::out_of_range, "evaluate expects a probability in [0,1]");
        if (p <= xs_.front()) return ys_.front();
        if (p >= xs_.back()) return ys_.back();
        auto it = std::upper_bound(xs_.begin(), xs_.end(), p);
        std::size_t hi = static_cast<std::size_t>(it - xs_.begin());
        std::size_t lo = hi - 1;
        double t = (p - xs_[lo]) / (xs_[hi] - xs_[lo]);
        return ys_[lo] + t * (ys_[hi] - ys_[lo]);
    }

    [[nodiscard]] std::span<const double> breakpoints_x() const { return xs_; }
    [[nodiscard]] std::span<const double> breakpoints_y() const { return ys_; }

    [[nodiscard]] nlohmann::json to_json() const {
        return nlohmann::json{{"breakpoints_x", xs_}, {"breakpoints_y", ys_}, {"extrapolation", "clamp"}};
    }

    static CalibrationMap from_json(const nlohmann::json& j) {
        try {
            if (j.contains("extrapolation") && j.at("extrapolation").get<std::string>() != "clamp")
                throw Error(Errc::parse_error, "unsupported extrapolation mode");
            return CalibrationMap(j.at("breakpoints_x").get<std::vector<double>>(),
                                  j.at("breakpoints_y").get<std::vector<double>>());
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::parse_error, std::string("calibration map: ") + e.what());
        }
    }

private:
    std::vector<double> xs_;
    std::vector<double> ys_;
};

// Pairs bin confidences with fitted values; exact-duplicate confidences
// collapse to the mean of their fitted values so the interpolant stays a
// function (only degenerate constant-prediction bins hit this).
[[nodiscard]] inline CalibrationMap build_map(const BinStats& bins, const IsotonicFit& fit) {
    const auto& conf = bins.mean_confidence;
    if (fit.block_values.size() != conf.size())
        throw Error(Errc::length_mismatch, "fit length " + std::to_string(fit.block_values.size()) +
                                               " != bin count " + std::to_string(conf.size()));
    if (!std::is_sorted(conf.begin(), conf.end()))
        throw Error(Errc::invalid_argument, "bin confidences must be nondecreasing");

    std::vector<double> xs;
    std::vector<double> ys;
    std::size_t i = 0;
    while (i < conf.size()) {
        std::size_t j = i;
        double sum = 0.0;
        while (j < conf.size() && conf[j] == conf[i]) sum += fit.block_values[j], ++j;
        xs.push_back(conf[i]);
        ys.push_back(sum / static_cast<double>(j - i));
        i = j;
    }
    return CalibrationMap(std::move(xs), std::move(ys));
}

} // namespace voxcal
