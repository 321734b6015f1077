#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "voxcal/error.hpp"
#include "voxcal/volume.hpp"

namespace voxcal {

enum class Split : std::uint8_t { calibration, test };

[[nodiscard]] constexpr std::string_view split_name(Split s) noexcept {
    return s == Split::calibration ? "calibration" : "test";
}

struct CaseRecord {
    std::string case_id;
    std::vector<std::string> prediction_paths; // 1..K probability volumes
    std::vector<std::string> rater_paths;      // N annotation volumes
    std::string mask_path;                     // optional ROI, empty = whole volume
    Split split = Split::calibration;
};

struct Manifest {
    std::string format_version = "1";
    int rater_count = 0;
    std::vector<CaseRecord> cases;
    std::filesystem::path base_dir; // directory paths are resolved against

    [[nodiscard]] std::vector<const CaseRecord*> split_cases(Split s) const {
        std::vector<const CaseRecord*> out;
        for (const auto& c : cases)
            if (c.split == s) out.push_back(&c);
        return out;
    }

    [[nodiscard]] std::filesystem::path resolve(const std::string& rel) const {
        std::filesystem::path p(rel);
        return p.is_absolute() ? p : base_dir / p;
    }
};

// Volumes of one case loaded into memory, predictions pooled later.
struct LoadedCase {
    const CaseRecord* record = nullptr;
    std::vector<Volume> predictions;
    std::vector<Volume> raters;
    Volume mask; // empty dims when absent

    [[nodiscard]] bool has_mask() const { return mask.header.voxel_count() > 0; }
};

[[nodiscard]] inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : m.cases) {
        nlohmann::json jc{{"case_id", c.case_id},
                          {"prediction_paths", c.prediction_paths},
                          {"rater_paths", c.rater_paths},
                          {"split", std::string(split_name(c.split))}};
        if (!c.mask_path.empty()) jc["mask_path"] = c.mask_path;
        cases.push_back(std::move(jc));
    }
    return nlohmann::json{{"format_version", m.format_version},
                          {"rater_count", m.rater_count},
                          {"cases", std::move(cases)}};
}

[[nodiscard]] inline Manifest manifest_from_json(const nlohmann::json& j,
                                                 const std::filesystem::path& base_dir) {
    Manifest m;
    m.base_dir = base_dir;
    try {
        m.format_version = j.at("format_version").get<std::string>();
        m.rater_count = j.at("rater_count").get<int>();
        for (const auto& jc : j.at("cases")) {
            CaseRecord c;
            c.case_id = jc.at("case_id").get<std::string>();
            c.prediction_paths = jc.at("prediction_paths").get<std::vector<std::string>>();
            c.rater_paths = jc.at("rater_paths").get<std::vector<std::string>>();
            if (jc.contains("mask_path")) c.mask_path = jc.at("mask_path").get<std::string>();
            auto split = jc.at("split").get<std::string>();
            if (split == "calibration") c.split = Split::calibration;
            else if (split == "test") c.split = Split::test;
            else throw Error(Errc::parse_error, "unknown split \"" + split + "\"");
            m.cases.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, std::string("manifest: ") + e.what());
    }

    if (m.rater_count < 1) throw Error(Errc::parse_error, "rater_count must be >= 1");
    std::unordered_set<std::string> ids;
    for (const auto& c : m.cases) {
        if (!ids.insert(c.case_id).second)
            throw Error(Errc::duplicate_case_id, "case_id \"" + c.case_id + "\" appears twice");
        if (c.prediction_paths.empty())
            throw Error(Errc::parse_error, c.case_id + ": needs at least one prediction path");
        if (static_cast<int>(c.rater_paths.size()) != m.rater_count)
            throw Error(Errc::rater_count_mismatch,
                        c.case_id + ": has " + std::to_string(c.rater_paths.size()) +
                            " rater paths, manifest declares " + std::to_string(m.rater_count));
    }
    return m;
}

[[nodiscard]] inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, path.string() + ": " + e.what());
    }
    return manifest_from_json(j, path.has_parent_path() ? path.parent_path()
                                                        : std::filesystem::path("."));
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
    out << manifest_to_json(m).dump(2) << '\n';
    if (!out) throw Error(Errc::io_failure, "short write to " + path.string());
}

// Loads every volume of one case and checks dims consistency.
[[nodiscard]] inline LoadedCase load_case(const Manifest& m, const CaseRecord& rec,
                                          const ReadOptions& opts = {}) {
    LoadedCase lc;
    lc.record = &rec;
    for (const auto& p : rec.prediction_paths) lc.predictions.push_back(read_volume(m.resolve(p), opts));
    for (const auto& p : rec.rater_paths) lc.raters.push_back(read_volume(m.resolve(p), opts));
    if (!rec.mask_path.empty()) lc.mask = read_volume(m.resolve(rec.mask_path), opts);

    const auto& dims = lc.predictions.front().header.dims;
    auto check = [&](const Volume& v, const char* what) {
        if (v.header.dims != dims)
            throw Error(Errc::dims_mismatch, rec.case_id + ": " + what + " dims differ");
    };
    for (const auto& v : lc.predictions) check(v, "prediction");
    for (const auto& v : lc.raters) check(v, "rater annotation");
    if (lc.has_mask()) check(lc.mask, "mask");
    return lc;
}

} // namespace voxcal
