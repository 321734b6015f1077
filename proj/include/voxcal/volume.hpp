#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxcal/error.hpp"

namespace voxcal {

enum class Dtype : std::uint8_t { float32, uint8 };

[[nodiscard]] constexpr std::size_t dtype_size(Dtype dt) noexcept {
    return dt == Dtype::float32 ? 4 : 1;
}

[[nodiscard]] constexpr std::string_view dtype_name(Dtype dt) noexcept {
    return dt == Dtype::float32 ? "float32" : "uint8";
}

[[nodiscard]] inline std::optional<Dtype> parse_dtype(std::string_view s) noexcept {
    if (s == "float32") return Dtype::float32;
    if (s == "uint8") return Dtype::uint8;
    return std::nullopt;
}

struct VolumeHeader {
    std::array<std::int64_t, 3> dims{0, 0, 0};
    Dtype dtype = Dtype::float32;
    std::array<double, 3> spacing{1.0, 1.0, 1.0}; // mm per voxel

    [[nodiscard]] std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    [[nodiscard]] double spacing_volume() const { return spacing[0] * spacing[1] * spacing[2]; }

    void validate() const {
        for (auto d : dims)
            if (d <= 0) throw Error(Errc::bad_header, "dims must be positive");
        for (auto s : spacing)
            if (!(s > 0.0)) throw Error(Errc::bad_header, "spacing must be strictly positive");
    }

    friend bool operator==(const VolumeHeader&, const VolumeHeader&) = default;
};

// Dense scalar field over a row-major voxel grid. Exactly one payload
// vector is populated, selected by header.dtype. float32 volumes hold
// probabilities in [0,1]; uint8 volumes hold binary annotations.
struct Volume {
    VolumeHeader header;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;

    [[nodiscard]] std::size_t size() const {
        return header.dtype == Dtype::float32 ? f32.size() : u8.size();
    }

    [[nodiscard]] std::span<const float> probabilities() const {
        if (header.dtype != Dtype::float32)
            throw Error(Errc::bad_dtype, "expected a float32 probability volume");
        return f32;
    }

    [[nodiscard]] std::span<const std::uint8_t> labels() const {
        if (header.dtype != Dtype::uint8)
            throw Error(Errc::bad_dtype, "expected a uint8 annotation volume");
        return u8;
    }

    static Volume make_probability(std::array<std::int64_t, 3> dims, std::vector<float> data,
                                   std::array<double, 3> spacing = {1.0, 1.0, 1.0}) {
        Volume v;
        v.header = {dims, Dtype::float32, spacing};
        v.f32 = std::move(data);
        return v;
    }

    static Volume make_annotation(std::array<std::int64_t, 3> dims, std::vector<std::uint8_t> data,
                                  std::array<double, 3> spacing = {1.0, 1.0, 1.0}) {
        Volume v;
        v.header = {dims, Dtype::uint8, spacing};
        v.u8 = std::move(data);
        return v;
    }
};

[[nodiscard]] inline bool bitwise_equal(const Volume& a, const Volume& b) {
    if (a.header != b.header) return false;
    if (a.header.dtype == Dtype::float32) {
        if (a.f32.size() != b.f32.size()) return false;
        return a.f32.empty() ||
               std::memcmp(a.f32.data(), b.f32.data(), a.f32.size() * sizeof(float)) == 0;
    }
    if (a.u8.size() != b.u8.size()) return false;
    return a.u8.empty() || std::memcmp(a.u8.data(), b.u8.data(), a.u8.size()) == 0;
}

// Restricts a volume to the voxels selected by a binary ROI mask, packing
// them into a 1-D volume. Metrics and fits over the result see only the
// region of interest; spacing carries over so physical volumes stay right.
[[nodiscard]] inline Volume apply_roi_mask(const Volume& v, std::span<const std::uint8_t> mask) {
    if (mask.size() != v.size())
        throw Error(Errc::shape_mismatch, "mask length does not match the volume");
    std::int64_t kept = 0;
    for (auto m : mask) kept += m != 0;
    if (kept == 0) throw Error(Errc::empty_input, "ROI mask selects no voxels");
    Volume out;
    out.header = {{kept, 1, 1}, v.header.dtype, v.header.spacing};
    if (v.header.dtype == Dtype::float32) {
        out.f32.reserve(static_cast<std::size_t>(kept));
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i] != 0) out.f32.push_back(v.f32[i]);
    } else {
        out.u8.reserve(static_cast<std::size_t>(kept));
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i] != 0) out.u8.push_back(v.u8[i]);
    }
    return out;
}

struct ReadOptions {
    // Clamp float payloads into [0,1] instead of rejecting; the number of
    // clamped values is reported through clamped_count when set.
    bool clamp = false;
    std::size_t* clamped_count = nullptr;
};

namespace detail {

inline std::filesystem::path sidecar_path(const std::filesystem::path& payload_path) {
    auto p = payload_path;
    p.replace_extension(".json");
    return p;
}

inline void validate_probabilities(std::span<float> values, const ReadOptions& opts) {
    std::size_t clamped = 0;
    for (auto& v : values) {
        if (v >= 0.0f && v <= 1.0f) continue;
        if (!opts.clamp)
            throw Error(Errc::value_out_of_range,
                        "probability value " + std::to_string(v) + " outside [0,1]");
        // NaN compares false above; clamp it to 0 like any low outlier.
        v = v > 1.0f ? 1.0f : 0.0f;
        ++clamped;
    }
    if (opts.clamped_count) *opts.clamped_count += clamped;
}

inline void validate_labels(std::span<const std::uint8_t> values) {
    for (auto v : values)
        if (v > 1)
            throw Error(Errc::non_binary_annotation,
                        "annotation value " + std::to_string(int(v)) + " is not 0 or 1");
}

} // namespace detail

[[nodiscard]] inline nlohmann::json header_to_json(const VolumeHeader& h) {
    return nlohmann::json{{"dims", h.dims},
                          {"dtype", dtype_name(h.dtype)},
                          {"order", "C"},
                          {"spacing", h.spacing}};
}

[[nodiscard]] inline VolumeHeader header_from_json(const nlohmann::json& j) {
    VolumeHeader h;
    try {
        auto dims = j.at("dims").get<std::vector<std::int64_t>>();
        if (dims.size() != 3) throw Error(Errc::bad_header, "dims must have 3 entries");
        std::copy(dims.begin(), dims.end(), h.dims.begin());
        auto dt = parse_dtype(j.at("dtype").get<std::string>());
        if (!dt) throw Error(Errc::bad_dtype, "unsupported dtype: " + j.at("dtype").dump());
        h.dtype = *dt;
        if (j.contains("order") && j.at("order").get<std::string>() != "C")
            throw Error(Errc::bad_header, "only row-major order \"C\" is supported");
        if (j.contains("spacing")) {
            auto sp = j.at("spacing").get<std::vector<double>>();
            if (sp.size() != 3) throw Error(Errc::bad_header, "spacing must have 3 entries");
            std::copy(sp.begin(), sp.end(), h.spacing.begin());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, std::string("volume header: ") + e.what());
    }
    h.validate();
    return h;
}

// Reads `<stem>.raw` + `<stem>.json`. The payload is little-endian
// row-major; float32 volumes are validated as probabilities, uint8
// volumes as binary annotations.
[[nodiscard]] inline Volume read_volume(const std::filesystem::path& path,
                                        const ReadOptions& opts = {}) {
    auto header_path = detail::sidecar_path(path);
    std::error_code ec;
    if (!std::filesystem::exists(header_path, ec))
        throw Error(Errc::missing_header, "no sidecar header at " + header_path.string());

    nlohmann::json j;
    {
        std::ifstream in(header_path);
        if (!in) throw Error(Errc::io_failure, "cannot open " + header_path.string());
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::parse_error, header_path.string() + ": " + e.what());
        }
    }
    Volume v;
    v.header = header_from_json(j);

    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
    in.seekg(0, std::ios::end);
    auto bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::size_t expected = v.header.voxel_count() * dtype_size(v.header.dtype);
    if (bytes != expected)
        throw Error(Errc::size_mismatch, path.string() + ": payload has " + std::to_string(bytes) +
                                             " bytes, header implies " + std::to_string(expected));

    std::vector<unsigned char> raw(bytes);
    if (bytes > 0 && !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes)))
        throw Error(Errc::io_failure, "short read from " + path.string());

    std::size_t n = v.header.voxel_count();
    if (v.header.dtype == Dtype::float32) {
        v.f32.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u = static_cast<std::uint32_t>(raw[4 * i]) |
                              (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
            v.f32[i] = std::bit_cast<float>(u);
        }
        detail::validate_probabilities(v.f32, opts);
    } else {
        v.u8.assign(raw.begin(), raw.end());
        detail::validate_labels(v.u8);
    }
    return v;
}

// Writes `<stem>.raw` + `<stem>.json`; read_volume inverts it bit-exactly.
inline void write_volume(const Volume& v, const std::filesystem::path& path) {
    v.header.validate();
    std::size_t n = v.header.voxel_count();
    if (v.size() != n)
        throw Error(Errc::size_mismatch, "payload has " + std::to_string(v.size()) +
                                             " elements, dims imply " + std::to_string(n));
    if (v.header.dtype == Dtype::float32) {
        for (auto x : v.f32)
            if (!(x >= 0.0f && x <= 1.0f))
                throw Error(Errc::value_out_of_range,
                            "probability value " + std::to_string(x) + " outside [0,1]");
    } else {
        detail::validate_labels(v.u8);
    }

    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
        if (v.header.dtype == Dtype::float32) {
            std::vector<unsigned char> raw(n * 4);
            for (std::size_t i = 0; i < n; ++i) {
                auto u = std::bit_cast<std::uint32_t>(v.f32[i]);
                raw[4 * i] = static_cast<unsigned char>(u & 0xff);
                raw[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
                raw[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
                raw[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
            }
            out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        } else {
            out.write(reinterpret_cast<const char*>(v.u8.data()), static_cast<std::streamsize>(n));
        }
        if (!out) throw Error(Errc::io_failure, "short write to " + path.string());
    }
    std::ofstream hout(detail::sidecar_path(path), std::ios::trunc);
    if (!hout) throw Error(Errc::io_failure, "cannot write " + detail::sidecar_path(path).string());
    hout << header_to_json(v.header).dump(2) << '\n';
    if (!hout) throw Error(Errc::io_failure, "short write to " + detail::sidecar_path(path).string());
}

} // namespace voxcal
