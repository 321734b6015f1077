#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxcal {

// Error codes mirror the failure modes of the public API so callers and
// tests can match on the condition rather than parsing message text.
enum class Errc {
    missing_header,
    bad_header,
    bad_dtype,
    size_mismatch,
    value_out_of_range,
    io_failure,
    parse_error,
    duplicate_case_id,
    rater_count_mismatch,
    dims_mismatch,
    shape_mismatch,
    too_few_voxels,
    empty_input,
    nonpositive_weight,
    length_mismatch,
    out_of_range,
    rater_index_out_of_range,
    non_binary_annotation,
    empty_thresholds,
    negative_sigma,
    empty_split,
    non_invertible_distortion,
    invalid_argument,
};

[[nodiscard]] constexpr std::string_view errc_name(Errc c) noexcept {
    switch (c) {
        case Errc::missing_header:            return "missing_header";
        case Errc::bad_header:                return "bad_header";
        case Errc::bad_dtype:                 return "bad_dtype";
        case Errc::size_mismatch:             return "size_mismatch";
        case Errc::value_out_of_range:        return "value_out_of_range";
        case Errc::io_failure:                return "io_failure";
        case Errc::parse_error:               return "parse_error";
        case Errc::duplicate_case_id:         return "duplicate_case_id";
        case Errc::rater_count_mismatch:      return "rater_count_mismatch";
        case Errc::dims_mismatch:             return "dims_mismatch";
        case Errc::shape_mismatch:            return "shape_mismatch";
        case Errc::too_few_voxels:            return "too_few_voxels";
        case Errc::empty_input:               return "empty_input";
        case Errc::nonpositive_weight:        return "nonpositive_weight";
        case Errc::length_mismatch:           return "length_mismatch";
        case Errc::out_of_range:              return "out_of_range";
        case Errc::rater_index_out_of_range:  return "rater_index_out_of_range";
        case Errc::non_binary_annotation:     return "non_binary_annotation";
        case Errc::empty_thresholds:          return "empty_thresholds";
        case Errc::negative_sigma:            return "negative_sigma";
        case Errc::empty_split:               return "empty_split";
        case Errc::non_invertible_distortion: return "non_invertible_distortion";
        case Errc::invalid_argument:          return "invalid_argument";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    [[nodiscard]] Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace voxcal
