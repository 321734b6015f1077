#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <fstream>

#include "voxcal/manifest.hpp"
#include "voxcal/rng.hpp"
#include "voxcal/volume.hpp"

#include "test_support.hpp"

using namespace voxcal;

namespace {
const std::filesystem::path kGolden = VOXCAL_TEST_DATA_DIR;
}

TEST_CASE("uint8 payload round-trips through the raw format") {
    auto dir = testsup::fresh_dir("vol_u8");
    Volume v = Volume::make_annotation({2, 2, 1}, {1, 0, 0, 1});
    write_volume(v, dir / "a.raw");
    Volume r = read_volume(dir / "a.raw");
    REQUIRE(r.u8 == std::vector<std::uint8_t>{1, 0, 0, 1});
    REQUIRE(r.header == v.header);
}

TEST_CASE("random float volume round-trips bitwise") {
    auto dir = testsup::fresh_dir("vol_f32");
    rng::Engine eng(7);
    std::vector<float> data(3 * 4 * 5);
    for (auto& x : data) x = static_cast<float>(rng::uniform01(eng));
    Volume v = Volume::make_probability({3, 4, 5}, data, {0.7, 1.1, 2.0});
    write_volume(v, dir / "b.raw");
    REQUIRE(bitwise_equal(read_volume(dir / "b.raw"), v));
}

TEST_CASE("golden little-endian fixture decodes to known values") {
    Volume f = read_volume(kGolden / "tiny_f32.raw");
    REQUIRE(f.f32 == std::vector<float>{0.0f, 0.5f, 1.0f, 0.25f});
    Volume u = read_volume(kGolden / "tiny_u8.raw");
    REQUIRE(u.u8 == std::vector<std::uint8_t>{1, 0, 0, 1});
    REQUIRE(u.header.spacing[0] == 2.0);
}

TEST_CASE("written payloads are little-endian on this platform") {
    auto dir = testsup::fresh_dir("vol_le");
    write_volume(Volume::make_probability({1, 1, 1}, {0.5f}), dir / "le.raw");
    std::ifstream in(dir / "le.raw", std::ios::binary);
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    REQUIRE(bytes[0] == 0x00);
    REQUIRE(bytes[1] == 0x00);
    REQUIRE(bytes[2] == 0x00);
    REQUIRE(bytes[3] == 0x3f);
}

TEST_CASE("payload size mismatch is rejected") {
    auto dir = testsup::fresh_dir("vol_sz");
    std::ofstream(dir / "c.raw", std::ios::binary) << "abc";
    std::ofstream(dir / "c.json") << R"({"dims":[2,2,1],"dtype":"uint8","order":"C"})";
    try {
        (void)read_volume(dir / "c.raw");
        FAIL("expected size_mismatch");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::size_mismatch);
    }
}

TEST_CASE("missing sidecar header is rejected") {
    auto dir = testsup::fresh_dir("vol_mh");
    std::ofstream(dir / "d.raw", std::ios::binary) << "abcd";
    try {
        (void)read_volume(dir / "d.raw");
        FAIL("expected missing_header");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::missing_header);
    }
}

TEST_CASE("unknown dtype and zero dims are rejected") {
    auto dir = testsup::fresh_dir("vol_bad");
    std::ofstream(dir / "e.raw", std::ios::binary) << "";
    std::ofstream(dir / "e.json") << R"({"dims":[2,2,1],"dtype":"int64","order":"C"})";
    try {
        (void)read_volume(dir / "e.raw");
        FAIL("expected bad_dtype");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::bad_dtype);
    }

    Volume bad = Volume::make_probability({0, 2, 2}, {});
    try {
        write_volume(bad, dir / "f.raw");
        FAIL("expected bad_header");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::bad_header);
    }
}

TEST_CASE("probability volumes reject values outside [0,1]") {
    auto dir = testsup::fresh_dir("vol_rng");
    Volume nanv = Volume::make_probability({1, 1, 1}, {std::nanf("")});
    try {
        write_volume(nanv, dir / "g.raw");
        FAIL("expected value_out_of_range");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::value_out_of_range);
    }

    // Bypass write validation to exercise the read path.
    write_volume(Volume::make_probability({1, 1, 1}, {0.25f}), dir / "h.raw");
    {
        std::ofstream out(dir / "h.raw", std::ios::binary | std::ios::trunc);
        float v = 1.5f;
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    REQUIRE_THROWS_AS((void)read_volume(dir / "h.raw"), Error);

    std::size_t clamped = 0;
    ReadOptions opts;
    opts.clamp = true;
    opts.clamped_count = &clamped;
    Volume fixed = read_volume(dir / "h.raw", opts);
    REQUIRE(clamped == 1);
    REQUIRE(fixed.f32[0] == 1.0f);
}

TEST_CASE("annotations accept only 0 and 1") {
    auto dir = testsup::fresh_dir("vol_ann");
    Volume v = Volume::make_annotation({1, 1, 1}, {2});
    try {
        write_volume(v, dir / "i.raw");
        FAIL("expected non_binary_annotation");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::non_binary_annotation);
    }
}

TEST_CASE("manifest loads and enforces cross-case invariants") {
    auto dir = testsup::fresh_dir("manifest");
    Manifest m;
    m.rater_count = 5;
    for (int c = 0; c < 2; ++c) {
        CaseRecord rec;
        rec.case_id = "case_" + std::to_string(c);
        rec.prediction_paths = {"p" + std::to_string(c) + ".raw"};
        for (int i = 0; i < 5; ++i) rec.rater_paths.push_back("r.raw");
        rec.split = c == 0 ? Split::calibration : Split::test;
        m.cases.push_back(rec);
    }
    save_manifest(m, dir / "m.json");
    Manifest loaded = load_manifest(dir / "m.json");
    REQUIRE(loaded.rater_count == 5);
    REQUIRE(loaded.cases.size() == 2);
    REQUIRE(loaded.split_cases(Split::test).size() == 1);

    SECTION("rater count mismatch") {
        m.cases[1].rater_paths.pop_back();
        save_manifest(m, dir / "bad1.json");
        try {
            (void)load_manifest(dir / "bad1.json");
            FAIL("expected rater_count_mismatch");
        } catch (const Error& e) {
            REQUIRE(e.code() == Errc::rater_count_mismatch);
        }
    }
    SECTION("duplicate case id") {
        m.cases[1].case_id = m.cases[0].case_id;
        save_manifest(m, dir / "bad2.json");
        try {
            (void)load_manifest(dir / "bad2.json");
            FAIL("expected duplicate_case_id");
        } catch (const Error& e) {
            REQUIRE(e.code() == Errc::duplicate_case_id);
        }
    }
    SECTION("parse error") {
        std::ofstream(dir / "bad3.json") << "{not json";
        try {
            (void)load_manifest(dir / "bad3.json");
            FAIL("expected parse_error");
        } catch (const Error& e) {
            REQUIRE(e.code() == Errc::parse_error);
        }
    }
}

TEST_CASE("load_case checks dims across volumes") {
    auto dir = testsup::fresh_dir("loadcase");
    write_volume(Volume::make_probability({2, 2, 1}, {0.1f, 0.2f, 0.3f, 0.4f}), dir / "p.raw");
    write_volume(Volume::make_annotation({2, 2, 1}, {0, 1, 0, 1}), dir / "r0.raw");
    write_volume(Volume::make_annotation({1, 2, 1}, {0, 1}), dir / "r1.raw");

    Manifest m;
    m.base_dir = dir;
    m.rater_count = 2;
    CaseRecord rec;
    rec.case_id = "k";
    rec.prediction_paths = {"p.raw"};
    rec.rater_paths = {"r0.raw", "r1.raw"};
    m.cases.push_back(rec);
    try {
        (void)load_case(m, m.cases[0]);
        FAIL("expected dims_mismatch");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::dims_mismatch);
    }
}
