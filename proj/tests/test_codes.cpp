#include "doctest.h"

#include "dpq/codes.hpp"

#include <cstdint>
#include <random>
#include <sstream>
#include <vector>

using dpq::AssignmentIndex;
using dpq::PackedCode;

TEST_CASE("pack: one byte per layer when m=8") {
    std::vector<AssignmentIndex> idx = {1, 2, 3, 4};
    PackedCode code = dpq::pack_code(idx, 8);
    CHECK(code.layers == 4);
    CHECK(code.bits_per_layer == 8);
    CHECK(code.total_bits() == 32);
    CHECK(code.byte_size() == 4);
    REQUIRE(code.bytes.size() == 4);
    CHECK(code.bytes[0] == 0x01);
    CHECK(code.bytes[1] == 0x02);
    CHECK(code.bytes[2] == 0x03);
    CHECK(code.bytes[3] == 0x04);
}

TEST_CASE("pack: all-zero indices give all-zero bytes") {
    std::vector<AssignmentIndex> idx = {0, 0, 0, 0};
    PackedCode code = dpq::pack_code(idx, 8);
    for (uint8_t b : code.bytes) CHECK(b == 0);
}

TEST_CASE("pack: non-byte-aligned m pads the final byte with zeros") {
    // m=3, L=3 -> 9 bits -> 2 bytes. Indices 0b101, 0b011, 0b110.
    std::vector<AssignmentIndex> idx = {5, 3, 6};
    PackedCode code = dpq::pack_code(idx, 3);
    CHECK(code.total_bits() == 9);
    REQUIRE(code.bytes.size() == 2);
    // Bitstream MSB-first: 101 011 110 -> 10101111 0.......
    CHECK(code.bytes[0] == 0xAF);
    CHECK(code.bytes[1] == 0x00);
}

TEST_CASE("pack: index out of field range throws") {
    std::vector<AssignmentIndex> idx = {4};
    CHECK_THROWS_AS((void)dpq::pack_code(idx, 2), std::out_of_range);
    idx[0] = 3;
    CHECK_NOTHROW((void)dpq::pack_code(idx, 2));
}

TEST_CASE("unpack: inverse of pack on fixed bytes") {
    PackedCode code;
    code.layers = 4;
    code.bits_per_layer = 8;
    code.bytes = {0x01, 0x02, 0x03, 0x04};
    auto idx = dpq::unpack_code(code, 4, 8);
    REQUIRE(idx.size() == 4);
    CHECK(idx[0] == 1);
    CHECK(idx[1] == 2);
    CHECK(idx[2] == 3);
    CHECK(idx[3] == 4);

    PackedCode one;
    one.layers = 1;
    one.bits_per_layer = 8;
    one.bytes = {0xFF};
    auto single = dpq::unpack_code(one, 1, 8);
    REQUIRE(single.size() == 1);
    CHECK(single[0] == 255);
}

TEST_CASE("unpack: truncated byte buffer throws") {
    PackedCode code;
    code.layers = 4;
    code.bits_per_layer = 8;
    code.bytes = {0x01, 0x02};  // needs 4 bytes
    CHECK_THROWS_AS((void)dpq::unpack_code(code, 4, 8), std::length_error);
}

TEST_CASE("pack/unpack roundtrip over random indices and field widths") {
    std::mt19937_64 rng(12345);
    for (int trial = 0; trial < 200; ++trial) {
        unsigned m = 1 + static_cast<unsigned>(rng() % 16);
        size_t layers = 1 + rng() % 8;
        std::vector<AssignmentIndex> idx(layers);
        for (auto& v : idx)
            v = static_cast<AssignmentIndex>(rng() & ((1ull << m) - 1));
        PackedCode code = dpq::pack_code(idx, m);
        auto back = dpq::unpack_code(code, layers, m);
        REQUIRE(back.size() == idx.size());
        for (size_t i = 0; i < idx.size(); ++i) CHECK(back[i] == idx[i]);
    }
}

TEST_CASE("unpack: decoded indices always fit the field width") {
    std::mt19937_64 rng(777);
    for (int trial = 0; trial < 100; ++trial) {
        unsigned m = 1 + static_cast<unsigned>(rng() % 12);
        size_t layers = 1 + rng() % 6;
        PackedCode code;
        code.layers = layers;
        code.bits_per_layer = m;
        code.bytes.resize((layers * m + 7) / 8);
        for (auto& b : code.bytes) b = static_cast<uint8_t>(rng());
        auto idx = dpq::unpack_code(code, layers, m);
        for (auto v : idx) CHECK(v < (1u << m));
    }
}

TEST_CASE("prefix: truncation equals packing the leading indices") {
    std::vector<AssignmentIndex> idx = {7, 9, 2, 4};
    PackedCode full = dpq::pack_code(idx, 4);

    PackedCode p1 = dpq::prefix_code(full, 1, 4);
    PackedCode want1 = dpq::pack_code(std::vector<AssignmentIndex>{7}, 4);
    CHECK(p1 == want1);

    PackedCode p4 = dpq::prefix_code(full, 4, 4);
    CHECK(p4 == full);

    SUBCASE("random widths keep the prefix property") {
        std::mt19937_64 rng(4242);
        for (int trial = 0; trial < 200; ++trial) {
            unsigned m = 1 + static_cast<unsigned>(rng() % 10);
            size_t layers = 1 + rng() % 8;
            std::vector<AssignmentIndex> all(layers);
            for (auto& v : all)
                v = static_cast<AssignmentIndex>(rng() & ((1ull << m) - 1));
            PackedCode code = dpq::pack_code(all, m);
            size_t l = 1 + rng() % layers;
            PackedCode got = dpq::prefix_code(code, l, m);
            std::vector<AssignmentIndex> head(all.begin(), all.begin() + l);
            PackedCode want = dpq::pack_code(head, m);
            CHECK(got == want);
        }
    }
}

TEST_CASE("prefix: layer count out of range throws") {
    PackedCode code = dpq::pack_code(std::vector<AssignmentIndex>{1, 2}, 4);
    CHECK_THROWS_AS((void)dpq::prefix_code(code, 0, 4), std::out_of_range);
    CHECK_THROWS_AS((void)dpq::prefix_code(code, 3, 4), std::out_of_range);
}

TEST_CASE("bits_for_codebook_size: exact log2 for powers of two") {
    CHECK(dpq::bits_for_codebook_size(2) == 1);
    CHECK(dpq::bits_for_codebook_size(16) == 4);
    CHECK(dpq::bits_for_codebook_size(256) == 8);
    CHECK_THROWS_AS((void)dpq::bits_for_codebook_size(3), std::invalid_argument);
    CHECK_THROWS_AS((void)dpq::bits_for_codebook_size(0), std::invalid_argument);
}

TEST_CASE("code file: header bytes are exactly as documented") {
    dpq::CodeFile file;
    file.layers = 2;
    file.bits_per_layer = 4;
    file.codes = {dpq::pack_code(std::vector<AssignmentIndex>{3, 5}, 4)};
    std::ostringstream out(std::ios::binary);
    dpq::write_codes(out, file);
    std::string raw = out.str();
    // magic "PQC1", then N=1, L=2, m=4 little-endian, then one record 0x35.
    REQUIRE(raw.size() == 4 + 12 + 1);
    CHECK(raw.substr(0, 4) == "PQC1");
    const auto u8 = [&](size_t i) { return static_cast<uint8_t>(raw[i]); };
    CHECK(u8(4) == 1);  // N lo byte
    CHECK(u8(5) == 0);
    CHECK(u8(6) == 0);
    CHECK(u8(7) == 0);
    CHECK(u8(8) == 2);  // L
    CHECK(u8(12) == 4);  // m
    CHECK(u8(16) == 0x35);
}

TEST_CASE("code file: roundtrip preserves every record") {
    std::mt19937_64 rng(99);
    dpq::CodeFile file;
    file.layers = 4;
    file.bits_per_layer = 6;
    for (int i = 0; i < 50; ++i) {
        std::vector<AssignmentIndex> idx(4);
        for (auto& v : idx) v = static_cast<AssignmentIndex>(rng() % 64);
        file.codes.push_back(dpq::pack_code(idx, 6));
    }
    std::ostringstream out(std::ios::binary);
    dpq::write_codes(out, file);
    std::istringstream in(out.str(), std::ios::binary);
    dpq::CodeFile back = dpq::read_codes(in);
    CHECK(back.layers == file.layers);
    CHECK(back.bits_per_layer == file.bits_per_layer);
    REQUIRE(back.codes.size() == file.codes.size());
    for (size_t i = 0; i < file.codes.size(); ++i)
        CHECK(back.codes[i] == file.codes[i]);
}

TEST_CASE("code file: bad magic and truncation are reported") {
    dpq::CodeFile file;
    file.layers = 1;
    file.bits_per_layer = 8;
    file.codes = {dpq::pack_code(std::vector<AssignmentIndex>{9}, 8)};
    std::ostringstream out(std::ios::binary);
    dpq::write_codes(out, file);
    std::string raw = out.str();

    SUBCASE("bad magic") {
        std::string bad = raw;
        bad[0] = 'X';
        std::istringstream in(bad, std::ios::binary);
        CHECK_THROWS_AS((void)dpq::read_codes(in), std::runtime_error);
    }
    SUBCASE("truncated record section") {
        std::string bad = raw.substr(0, raw.size() - 1);
        std::istringstream in(bad, std::ios::binary);
        CHECK_THROWS_AS((void)dpq::read_codes(in), std::runtime_error);
    }
    SUBCASE("truncated header") {
        std::string bad = raw.substr(0, 7);
        std::istringstream in(bad, std::ios::binary);
        CHECK_THROWS_AS((void)dpq::read_codes(in), std::runtime_error);
    }
}
