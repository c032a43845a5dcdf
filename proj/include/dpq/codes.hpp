#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace dpq {

/// Zero-based codeword index within one codebook.
using AssignmentIndex = std::uint32_t;

/// Binary code of `layers` fields of `bits_per_layer` bits each, packed
/// big-endian within each field, layer 1 first, final byte zero-padded.
/// The first l*m bits are themselves the valid l-layer code.
struct PackedCode {
  std::vector<std::uint8_t> bytes;
  std::uint32_t layers = 0;
  std::uint32_t bits_per_layer = 0;

  std::size_t total_bits() const { return std::size_t(layers) * bits_per_layer; }
  std::size_t byte_size() const { return (total_bits() + 7) / 8; }

  bool operator==(const PackedCode& o) const = default;
};

PackedCode pack_code(std::span<const AssignmentIndex> indices, unsigned bits_per_layer);

std::vector<AssignmentIndex> unpack_code(const PackedCode& code, unsigned layers,
                                         unsigned bits_per_layer);

PackedCode prefix_code(const PackedCode& code, unsigned layer_count, unsigned bits_per_layer);

/// log2(K) for exact powers of two, with m >= 1; throws otherwise.
unsigned bits_for_codebook_size(std::size_t k);

/// Code file: magic "PQC1", little-endian uint32 N, L, m, then N records of
/// ceil(L*m/8) bytes each.
struct CodeFile {
  std::uint32_t layers = 0;
  std::uint32_t bits_per_layer = 0;
  std::vector<PackedCode> codes;
};

void write_codes(std::ostream& out, std::span<const PackedCode> codes, std::uint32_t layers,
                 std::uint32_t bits_per_layer);
CodeFile read_codes(std::istream& in);

void write_code_file(const std::filesystem::path& path, std::span<const PackedCode> codes,
                     std::uint32_t layers, std::uint32_t bits_per_layer);
CodeFile read_code_file(const std::filesystem::path& path);

inline void write_codes(std::ostream& out, const CodeFile& file) {
  write_codes(out, file.codes, file.layers, file.bits_per_layer);
}
inline void write_code_file(const std::filesystem::path& path, const CodeFile& file) {
  write_code_file(path, file.codes, file.layers, file.bits_per_layer);
}

}  // namespace dpq
