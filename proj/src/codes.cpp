#include "dpq/codes.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dpq {

namespace {

void put_u32le(std::ostream& out, std::uint32_t v) {
  std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16),
                       std::uint8_t(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& in, const char* what) {
  std::uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(std::string("code file: truncated ") + what);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

}  // namespace

PackedCode pack_code(std::span<const AssignmentIndex> indices, unsigned bits_per_layer) {
  if (bits_per_layer == 0 || bits_per_layer > 32)
    throw std::invalid_argument("pack_code: bits_per_layer must be in [1, 32]");
  const std::uint64_t limit = std::uint64_t(1) << bits_per_layer;

  PackedCode code;
  code.layers = static_cast<std::uint32_t>(indices.size());
  code.bits_per_layer = bits_per_layer;
  code.bytes.assign(code.byte_size(), 0);

  std::size_t pos = 0;
  for (AssignmentIndex idx : indices) {
    if (idx >= limit)
      throw std::out_of_range("pack_code: index does not fit in bits_per_layer bits");
    for (unsigned b = bits_per_layer; b-- > 0; ++pos) {
      if ((idx >> b) & 1u) code.bytes[pos >> 3] |= std::uint8_t(0x80u >> (pos & 7));
    }
  }
  return code;
}

std::vector<AssignmentIndex> unpack_code(const PackedCode& code, unsigned layers,
                                         unsigned bits_per_layer) {
  if (bits_per_layer == 0 || bits_per_layer > 32)
    throw std::invalid_argument("unpack_code: bits_per_layer must be in [1, 32]");
  const std::size_t need_bits = std::size_t(layers) * bits_per_layer;
  if (code.bytes.size() * 8 < need_bits)
    throw std::length_error("unpack_code: truncated code");

  std::vector<AssignmentIndex> indices(layers);
  std::size_t pos = 0;
  for (unsigned l = 0; l < layers; ++l) {
    AssignmentIndex idx = 0;
    for (unsigned b = 0; b < bits_per_layer; ++b, ++pos) {
      idx = (idx << 1) | ((code.bytes[pos >> 3] >> (7 - (pos & 7))) & 1u);
    }
    indices[l] = idx;
  }
  return indices;
}

PackedCode prefix_code(const PackedCode& code, unsigned layer_count, unsigned bits_per_layer) {
  if (layer_count < 1 || layer_count > code.layers)
    throw std::out_of_range("prefix_code: layer count out of range");
  if (bits_per_layer != code.bits_per_layer)
    throw std::invalid_argument("prefix_code: bits_per_layer mismatch");

  PackedCode out;
  out.layers = layer_count;
  out.bits_per_layer = bits_per_layer;
  const std::size_t bits = out.total_bits();
  out.bytes.assign(code.bytes.begin(), code.bytes.begin() + std::ptrdiff_t((bits + 7) / 8));
  // Zero the padding bits so the prefix is bit-identical to packing l indices.
  if (bits % 8 != 0) out.bytes.back() &= std::uint8_t(0xFF << (8 - bits % 8));
  return out;
}

unsigned bits_for_codebook_size(std::size_t k) {
  if (k < 2 || (k & (k - 1)) != 0)
    throw std::invalid_argument("codebook size must be a power of two >= 2 for bit packing");
  unsigned m = 0;
  while ((std::size_t(1) << m) < k) ++m;
  return m;
}

void write_codes(std::ostream& out, std::span<const PackedCode> codes, std::uint32_t layers,
                 std::uint32_t bits_per_layer) {
  out.write("PQC1", 4);
  put_u32le(out, static_cast<std::uint32_t>(codes.size()));
  put_u32le(out, layers);
  put_u32le(out, bits_per_layer);
  const std::size_t rec = (std::size_t(layers) * bits_per_layer + 7) / 8;
  for (const PackedCode& c : codes) {
    if (c.layers != layers || c.bits_per_layer != bits_per_layer || c.bytes.size() != rec)
      throw std::invalid_argument("write_codes: code does not match file dimensions");
    out.write(reinterpret_cast<const char*>(c.bytes.data()), std::streamsize(rec));
  }
  if (!out) throw std::runtime_error("write_codes: write failed");
}

CodeFile read_codes(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PQC1", 4) != 0)
    throw std::runtime_error("code file: bad magic, expected PQC1");
  CodeFile file;
  const std::uint32_t n = get_u32le(in, "record count");
  file.layers = get_u32le(in, "layer count");
  file.bits_per_layer = get_u32le(in, "bits per layer");
  if (file.bits_per_layer == 0 || file.bits_per_layer > 32)
    throw std::runtime_error("code file: bits per layer out of range");
  const std::size_t rec = (std::size_t(file.layers) * file.bits_per_layer + 7) / 8;
  file.codes.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    PackedCode& c = file.codes[i];
    c.layers = file.layers;
    c.bits_per_layer = file.bits_per_layer;
    c.bytes.resize(rec);
    if (!in.read(reinterpret_cast<char*>(c.bytes.data()), std::streamsize(rec)))
      throw std::runtime_error("code file: truncated at record " + std::to_string(i));
  }
  return file;
}

void write_code_file(const std::filesystem::path& path, std::span<const PackedCode> codes,
                     std::uint32_t layers, std::uint32_t bits_per_layer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  write_codes(out, codes, layers, bits_per_layer);
}

CodeFile read_code_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  return read_codes(in);
}

}  // namespace dpq
