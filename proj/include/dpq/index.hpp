#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "dpq/codes.hpp"
#include "dpq/model.hpp"

namespace dpq {

/// One feature vector pushed through the hard residual cascade.
struct EncodedPoint {
  PackedCode code;
  /// cross_terms[l-1] = sum over ordered pairs l1 != l2 <= l of
  /// <c^{l1}(e_{l1}), c^{l2}(e_{l2})>; cross_terms[0] == 0.
  Vec cross_terms;
};

/// All database codes plus the per-point, per-prefix cross-term cache, so any
/// code length 1..L is searchable without touching the original vectors.
struct EncodedDatabase {
  std::vector<PackedCode> codes;
  Matrix cross_terms;  // N x L, column l-1 = prefix length l
  std::uint32_t layers = 0;
  std::uint32_t bits_per_layer = 0;
  std::uint64_t model_ref = 0;  // digest of the model that produced the codes

  std::size_t size() const { return codes.size(); }
};

/// Hard-assign x (projected first when the model has a head) through the
/// residual cascade with Euclidean argmin, independent of the training metric.
EncodedPoint encode_point(ConstSpan x, const ProgressiveModel& model);

/// Sum of the first l selected codewords.
Vec decode(const PackedCode& code, const ProgressiveModel& model, std::size_t l);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Element-wise encode_point over the rows of `features`. Output order always
/// matches input order; `threads` <= 1 is the single-threaded reference.
EncodedDatabase encode_database(const Matrix& features, const ProgressiveModel& model,
                                int threads = 1, const ProgressFn& progress = nullptr);

/// Digest over everything that determines codes: dims, codebooks, and the
/// projection head when present. Search refuses a database whose model_ref
/// does not match the model presented at query time.
std::uint64_t model_digest(const ProgressiveModel& model);

/// Database file: the code block ("PQC1" ...), zero-padded to an 8-byte
/// boundary, then N*L little-endian float32 cross-terms, then the uint64
/// model digest.
void write_database(std::ostream& out, const EncodedDatabase& db);
EncodedDatabase read_database(std::istream& in);
void write_database_file(const std::filesystem::path& path, const EncodedDatabase& db);
EncodedDatabase read_database_file(const std::filesystem::path& path);

}  // namespace dpq
