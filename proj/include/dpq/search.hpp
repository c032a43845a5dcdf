#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dpq/index.hpp"
#include "dpq/model.hpp"
#include "dpq/supervised.hpp"

namespace dpq {

/// Per-query lookup tables for the asymmetric quantization distance
///   ||q - sum_{l<=l_active} c^l||^2
///     = sum_l ||q - c^l||^2 - (l_active - 1) ||q||^2 + cross_term.
struct SearchTables {
  std::vector<Vec> first_term;  // first_term[l][k] = ||q - c^l(k)||^2
  double q_norm_term = 0.0;     // (l_active - 1) * ||q||^2
  std::size_t l_active = 0;
};

/// Exact squared query-to-codeword distances for the first l layers. Queries
/// pass through the projection head when the model has one; they are never
/// quantized.
SearchTables build_tables(ConstSpan query, const ProgressiveModel& model, std::size_t l);

/// Table-based distance to one code, using the cross term cached for the same
/// prefix length the tables were built at.
double aqd(const SearchTables& tables, const PackedCode& code, double cross_term);

struct RetrievalResult {
  std::vector<std::uint32_t> ids;  // ascending (distance, id)
  Vec distances;
  std::size_t k_requested = 0;
  std::size_t l_active = 0;
  bool k_clamped = false;  // k exceeded the database size
};

/// Exact top-k under AQD at prefix length l, scanning all codes through the
/// tables with a bounded selection heap. Ties break toward the smaller id.
RetrievalResult topk(ConstSpan query, const EncodedDatabase& db, const ProgressiveModel& model,
                     std::size_t k, std::size_t l);

/// Relevance of database item `id` to query number `query`.
using RelevanceFn = std::function<bool(std::size_t query, std::uint32_t id)>;

/// Nonempty intersection of positive labels; single-label annotations reduce
/// this to equality.
bool labels_match(const LabelAnnotation& a, const LabelAnnotation& b);

/// Average precision of one ranking at cutoff R. The normalizer is
/// min(#relevant in the database, R); zero relevant items give 0.
double average_precision(const RetrievalResult& result,
                         const std::function<bool(std::uint32_t)>& relevant, std::size_t r_cutoff,
                         std::size_t db_size);

/// Mean over queries of average_precision; zero-relevant queries count as 0.
double mean_average_precision(std::span<const RetrievalResult> results,
                              const RelevanceFn& relevant, std::size_t r_cutoff,
                              std::size_t db_size);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// Mean precision/recall over queries at every rank where the mean recall
/// increases. Queries with no relevant items contribute recall 0 everywhere,
/// so an all-irrelevant result set yields an empty curve.
std::vector<PrPoint> precision_recall_curve(std::span<const RetrievalResult> results,
                                            const RelevanceFn& relevant, std::size_t db_size);

/// Mean precision within the top R for each requested R; short rankings count
/// the missing tail as irrelevant.
Vec precision_at_R(std::span<const RetrievalResult> results, const RelevanceFn& relevant,
                   std::span<const std::size_t> r_values);

}  // namespace dpq
