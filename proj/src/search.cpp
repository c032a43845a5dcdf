#include "dpq/search.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>

namespace dpq {

namespace {

std::size_t count_relevant(const std::function<bool(std::uint32_t)>& relevant,
                           std::size_t db_size) {
  std::size_t total = 0;
  for (std::uint32_t id = 0; id < db_size; ++id)
    if (relevant(id)) ++total;
  return total;
}

}  // namespace

SearchTables build_tables(ConstSpan query, const ProgressiveModel& model, std::size_t l) {
  const std::size_t want = model.has_head ? model.head.feature_dim() : model.code_dim();
  require(query.size() == want, "search: query dimension does not match the model");
  require(l >= 1 && l <= model.layer_count(), "search: prefix length out of range");

  const Vec q = model.qblock_input(query);
  SearchTables tables;
  tables.l_active = l;
  tables.q_norm_term = static_cast<double>(l - 1) * squared_norm(q);
  tables.first_term.resize(l);
  for (std::size_t li = 0; li < l; ++li) {
    const Codebook& cb = model.codebooks[li];
    Vec& table = tables.first_term[li];
    table.resize(cb.size());
    for (std::size_t k = 0; k < cb.size(); ++k)
      table[k] = squared_distance(q, cb.codeword(k));
  }
  return tables;
}

double aqd(const SearchTables& tables, const PackedCode& code, double cross_term) {
  const std::size_t l = tables.l_active;
  require(l >= 1 && code.layers >= l, "aqd: code shorter than the active prefix");
  const std::vector<AssignmentIndex> indices =
      unpack_code(code, code.layers, code.bits_per_layer);
  double sum = 0.0;
  for (std::size_t li = 0; li < l; ++li) {
    const Vec& table = tables.first_term[li];
    require(indices[li] < table.size(), "aqd: code index out of table range");
    sum += table[indices[li]];
  }
  return sum - tables.q_norm_term + cross_term;
}

RetrievalResult topk(ConstSpan query, const EncodedDatabase& db, const ProgressiveModel& model,
                     std::size_t k, std::size_t l) {
  require(k >= 1, "search: k must be at least 1");
  require(db.size() >= 1, "search: empty database");
  require(l >= 1 && l <= db.layers, "search: prefix length out of range for the database");
  require(db.model_ref == model_digest(model),
          "search: database was encoded by a different model");

  const SearchTables tables = build_tables(query, model, l);
  const std::size_t n = db.size();
  const std::size_t keep = std::min(k, n);

  // Max-heap of the best `keep` candidates; top = current worst.
  using Entry = std::pair<double, std::uint32_t>;
  std::priority_queue<Entry> heap;
  for (std::size_t i = 0; i < n; ++i) {
    const Entry cand(aqd(tables, db.codes[i], db.cross_terms(i, l - 1)),
                     static_cast<std::uint32_t>(i));
    if (heap.size() < keep) {
      heap.push(cand);
    } else if (cand < heap.top()) {
      heap.pop();
      heap.push(cand);
    }
  }

  RetrievalResult out;
  out.k_requested = k;
  out.l_active = l;
  out.k_clamped = k > n;
  out.ids.resize(heap.size());
  out.distances.resize(heap.size());
  for (std::size_t slot = heap.size(); slot-- > 0;) {
    out.distances[slot] = heap.top().first;
    out.ids[slot] = heap.top().second;
    heap.pop();
  }
  return out;
}

bool labels_match(const LabelAnnotation& a, const LabelAnnotation& b) {
  std::size_t i = 0, j = 0;
  while (i < a.positives.size() && j < b.positives.size()) {
    if (a.positives[i] == b.positives[j]) return true;
    if (a.positives[i] < b.positives[j])
      ++i;
    else
      ++j;
  }
  return false;
}

double average_precision(const RetrievalResult& result,
                         const std::function<bool(std::uint32_t)>& relevant, std::size_t r_cutoff,
                         std::size_t db_size) {
  require(r_cutoff >= 1, "average precision: cutoff must be at least 1");
  const std::size_t total_relevant = count_relevant(relevant, db_size);
  if (total_relevant == 0) return 0.0;
  const double denom = static_cast<double>(std::min(total_relevant, r_cutoff));
  double sum = 0.0;
  std::size_t hits = 0;
  const std::size_t scan = std::min(r_cutoff, result.ids.size());
  for (std::size_t rank = 0; rank < scan; ++rank) {
    if (relevant(result.ids[rank])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return sum / denom;
}

double mean_average_precision(std::span<const RetrievalResult> results,
                              const RelevanceFn& relevant, std::size_t r_cutoff,
                              std::size_t db_size) {
  require(!results.empty(), "mean average precision: empty query set");
  double sum = 0.0;
  for (std::size_t q = 0; q < results.size(); ++q)
    sum += average_precision(
        results[q], [&](std::uint32_t id) { return relevant(q, id); }, r_cutoff, db_size);
  return sum / static_cast<double>(results.size());
}

std::vector<PrPoint> precision_recall_curve(std::span<const RetrievalResult> results,
                                            const RelevanceFn& relevant, std::size_t db_size) {
  require(!results.empty(), "precision-recall: empty query set");
  const std::size_t queries = results.size();

  std::vector<std::size_t> total_relevant(queries);
  std::size_t max_len = 0;
  for (std::size_t q = 0; q < queries; ++q) {
    total_relevant[q] = count_relevant([&](std::uint32_t id) { return relevant(q, id); }, db_size);
    max_len = std::max(max_len, results[q].ids.size());
  }

  std::vector<PrPoint> curve;
  std::vector<std::size_t> hits(queries, 0);
  double last_recall = 0.0;
  for (std::size_t rank = 1; rank <= max_len; ++rank) {
    double recall_sum = 0.0;
    double precision_sum = 0.0;
    for (std::size_t q = 0; q < queries; ++q) {
      if (rank <= results[q].ids.size() && relevant(q, results[q].ids[rank - 1])) ++hits[q];
      if (total_relevant[q] > 0)
        recall_sum += static_cast<double>(hits[q]) / static_cast<double>(total_relevant[q]);
      precision_sum += static_cast<double>(hits[q]) / static_cast<double>(rank);
    }
    const double recall = recall_sum / static_cast<double>(queries);
    if (recall > last_recall) {
      curve.push_back({recall, precision_sum / static_cast<double>(queries)});
      last_recall = recall;
    }
  }
  return curve;
}

Vec precision_at_R(std::span<const RetrievalResult> results, const RelevanceFn& relevant,
                   std::span<const std::size_t> r_values) {
  require(!results.empty(), "precision@R: empty query set");
  Vec out(r_values.size(), 0.0);
  for (std::size_t ri = 0; ri < r_values.size(); ++ri) {
    const std::size_t r = r_values[ri];
    require(r >= 1, "precision@R: cutoff must be at least 1");
    double sum = 0.0;
    for (std::size_t q = 0; q < results.size(); ++q) {
      std::size_t hits = 0;
      const std::size_t scan = std::min(r, results[q].ids.size());
      for (std::size_t rank = 0; rank < scan; ++rank)
        if (relevant(q, results[q].ids[rank])) ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r);
    }
    out[ri] = sum / static_cast<double>(results.size());
  }
  return out;
}

}  // namespace dpq
