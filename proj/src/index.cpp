#include "dpq/index.hpp"

#include "dpq/wire.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>

namespace dpq {

namespace {

/// Bits-per-layer for a model, requiring one uniform power-of-two size.
unsigned code_bits(const ProgressiveModel& model) {
  require(!model.codebooks.empty(), "encode: model has no codebooks");
  const std::size_t k = model.codebooks.front().size();
  for (const auto& cb : model.codebooks)
    require(cb.size() == k, "encode: codebooks must share one size");
  return bits_for_codebook_size(k);
}

void digest_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  h = fnv1a64(data, n, h);
}

void digest_u32(std::uint64_t& h, std::uint32_t v) {
  std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16),
                       std::uint8_t(v >> 24)};
  digest_bytes(h, b, 4);
}

void digest_matrix(std::uint64_t& h, const Matrix& m) {
  digest_u32(h, static_cast<std::uint32_t>(m.rows()));
  digest_u32(h, static_cast<std::uint32_t>(m.cols()));
  digest_bytes(h, m.data(), m.size() * sizeof(double));
}

}  // namespace

EncodedPoint encode_point(ConstSpan x, const ProgressiveModel& model) {
  const std::size_t want =
      model.has_head ? model.head.feature_dim() : model.code_dim();
  require(x.size() == want, "encode: input dimension does not match the model");
  const unsigned bits = code_bits(model);

  Vec residual = model.qblock_input(x);
  const std::size_t layers = model.layer_count();
  const std::size_t dim = residual.size();

  EncodedPoint out;
  out.cross_terms.assign(layers, 0.0);
  std::vector<AssignmentIndex> indices(layers);
  Vec prefix_sum(dim, 0.0);
  double cross = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    const Codebook& cb = model.codebooks[l];
    const AssignmentIndex k = hard_assign(residual, cb);
    indices[l] = k;
    const ConstSpan c = cb.codeword(k);
    cross += 2.0 * dot(c, prefix_sum);  // ordered pairs, both directions
    out.cross_terms[l] = cross;
    axpy(1.0, c, prefix_sum);
    axpy(-1.0, c, residual);
  }
  out.code = pack_code(indices, bits);
  return out;
}

Vec decode(const PackedCode& code, const ProgressiveModel& model, std::size_t l) {
  require(l >= 1, "decode: prefix length must be at least 1");
  require(l <= code.layers, "decode: prefix length exceeds the code");
  require(code.layers <= model.layer_count(), "decode: code has more layers than the model");
  require(code.bits_per_layer == code_bits(model),
          "decode: code width does not match the model");
  const std::vector<AssignmentIndex> indices =
      unpack_code(code, code.layers, code.bits_per_layer);
  Vec out(model.code_dim(), 0.0);
  for (std::size_t j = 0; j < l; ++j) {
    const Codebook& cb = model.codebooks[j];
    if (indices[j] >= cb.size())
      throw std::runtime_error("decode: code index out of codebook range");
    axpy(1.0, cb.codeword(indices[j]), out);
  }
  return out;
}

EncodedDatabase encode_database(const Matrix& features, const ProgressiveModel& model,
                                int threads, const ProgressFn& progress) {
  require(features.rows() >= 1, "encode: empty input");
  const std::size_t n = features.rows();
  const std::size_t layers = model.layer_count();

  EncodedDatabase db;
  db.layers = static_cast<std::uint32_t>(layers);
  db.bits_per_layer = code_bits(model);
  db.codes.resize(n);
  db.cross_terms = Matrix(n, layers);
  db.model_ref = model_digest(model);

  std::size_t workers = threads < 1 ? 1 : static_cast<std::size_t>(threads);
  workers = std::min(workers, n);

  std::atomic<std::size_t> done{0};
  std::atomic<bool> failed{false};
  std::mutex report_mutex;
  std::exception_ptr first_error;

  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end && !failed.load(std::memory_order_relaxed); ++i) {
      try {
        EncodedPoint p = encode_point(features.row(i), model);
        db.codes[i] = std::move(p.code);
        std::copy(p.cross_terms.begin(), p.cross_terms.end(), db.cross_terms.row(i).begin());
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(report_mutex);
        if (!first_error)
          first_error = std::make_exception_ptr(std::runtime_error(
              "encode: point " + std::to_string(i) + ": " + e.what()));
        failed.store(true, std::memory_order_relaxed);
        return;
      }
      const std::size_t so_far = done.fetch_add(1, std::memory_order_relaxed) + 1;
      if (progress) {
        std::lock_guard<std::mutex> lock(report_mutex);
        progress(so_far, n);
      }
    }
  };

  if (workers <= 1) {
    run(0, n);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = n * w / workers;
      const std::size_t end = n * (w + 1) / workers;
      pool.emplace_back(run, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return db;
}

std::uint64_t model_digest(const ProgressiveModel& model) {
  std::uint64_t h = fnv1a64("DPQ", 3);
  digest_u32(h, static_cast<std::uint32_t>(model.layer_count()));
  for (const auto& cb : model.codebooks) digest_matrix(h, cb.codewords);
  digest_u32(h, model.has_head ? 1u : 0u);
  if (model.has_head) {
    digest_u32(h, model.head.tap == ClassifierTap::semantic ? 0u : 1u);
    digest_matrix(h, model.head.w_embed);
    digest_matrix(h, model.head.w_cls);
    digest_bytes(h, model.head.cls_bias.data(), model.head.cls_bias.size() * sizeof(double));
  }
  return h;
}

void write_database(std::ostream& out, const EncodedDatabase& db) {
  require(db.codes.size() == db.cross_terms.rows() && db.layers == db.cross_terms.cols(),
          "write_database: inconsistent dimensions");
  write_codes(out, db.codes, db.layers, db.bits_per_layer);
  const auto pos = static_cast<std::uint64_t>(out.tellp());
  for (std::uint64_t pad = (8 - pos % 8) % 8; pad > 0; --pad) out.put('\0');
  for (std::size_t i = 0; i < db.cross_terms.rows(); ++i)
    for (std::size_t l = 0; l < db.cross_terms.cols(); ++l) wire::put_f32(out, db.cross_terms(i, l));
  wire::put_u64(out, db.model_ref);
  if (!out) throw std::runtime_error("write_database: write failed");
}

EncodedDatabase read_database(std::istream& in) {
  CodeFile file = read_codes(in);
  EncodedDatabase db;
  db.layers = file.layers;
  db.bits_per_layer = file.bits_per_layer;
  db.codes = std::move(file.codes);

  const auto pos = static_cast<std::uint64_t>(in.tellg());
  for (std::uint64_t pad = (8 - pos % 8) % 8; pad > 0; --pad) {
    char c;
    if (!in.get(c) || c != '\0')
      throw std::runtime_error("database file: corrupt alignment padding");
  }
  db.cross_terms = Matrix(db.codes.size(), db.layers);
  for (std::size_t i = 0; i < db.codes.size(); ++i)
    for (std::size_t l = 0; l < db.layers; ++l)
      db.cross_terms(i, l) = wire::get_f32(in, "database cross-term section");
  for (std::size_t i = 0; i < db.codes.size(); ++i)
    if (db.cross_terms(i, 0) != 0.0)
      throw std::runtime_error("database file: corrupt cross-term section");
  db.model_ref = wire::get_u64(in, "database model digest");
  return db;
}

void write_database_file(const std::filesystem::path& path, const EncodedDatabase& db) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_database: cannot open " + path.string());
  write_database(out, db);
}

EncodedDatabase read_database_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_database: cannot open " + path.string());
  return read_database(in);
}

}  // namespace dpq
