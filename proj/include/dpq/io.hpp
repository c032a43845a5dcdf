#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dpq/model.hpp"
#include "dpq/supervised.hpp"

namespace dpq {

/// fvecs: per record, little-endian int32 dimension then that many float32
/// values; every record must share one dimension. An empty file is a 0x0
/// matrix.
Matrix read_fvecs(std::istream& in);
Matrix read_fvecs(const std::filesystem::path& path);
void write_fvecs(std::ostream& out, const Matrix& m);
void write_fvecs(const std::filesystem::path& path, const Matrix& m);

/// Label file: magic "PQLB", uint32 N, then per record a uint16 count
/// followed by that many sorted, unique uint16 class ids.
std::vector<LabelAnnotation> read_labels(std::istream& in);
std::vector<LabelAnnotation> read_labels(const std::filesystem::path& path);
void write_labels(std::ostream& out, std::span<const LabelAnnotation> labels);
void write_labels(const std::filesystem::path& path, std::span<const LabelAnnotation> labels);

/// Label-embedding file: magic "PQLE", uint32 C, uint32 E, then C*E row-major
/// float32 values.
Matrix read_label_embeddings(std::istream& in);
Matrix read_label_embeddings(const std::filesystem::path& path);
void write_label_embeddings(std::ostream& out, const Matrix& z);
void write_label_embeddings(const std::filesystem::path& path, const Matrix& z);

/// Which rows of a dataset play which role. Stored as JSON with keys
/// "train", "query", "database". Query and database ids never overlap;
/// training ids may reuse database ids.
struct SplitManifest {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> query;
  std::vector<std::uint32_t> database;
};

SplitManifest read_splits(const std::filesystem::path& path);
void write_splits(const std::filesystem::path& path, const SplitManifest& splits);

struct DatasetBundle {
  Matrix features;                      // N x D
  std::vector<LabelAnnotation> labels;  // empty when unlabeled, else N entries
  Matrix label_embeddings;              // 0x0 when absent
  SplitManifest splits;
};

/// Checks split ids against N, split disjointness, and label coverage.
void validate_bundle(const DatasetBundle& bundle);

/// Rows of `m` selected by id, in id-list order.
Matrix take_rows(const Matrix& m, std::span<const std::uint32_t> ids);
std::vector<LabelAnnotation> take_labels(std::span<const LabelAnnotation> labels,
                                         std::span<const std::uint32_t> ids);

struct SyntheticSpec {
  std::size_t clusters = 10;
  std::size_t per_cluster = 200;
  std::size_t dim = 16;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Gaussian mixture with the cluster id as the label. Per cluster, one tenth
/// of the points (at least one) become queries; the rest are the database and
/// double as the training set. Deterministic per seed.
DatasetBundle make_synthetic(const SyntheticSpec& spec);

/// Model file: magic "DPQM", uint32 version, hyperparameters, codebooks, and
/// (when present) the projection head, label embeddings, and training curves.
/// Parameters are stored as float64, so save/load is exact.
void write_model(std::ostream& out, const ProgressiveModel& model);
ProgressiveModel read_model(std::istream& in);
void write_model(const std::filesystem::path& path, const ProgressiveModel& model);
ProgressiveModel read_model(const std::filesystem::path& path);

}  // namespace dpq
