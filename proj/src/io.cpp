#include "dpq/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "dpq/wire.hpp"
#include "json.hpp"

namespace dpq {

namespace {

std::ifstream open_in(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(std::string(what) + ": cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, const char* what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(std::string(what) + ": cannot open " + path.string());
  return out;
}

void expect_magic(std::istream& in, const char* magic, const char* what) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw std::runtime_error(std::string(what) + ": bad magic");
}

int get_enum_byte(std::istream& in, int top, const char* what) {
  const int v = in.get();
  if (v < 0 || v > top)
    throw std::runtime_error(std::string("model file: corrupt ") + what + " marker");
  return v;
}

void put_matrix(std::ostream& out, const Matrix& m) {
  wire::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  wire::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.size(); ++i) wire::put_f64(out, m.data()[i]);
}

Matrix get_matrix(std::istream& in, const char* what) {
  const std::uint32_t rows = wire::get_u32(in, what);
  const std::uint32_t cols = wire::get_u32(in, what);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = wire::get_f64(in, what);
  return m;
}

void put_vec(std::ostream& out, const Vec& v) {
  wire::put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (double x : v) wire::put_f64(out, x);
}

Vec get_vec(std::istream& in, const char* what) {
  const std::uint32_t n = wire::get_u32(in, what);
  Vec v(n);
  for (auto& x : v) x = wire::get_f64(in, what);
  return v;
}

std::vector<std::uint32_t> ids_from_json(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw std::runtime_error(std::string("splits file: missing key ") + key);
  const auto& arr = j.at(key);
  if (!arr.is_array())
    throw std::runtime_error(std::string("splits file: key is not a list: ") + key);
  std::vector<std::uint32_t> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_unsigned())
      throw std::runtime_error(std::string("splits file: non-id entry under ") + key);
    out.push_back(v.get<std::uint32_t>());
  }
  return out;
}

}  // namespace

Matrix read_fvecs(std::istream& in) {
  std::vector<double> values;
  std::size_t dim = 0;
  std::size_t records = 0;
  for (;;) {
    std::uint8_t head[4];
    if (!in.read(reinterpret_cast<char*>(head), 4)) {
      if (in.gcount() == 0) break;  // clean end between records
      throw std::runtime_error("fvecs: truncated record header at record " +
                               std::to_string(records));
    }
    const std::int32_t d = static_cast<std::int32_t>(
        std::uint32_t(head[0]) | std::uint32_t(head[1]) << 8 | std::uint32_t(head[2]) << 16 |
        std::uint32_t(head[3]) << 24);
    if (d <= 0)
      throw std::runtime_error("fvecs: record " + std::to_string(records) +
                               " has nonpositive dimension " + std::to_string(d));
    if (records == 0) {
      dim = static_cast<std::size_t>(d);
    } else if (static_cast<std::size_t>(d) != dim) {
      throw std::runtime_error("fvecs: record " + std::to_string(records) + " has dimension " +
                               std::to_string(d) + ", expected " + std::to_string(dim));
    }
    for (std::size_t i = 0; i < dim; ++i) {
      try {
        values.push_back(wire::get_f32(in, "fvecs record"));
      } catch (const std::runtime_error&) {
        throw std::runtime_error("fvecs: truncated record " + std::to_string(records));
      }
    }
    ++records;
  }
  Matrix m(records, dim);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

void write_fvecs(std::ostream& out, const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    wire::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.row(r)) wire::put_f32(out, v);
  }
  if (!out) throw std::runtime_error("fvecs: write failed");
}

Matrix read_fvecs(const std::filesystem::path& path) {
  auto in = open_in(path, "fvecs");
  return read_fvecs(in);
}

void write_fvecs(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_out(path, "fvecs");
  write_fvecs(out, m);
}

std::vector<LabelAnnotation> read_labels(std::istream& in) {
  expect_magic(in, "PQLB", "label file");
  const std::uint32_t n = wire::get_u32(in, "label file header");
  std::vector<LabelAnnotation> out(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint16_t count = wire::get_u16(in, "label record");
    auto& pos = out[i].positives;
    pos.resize(count);
    for (auto& id : pos) id = wire::get_u16(in, "label record");
    for (std::size_t j = 1; j < pos.size(); ++j)
      if (pos[j] <= pos[j - 1])
        throw std::runtime_error("label file: record " + std::to_string(i) +
                                 " ids not sorted and unique");
  }
  return out;
}

void write_labels(std::ostream& out, std::span<const LabelAnnotation> labels) {
  out.write("PQLB", 4);
  wire::put_u32(out, static_cast<std::uint32_t>(labels.size()));
  for (const auto& ann : labels) {
    require(ann.positives.size() <= 0xffff, "label file: too many positives in one record");
    wire::put_u16(out, static_cast<std::uint16_t>(ann.positives.size()));
    for (std::uint16_t id : ann.positives) wire::put_u16(out, id);
  }
  if (!out) throw std::runtime_error("label file: write failed");
}

std::vector<LabelAnnotation> read_labels(const std::filesystem::path& path) {
  auto in = open_in(path, "label file");
  return read_labels(in);
}

void write_labels(const std::filesystem::path& path, std::span<const LabelAnnotation> labels) {
  auto out = open_out(path, "label file");
  write_labels(out, labels);
}

Matrix read_label_embeddings(std::istream& in) {
  expect_magic(in, "PQLE", "label embedding file");
  const std::uint32_t c = wire::get_u32(in, "label embedding header");
  const std::uint32_t e = wire::get_u32(in, "label embedding header");
  Matrix z(c, e);
  for (std::size_t i = 0; i < z.size(); ++i)
    z.data()[i] = wire::get_f32(in, "label embedding data");
  return z;
}

void write_label_embeddings(std::ostream& out, const Matrix& z) {
  out.write("PQLE", 4);
  wire::put_u32(out, static_cast<std::uint32_t>(z.rows()));
  wire::put_u32(out, static_cast<std::uint32_t>(z.cols()));
  for (std::size_t i = 0; i < z.size(); ++i) wire::put_f32(out, z.data()[i]);
  if (!out) throw std::runtime_error("label embedding file: write failed");
}

Matrix read_label_embeddings(const std::filesystem::path& path) {
  auto in = open_in(path, "label embedding file");
  return read_label_embeddings(in);
}

void write_label_embeddings(const std::filesystem::path& path, const Matrix& z) {
  auto out = open_out(path, "label embedding file");
  write_label_embeddings(out, z);
}

SplitManifest read_splits(const std::filesystem::path& path) {
  auto in = open_in(path, "splits file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("splits file: ") + e.what());
  }
  SplitManifest splits;
  splits.train = ids_from_json(j, "train");
  splits.query = ids_from_json(j, "query");
  splits.database = ids_from_json(j, "database");
  return splits;
}

void write_splits(const std::filesystem::path& path, const SplitManifest& splits) {
  nlohmann::json j;
  j["train"] = splits.train;
  j["query"] = splits.query;
  j["database"] = splits.database;
  auto out = open_out(path, "splits file");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("splits file: write failed");
}

void validate_bundle(const DatasetBundle& bundle) {
  const std::size_t n = bundle.features.rows();
  require(bundle.labels.empty() || bundle.labels.size() == n,
          "bundle: label count does not match feature count");
  const auto check_ids = [n](std::span<const std::uint32_t> ids, const char* what) {
    for (std::uint32_t id : ids)
      if (id >= n)
        throw std::invalid_argument(std::string("bundle: ") + what + " id out of range");
  };
  check_ids(bundle.splits.train, "train");
  check_ids(bundle.splits.query, "query");
  check_ids(bundle.splits.database, "database");
  std::unordered_set<std::uint32_t> queries(bundle.splits.query.begin(),
                                            bundle.splits.query.end());
  for (std::uint32_t id : bundle.splits.database)
    require(!queries.contains(id), "bundle: query and database ids overlap");
}

Matrix take_rows(const Matrix& m, std::span<const std::uint32_t> ids) {
  Matrix out(ids.size(), m.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < m.rows(), "take_rows: id out of range");
    std::copy(m.row(ids[i]).begin(), m.row(ids[i]).end(), out.row(i).begin());
  }
  return out;
}

std::vector<LabelAnnotation> take_labels(std::span<const LabelAnnotation> labels,
                                         std::span<const std::uint32_t> ids) {
  std::vector<LabelAnnotation> out;
  out.reserve(ids.size());
  for (std::uint32_t id : ids) {
    require(id < labels.size(), "take_labels: id out of range");
    out.push_back(labels[id]);
  }
  return out;
}

DatasetBundle make_synthetic(const SyntheticSpec& spec) {
  require(spec.clusters >= 1 && spec.per_cluster >= 1 && spec.dim >= 1,
          "synthetic: clusters, points per cluster, and dim must be positive");
  require(spec.clusters <= 0x10000, "synthetic: too many clusters for uint16 labels");
  require(spec.noise >= 0.0, "synthetic: noise must be nonnegative");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Matrix centers(spec.clusters, spec.dim);
  for (std::size_t i = 0; i < centers.size(); ++i) centers.data()[i] = gauss(rng);

  const std::size_t n = spec.clusters * spec.per_cluster;
  DatasetBundle bundle;
  bundle.features = Matrix(n, spec.dim);
  bundle.labels.resize(n);
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    for (std::size_t p = 0; p < spec.per_cluster; ++p) {
      const std::size_t row = c * spec.per_cluster + p;
      auto dst = bundle.features.row(row);
      for (std::size_t d = 0; d < spec.dim; ++d)
        dst[d] = centers(c, d) + spec.noise * gauss(rng);
      bundle.labels[row].positives = {static_cast<std::uint16_t>(c)};
    }
  }

  // Splits: per cluster, a shuffled tenth (at least one point when the
  // cluster has two or more) queries; the rest is the database and doubles
  // as the training set.
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    std::vector<std::uint32_t> ids(spec.per_cluster);
    for (std::size_t p = 0; p < spec.per_cluster; ++p)
      ids[p] = static_cast<std::uint32_t>(c * spec.per_cluster + p);
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const std::size_t j = i + rng() % (ids.size() - i);
      std::swap(ids[i], ids[j]);
    }
    std::size_t queries = spec.per_cluster / 10;
    if (queries == 0 && spec.per_cluster >= 2) queries = 1;
    for (std::size_t i = 0; i < ids.size(); ++i)
      (i < queries ? bundle.splits.query : bundle.splits.database).push_back(ids[i]);
  }
  bundle.splits.train = bundle.splits.database;
  std::sort(bundle.splits.query.begin(), bundle.splits.query.end());
  std::sort(bundle.splits.database.begin(), bundle.splits.database.end());
  std::sort(bundle.splits.train.begin(), bundle.splits.train.end());

  validate_bundle(bundle);
  return bundle;
}

void write_model(std::ostream& out, const ProgressiveModel& model) {
  out.write("DPQM", 4);
  wire::put_u32(out, 1);  // format version

  const Hyperparameters& h = model.hyper;
  wire::put_f64(out, h.lambda);
  wire::put_f64(out, h.tau);
  wire::put_f64(out, h.mu);
  wire::put_f64(out, h.nu);
  wire::put_f64(out, h.gamma);
  put_vec(out, h.layer_weights);
  wire::put_f64(out, h.eta);
  wire::put_u32(out, static_cast<std::uint32_t>(h.epochs));
  wire::put_u32(out, static_cast<std::uint32_t>(h.batch_size));
  out.put(static_cast<char>(h.optimizer));
  wire::put_f64(out, h.beta1);
  wire::put_f64(out, h.beta2);
  wire::put_f64(out, h.adam_eps);
  wire::put_u32(out, static_cast<std::uint32_t>(h.layers));
  wire::put_u32(out, static_cast<std::uint32_t>(h.codebook_size));
  wire::put_u32(out, static_cast<std::uint32_t>(h.feature_dim));
  wire::put_u32(out, static_cast<std::uint32_t>(h.embed_dim));
  out.put(static_cast<char>(h.train_metric));
  out.put(static_cast<char>(h.cls_mode));
  out.put(static_cast<char>(h.cls_tap));
  out.put(h.supervised ? 1 : 0);
  wire::put_u64(out, h.seed);
  wire::put_u32(out, static_cast<std::uint32_t>(h.kmeans_iters));

  wire::put_u32(out, static_cast<std::uint32_t>(model.codebooks.size()));
  for (const Codebook& cb : model.codebooks) {
    wire::put_u32(out, static_cast<std::uint32_t>(cb.layer_id));
    put_matrix(out, cb.codewords);
  }

  out.put(model.has_head ? 1 : 0);
  if (model.has_head) {
    out.put(static_cast<char>(model.head.tap));
    put_matrix(out, model.head.w_embed);
    put_matrix(out, model.head.w_cls);
    put_vec(out, model.head.cls_bias);
    put_matrix(out, model.sem.z);
  }

  put_vec(out, model.diag.total);
  put_vec(out, model.diag.margin);
  put_vec(out, model.diag.classification);
  put_vec(out, model.diag.distortion);
  if (!out) throw std::runtime_error("model file: write failed");
}

ProgressiveModel read_model(std::istream& in) {
  expect_magic(in, "DPQM", "model file");
  const std::uint32_t version = wire::get_u32(in, "model file header");
  if (version != 1)
    throw std::runtime_error("model file: unsupported version " + std::to_string(version));

  ProgressiveModel model;
  Hyperparameters& h = model.hyper;
  h.lambda = wire::get_f64(in, "model hyperparameters");
  h.tau = wire::get_f64(in, "model hyperparameters");
  h.mu = wire::get_f64(in, "model hyperparameters");
  h.nu = wire::get_f64(in, "model hyperparameters");
  h.gamma = wire::get_f64(in, "model hyperparameters");
  h.layer_weights = get_vec(in, "model hyperparameters");
  h.eta = wire::get_f64(in, "model hyperparameters");
  h.epochs = static_cast<int>(wire::get_u32(in, "model hyperparameters"));
  h.batch_size = static_cast<int>(wire::get_u32(in, "model hyperparameters"));
  h.optimizer = static_cast<Optimizer>(get_enum_byte(in, 1, "optimizer"));
  h.beta1 = wire::get_f64(in, "model hyperparameters");
  h.beta2 = wire::get_f64(in, "model hyperparameters");
  h.adam_eps = wire::get_f64(in, "model hyperparameters");
  h.layers = static_cast<int>(wire::get_u32(in, "model hyperparameters"));
  h.codebook_size = static_cast<int>(wire::get_u32(in, "model hyperparameters"));
  h.feature_dim = static_cast<int>(wire::get_u32(in, "model hyperparameters"));
  h.embed_dim = static_cast<int>(wire::get_u32(in, "model hyperparameters"));
  h.train_metric = static_cast<DistanceMetric>(get_enum_byte(in, 1, "metric"));
  h.cls_mode = static_cast<ClassificationMode>(get_enum_byte(in, 1, "mode"));
  h.cls_tap = static_cast<ClassifierTap>(get_enum_byte(in, 1, "tap"));
  h.supervised = get_enum_byte(in, 1, "supervised flag") == 1;
  h.seed = wire::get_u64(in, "model hyperparameters");
  h.kmeans_iters = static_cast<int>(wire::get_u32(in, "model hyperparameters"));
  if (!in) throw std::runtime_error("model file: truncated hyperparameters");

  const std::uint32_t layer_count = wire::get_u32(in, "model codebooks");
  model.codebooks.resize(layer_count);
  for (auto& cb : model.codebooks) {
    cb.layer_id = static_cast<int>(wire::get_u32(in, "model codebooks"));
    cb.codewords = get_matrix(in, "model codebooks");
  }

  model.has_head = get_enum_byte(in, 1, "head") == 1;
  if (model.has_head) {
    model.head.tap = static_cast<ClassifierTap>(get_enum_byte(in, 1, "head tap"));
    model.head.w_embed = get_matrix(in, "model head");
    model.head.w_cls = get_matrix(in, "model head");
    model.head.cls_bias = get_vec(in, "model head");
    model.sem = SemanticLabelSet::from_embeddings(get_matrix(in, "model label embeddings"));
  }

  model.diag.total = get_vec(in, "model diagnostics");
  model.diag.margin = get_vec(in, "model diagnostics");
  model.diag.classification = get_vec(in, "model diagnostics");
  model.diag.distortion = get_vec(in, "model diagnostics");

  validate_hyperparameters(model.hyper);
  validate_model(model);
  return model;
}

void write_model(const std::filesystem::path& path, const ProgressiveModel& model) {
  auto out = open_out(path, "model file");
  write_model(out, model);
}

ProgressiveModel read_model(const std::filesystem::path& path) {
  auto in = open_in(path, "model file");
  return read_model(in);
}

}  // namespace dpq
