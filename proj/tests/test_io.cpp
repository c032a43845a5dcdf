#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dpq/index.hpp"
#include "dpq/io.hpp"

using namespace dpq;

namespace {

std::string bytes_of(std::initializer_list<unsigned> vals) {
  std::string s;
  for (unsigned v : vals) s.push_back(static_cast<char>(v));
  return s;
}

Matrix random_f32_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  // Values representable in float32 exactly, so file roundtrips are identity.
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = double(float(gauss(rng)));
  return m;
}

ProgressiveModel small_model(std::size_t layers, std::size_t k, std::size_t dim,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ProgressiveModel model;
  for (std::size_t l = 0; l < layers; ++l) {
    Codebook cb;
    cb.layer_id = static_cast<int>(l + 1);
    cb.codewords = Matrix(k, dim);
    for (std::size_t i = 0; i < cb.codewords.size(); ++i) cb.codewords.data()[i] = gauss(rng);
    model.codebooks.push_back(std::move(cb));
  }
  model.hyper.layers = static_cast<int>(layers);
  model.hyper.codebook_size = static_cast<int>(k);
  model.hyper.feature_dim = static_cast<int>(dim);
  model.hyper.supervised = false;
  return model;
}

}  // namespace

TEST_CASE("fvecs: single two-value record") {
  // d=2 little-endian, then 1.0f and 2.0f.
  const std::string raw = bytes_of({2, 0, 0, 0}) + bytes_of({0, 0, 0x80, 0x3f}) +
                          bytes_of({0, 0, 0, 0x40});
  std::stringstream in(raw);
  const Matrix m = read_fvecs(in);
  REQUIRE(m.rows() == 1);
  REQUIRE(m.cols() == 2);
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 2.0);
}

TEST_CASE("fvecs: empty file is a 0x0 matrix") {
  std::stringstream in;
  const Matrix m = read_fvecs(in);
  CHECK(m.rows() == 0);
  CHECK(m.cols() == 0);
}

TEST_CASE("fvecs: write-read roundtrip is bit-identical") {
  std::mt19937_64 rng(2024);
  const Matrix m = random_f32_matrix(100, 16, rng);

  std::stringstream first;
  write_fvecs(first, m);
  std::stringstream copy(first.str());
  const Matrix back = read_fvecs(copy);
  CHECK(back == m);

  std::stringstream second;
  write_fvecs(second, back);
  CHECK(second.str() == first.str());
}

TEST_CASE("fvecs: inconsistent dimension names the record") {
  std::stringstream in(bytes_of({1, 0, 0, 0}) + bytes_of({0, 0, 0x80, 0x3f}) +
                       bytes_of({2, 0, 0, 0}) + bytes_of({0, 0, 0x80, 0x3f}) +
                       bytes_of({0, 0, 0x80, 0x3f}));
  CHECK_THROWS_WITH_AS((void)read_fvecs(in), "fvecs: record 1 has dimension 2, expected 1",
                       std::runtime_error);
}

TEST_CASE("fvecs: truncation errors") {
  // Record announces 2 values but carries 1.
  std::stringstream short_values(bytes_of({2, 0, 0, 0}) + bytes_of({0, 0, 0x80, 0x3f}));
  CHECK_THROWS_WITH_AS((void)read_fvecs(short_values), "fvecs: truncated record 0",
                       std::runtime_error);

  // Complete record then a ragged header.
  std::stringstream short_header(bytes_of({1, 0, 0, 0}) + bytes_of({0, 0, 0x80, 0x3f}) +
                                 bytes_of({1, 0}));
  CHECK_THROWS_WITH_AS((void)read_fvecs(short_header),
                       "fvecs: truncated record header at record 1", std::runtime_error);

  std::stringstream negative(bytes_of({0xff, 0xff, 0xff, 0xff}));
  CHECK_THROWS_AS((void)read_fvecs(negative), std::runtime_error);
}

TEST_CASE("labels: roundtrip, ordering enforced") {
  std::vector<LabelAnnotation> labels(3);
  labels[0].positives = {4};
  labels[1].positives = {0, 2, 9};
  labels[2].positives = {};  // unlabeled entries are representable

  std::stringstream buf;
  write_labels(buf, labels);
  const auto back = read_labels(buf);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i].positives == labels[i].positives);

  // Hand-build an unsorted record: N=1, count=2, ids 5 then 3.
  std::stringstream bad(std::string("PQLB") + bytes_of({1, 0, 0, 0}) + bytes_of({2, 0}) +
                        bytes_of({5, 0}) + bytes_of({3, 0}));
  CHECK_THROWS_WITH_AS((void)read_labels(bad), "label file: record 0 ids not sorted and unique",
                       std::runtime_error);

  std::stringstream wrong_magic(std::string("PQLX") + bytes_of({0, 0, 0, 0}));
  CHECK_THROWS_AS((void)read_labels(wrong_magic), std::runtime_error);
}

TEST_CASE("label embeddings: roundtrip through float32") {
  std::mt19937_64 rng(7);
  const Matrix z = random_f32_matrix(5, 8, rng);
  std::stringstream buf;
  write_label_embeddings(buf, z);
  CHECK(read_label_embeddings(buf) == z);

  std::stringstream bad("PQLB\0\0\0\0");
  CHECK_THROWS_AS((void)read_label_embeddings(bad), std::runtime_error);
}

TEST_CASE("splits: JSON roundtrip and malformed files") {
  const auto path = std::filesystem::temp_directory_path() / "dpq_test_splits.json";
  SplitManifest splits;
  splits.train = {0, 1, 2, 5};
  splits.query = {3, 4};
  splits.database = {0, 1, 2, 5, 6};
  write_splits(path, splits);
  const SplitManifest back = read_splits(path);
  CHECK(back.train == splits.train);
  CHECK(back.query == splits.query);
  CHECK(back.database == splits.database);

  {
    std::ofstream bad(path);
    bad << "{\"train\": [1], \"query\": [2]}";  // missing "database"
  }
  CHECK_THROWS_WITH_AS((void)read_splits(path), "splits file: missing key database",
                       std::runtime_error);
  {
    std::ofstream bad(path);
    bad << "{\"train\": 3, \"query\": [], \"database\": []}";
  }
  CHECK_THROWS_AS((void)read_splits(path), std::runtime_error);
  {
    std::ofstream bad(path);
    bad << "not json";
  }
  CHECK_THROWS_AS((void)read_splits(path), std::runtime_error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)read_splits(path), std::runtime_error);
}

TEST_CASE("validate_bundle: catches bad ids, overlap, label mismatch") {
  DatasetBundle bundle;
  bundle.features = Matrix(4, 2);
  bundle.splits.query = {0};
  bundle.splits.database = {1, 2, 3};
  bundle.splits.train = {1, 2};
  validate_bundle(bundle);  // fine without labels

  bundle.labels.resize(3);
  CHECK_THROWS_AS(validate_bundle(bundle), std::invalid_argument);
  bundle.labels.resize(4);
  validate_bundle(bundle);

  DatasetBundle out_of_range = bundle;
  out_of_range.splits.database.push_back(4);
  CHECK_THROWS_AS(validate_bundle(out_of_range), std::invalid_argument);

  DatasetBundle overlap = bundle;
  overlap.splits.database.push_back(0);  // also a query
  CHECK_THROWS_AS(validate_bundle(overlap), std::invalid_argument);
}

TEST_CASE("take_rows and take_labels follow the id order") {
  Matrix m = Matrix::from_rows({{0.0, 1.0}, {10.0, 11.0}, {20.0, 21.0}});
  std::vector<LabelAnnotation> labels(3);
  for (std::uint16_t i = 0; i < 3; ++i) labels[i].positives = {i};

  const std::vector<std::uint32_t> ids = {2, 0};
  const Matrix rows = take_rows(m, ids);
  REQUIRE(rows.rows() == 2);
  CHECK(rows(0, 0) == 20.0);
  CHECK(rows(1, 0) == 0.0);
  const auto picked = take_labels(labels, ids);
  CHECK(picked[0].positives == std::vector<std::uint16_t>{2});
  CHECK(picked[1].positives == std::vector<std::uint16_t>{0});

  CHECK_THROWS_AS((void)take_rows(m, std::vector<std::uint32_t>{3}), std::invalid_argument);
  CHECK_THROWS_AS((void)take_labels(labels, std::vector<std::uint32_t>{3}),
                  std::invalid_argument);
}

TEST_CASE("synthetic: zero noise collapses points onto their centers") {
  SyntheticSpec spec;
  spec.clusters = 3;
  spec.per_cluster = 4;
  spec.dim = 5;
  spec.noise = 0.0;
  spec.seed = 11;
  const DatasetBundle bundle = make_synthetic(spec);
  REQUIRE(bundle.features.rows() == 12);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 1; p < 4; ++p)
      for (std::size_t d = 0; d < 5; ++d)
        CHECK(bundle.features(c * 4 + p, d) == bundle.features(c * 4, d));
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(bundle.labels[i].positives == std::vector<std::uint16_t>{std::uint16_t(i / 4)});
}

TEST_CASE("synthetic: deterministic per seed") {
  SyntheticSpec spec;
  spec.clusters = 4;
  spec.per_cluster = 25;
  spec.dim = 6;
  spec.noise = 0.2;
  spec.seed = 99;
  const DatasetBundle a = make_synthetic(spec);
  const DatasetBundle b = make_synthetic(spec);
  CHECK(a.features == b.features);
  CHECK(a.splits.query == b.splits.query);
  CHECK(a.splits.database == b.splits.database);
  CHECK(a.splits.train == b.splits.train);

  spec.seed = 100;
  const DatasetBundle c = make_synthetic(spec);
  CHECK(!(a.features == c.features));
}

TEST_CASE("synthetic: splits partition the ids, queries stay held out") {
  SyntheticSpec spec;  // defaults: 10 clusters x 200
  const DatasetBundle bundle = make_synthetic(spec);
  CHECK(bundle.splits.query.size() == 200);     // 10% of each cluster
  CHECK(bundle.splits.database.size() == 1800);
  CHECK(bundle.splits.train == bundle.splits.database);
  std::vector<bool> seen(2000, false);
  for (std::uint32_t id : bundle.splits.query) seen[id] = true;
  for (std::uint32_t id : bundle.splits.database) {
    CHECK_FALSE(seen[id]);  // disjoint
    seen[id] = true;
  }
  for (bool s : seen) CHECK(s);  // together they cover everything
}

TEST_CASE("synthetic: brute-force nearest neighbor respects cluster structure") {
  SyntheticSpec spec;
  spec.clusters = 10;
  spec.per_cluster = 200;
  spec.dim = 16;
  spec.noise = 0.1;
  spec.seed = 5;
  const DatasetBundle bundle = make_synthetic(spec);

  std::size_t matched = 0;
  const std::size_t probe = 50;
  for (std::size_t qi = 0; qi < probe; ++qi) {
    const std::uint32_t q = bundle.splits.query[qi];
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_id = 0;
    for (std::uint32_t id : bundle.splits.database) {
      const double d = squared_distance(bundle.features.row(q), bundle.features.row(id));
      if (d < best) {
        best = d;
        best_id = id;
      }
    }
    if (bundle.labels[best_id].positives == bundle.labels[q].positives) ++matched;
  }
  // Tight clusters: the exact nearest neighbor nearly always shares the label.
  CHECK(matched >= 48);
}

TEST_CASE("model file: headless roundtrip is exact") {
  ProgressiveModel model = small_model(3, 4, 5, 77);
  model.diag.total = {3.0, 2.0, 1.5};
  model.diag.margin = {0.0, 0.0, 0.0};
  model.diag.classification = {0.0, 0.0, 0.0};
  model.diag.distortion = {3.0, 2.0, 1.5};
  model.hyper.layer_weights = {1.0, 0.5, 0.25};
  model.hyper.layers = 3;
  model.hyper.seed = 1234567890123456789ull;

  std::stringstream buf;
  write_model(buf, model);
  const ProgressiveModel back = read_model(buf);

  REQUIRE(back.codebooks.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(back.codebooks[l].layer_id == model.codebooks[l].layer_id);
    CHECK(back.codebooks[l].codewords == model.codebooks[l].codewords);
  }
  CHECK_FALSE(back.has_head);
  CHECK(back.hyper.layer_weights == model.hyper.layer_weights);
  CHECK(back.hyper.seed == model.hyper.seed);
  CHECK(back.hyper.epochs == model.hyper.epochs);
  CHECK(back.hyper.gamma == model.hyper.gamma);
  CHECK(back.diag.total == model.diag.total);
  CHECK(back.diag.distortion == model.diag.distortion);

  // The digest sees the same parameters, so index/search accept the reload.
  CHECK(model_digest(back) == model_digest(model));
}

TEST_CASE("model file: supervised roundtrip keeps head and label set") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ProgressiveModel model = small_model(2, 4, 3, 99);
  model.has_head = true;
  model.hyper.supervised = true;
  model.hyper.embed_dim = 3;
  model.hyper.feature_dim = 6;
  model.hyper.layers = 2;
  model.head.tap = ClassifierTap::feature;
  model.hyper.cls_tap = ClassifierTap::feature;
  model.head.w_embed = Matrix(6, 3);
  for (std::size_t i = 0; i < model.head.w_embed.size(); ++i)
    model.head.w_embed.data()[i] = gauss(rng);
  model.head.w_cls = Matrix(6, 4);
  for (std::size_t i = 0; i < model.head.w_cls.size(); ++i)
    model.head.w_cls.data()[i] = gauss(rng);
  model.head.cls_bias = {0.1, -0.2, 0.3, 0.0};
  Matrix z(4, 3);
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = gauss(rng);
  model.sem = SemanticLabelSet::from_embeddings(z);

  std::stringstream buf;
  write_model(buf, model);
  const ProgressiveModel back = read_model(buf);

  CHECK(back.has_head);
  CHECK(back.head.tap == ClassifierTap::feature);
  CHECK(back.head.w_embed == model.head.w_embed);
  CHECK(back.head.w_cls == model.head.w_cls);
  CHECK(back.head.cls_bias == model.head.cls_bias);
  CHECK(back.sem.z == model.sem.z);
  CHECK(back.sem.delta == model.sem.delta);  // recomputed from identical z
  CHECK(model_digest(back) == model_digest(model));
}

TEST_CASE("model file: corruption is rejected") {
  ProgressiveModel model = small_model(2, 4, 3, 13);
  std::stringstream buf;
  write_model(buf, model);
  const std::string good = buf.str();

  std::stringstream bad_magic("XXXX" + good.substr(4));
  CHECK_THROWS_WITH_AS((void)read_model(bad_magic), "model file: bad magic", std::runtime_error);

  std::string v2 = good;
  v2[4] = 2;
  std::stringstream bad_version(v2);
  CHECK_THROWS_WITH_AS((void)read_model(bad_version), "model file: unsupported version 2",
                       std::runtime_error);

  std::stringstream truncated(good.substr(0, good.size() / 2));
  CHECK_THROWS_AS((void)read_model(truncated), std::runtime_error);

  // Optimizer marker lives after magic(4) + version(4) + five f64 knobs(40)
  // + empty layer_weights(4) + eta(8) + epochs(4) + batch(4) = offset 68.
  std::string bad_enum = good;
  bad_enum[68] = 7;
  std::stringstream bad_optimizer(bad_enum);
  CHECK_THROWS_WITH_AS((void)read_model(bad_optimizer),
                       "model file: corrupt optimizer marker", std::runtime_error);
}

TEST_CASE("model file: path helpers") {
  const auto path = std::filesystem::temp_directory_path() / "dpq_test_model.bin";
  ProgressiveModel model = small_model(2, 4, 3, 17);
  write_model(path, model);
  const ProgressiveModel back = read_model(path);
  CHECK(model_digest(back) == model_digest(model));
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)read_model(path), std::runtime_error);
}
