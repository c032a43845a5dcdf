// Command-line surface tying train -> encode -> search -> eval into
// reproducible runs. Exit codes: 0 success, 1 runtime failure, 2 bad usage.
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "dpq/index.hpp"
#include "dpq/io.hpp"
#include "dpq/kmeans.hpp"
#include "dpq/search.hpp"
#include "dpq/trainer.hpp"
#include "json.hpp"

namespace {

using dpq::EncodedDatabase;
using dpq::Hyperparameters;
using dpq::LabelAnnotation;
using dpq::Matrix;
using dpq::ProgressiveModel;
using dpq::RetrievalResult;
using dpq::Vec;

// ---------------------------------------------------------------------------
// Run configuration: every knob of one invocation, shared across subcommands.
// ---------------------------------------------------------------------------

struct RunConfig {
  Hyperparameters hyper;

  // Enum knobs arrive as strings and are translated after parsing.
  std::string optimizer = "adam";
  std::string metric = "cosine";
  std::string cls_mode = "single_label";
  std::string cls_tap = "semantic";
  bool supervised = true;

  // Paths.
  std::string data, labels, label_embeddings, splits, config;
  std::string model, db, out, out_dir, pr_out;

  // Command options.
  std::size_t k = 10;
  std::size_t r_cutoff = 0;  // 0: the whole database
  std::vector<std::size_t> precision_cutoffs{10, 100};
  std::size_t l_active = 0;  // 0: every layer the codes carry
  int threads = 1;
  int trials = 20;
  double fd_epsilon = 1e-5;

  // Synthetic data shape (synth and bench).
  std::size_t clusters = 10;
  std::size_t per_cluster = 200;
  std::size_t dim = 16;
  double noise = 0.1;
};

// Option handles needed to tell "user set this" from "default", so that
// precedence is defaults < config file < explicit flags.
struct HyperOpts {
  CLI::Option* lambda = nullptr;
  CLI::Option* tau = nullptr;
  CLI::Option* mu = nullptr;
  CLI::Option* nu = nullptr;
  CLI::Option* gamma = nullptr;
  CLI::Option* eta = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* batch = nullptr;
  CLI::Option* optimizer = nullptr;
  CLI::Option* layers = nullptr;
  CLI::Option* codebook_size = nullptr;
  CLI::Option* embed_dim = nullptr;
  CLI::Option* metric = nullptr;
  CLI::Option* cls_mode = nullptr;
  CLI::Option* cls_tap = nullptr;
  CLI::Option* supervised = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* kmeans_iters = nullptr;
};

// ---------------------------------------------------------------------------
// Enum spellings.
// ---------------------------------------------------------------------------

dpq::Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return dpq::Optimizer::adam;
  if (s == "sgd") return dpq::Optimizer::sgd;
  throw std::runtime_error("config: unknown optimizer '" + s + "' (adam, sgd)");
}

dpq::DistanceMetric metric_from_string(const std::string& s) {
  if (s == "euclidean") return dpq::DistanceMetric::euclidean;
  if (s == "cosine") return dpq::DistanceMetric::cosine;
  throw std::runtime_error("config: unknown metric '" + s + "' (euclidean, cosine)");
}

dpq::ClassificationMode cls_mode_from_string(const std::string& s) {
  if (s == "single_label") return dpq::ClassificationMode::single_label;
  if (s == "multi_label") return dpq::ClassificationMode::multi_label;
  throw std::runtime_error("config: unknown classification mode '" + s +
                           "' (single_label, multi_label)");
}

dpq::ClassifierTap cls_tap_from_string(const std::string& s) {
  if (s == "semantic") return dpq::ClassifierTap::semantic;
  if (s == "feature") return dpq::ClassifierTap::feature;
  throw std::runtime_error("config: unknown classifier tap '" + s + "' (semantic, feature)");
}

// ---------------------------------------------------------------------------
// JSON config file. Keys are the hyperparameter field names; unknown keys are
// rejected so typos cannot silently fall back to defaults.
// ---------------------------------------------------------------------------

void apply_config_file(Hyperparameters& h, const std::string& path,
                       std::set<std::string>& keys_seen) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: " + path + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config: top level must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    keys_seen.insert(key);
    try {
      if (key == "lambda") h.lambda = value.get<double>();
      else if (key == "tau") h.tau = value.get<double>();
      else if (key == "mu") h.mu = value.get<double>();
      else if (key == "nu") h.nu = value.get<double>();
      else if (key == "gamma") h.gamma = value.get<double>();
      else if (key == "layer_weights") h.layer_weights = value.get<std::vector<double>>();
      else if (key == "eta") h.eta = value.get<double>();
      else if (key == "epochs") h.epochs = value.get<int>();
      else if (key == "batch_size") h.batch_size = value.get<int>();
      else if (key == "optimizer") h.optimizer = optimizer_from_string(value.get<std::string>());
      else if (key == "beta1") h.beta1 = value.get<double>();
      else if (key == "beta2") h.beta2 = value.get<double>();
      else if (key == "adam_eps") h.adam_eps = value.get<double>();
      else if (key == "layers") h.layers = value.get<int>();
      else if (key == "codebook_size") h.codebook_size = value.get<int>();
      else if (key == "feature_dim") h.feature_dim = value.get<int>();
      else if (key == "embed_dim") h.embed_dim = value.get<int>();
      else if (key == "train_metric") h.train_metric = metric_from_string(value.get<std::string>());
      else if (key == "cls_mode") h.cls_mode = cls_mode_from_string(value.get<std::string>());
      else if (key == "cls_tap") h.cls_tap = cls_tap_from_string(value.get<std::string>());
      else if (key == "supervised") h.supervised = value.get<bool>();
      else if (key == "seed") h.seed = value.get<std::uint64_t>();
      else if (key == "kmeans_iters") h.kmeans_iters = value.get<int>();
      else throw std::runtime_error("config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("config: key '" + key + "': " + e.what());
    }
  }
}

// Seed precedence: --seed flag, config "seed", then the PROGQ_SEED
// environment variable, then 0.
void apply_env_seed(Hyperparameters& h, bool seed_given) {
  if (seed_given) return;
  const char* env = std::getenv("PROGQ_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0')
    throw std::runtime_error(std::string("PROGQ_SEED is not an unsigned integer: ") + env);
  h.seed = v;
}

// Resolves the effective hyperparameters for a command: library defaults,
// then the config file, then every flag the user actually passed.
Hyperparameters resolve_hyper(const RunConfig& rc, const HyperOpts& o,
                              std::set<std::string>& cfg_keys) {
  Hyperparameters h;
  if (!rc.config.empty()) apply_config_file(h, rc.config, cfg_keys);
  if (o.lambda->count()) h.lambda = rc.hyper.lambda;
  if (o.tau->count()) h.tau = rc.hyper.tau;
  if (o.mu->count()) h.mu = rc.hyper.mu;
  if (o.nu->count()) h.nu = rc.hyper.nu;
  if (o.gamma->count()) h.gamma = rc.hyper.gamma;
  if (o.eta->count()) h.eta = rc.hyper.eta;
  if (o.epochs->count()) h.epochs = rc.hyper.epochs;
  if (o.batch->count()) h.batch_size = rc.hyper.batch_size;
  if (o.optimizer->count()) h.optimizer = optimizer_from_string(rc.optimizer);
  if (o.layers->count()) h.layers = rc.hyper.layers;
  if (o.codebook_size->count()) h.codebook_size = rc.hyper.codebook_size;
  if (o.embed_dim->count()) h.embed_dim = rc.hyper.embed_dim;
  if (o.metric->count()) h.train_metric = metric_from_string(rc.metric);
  if (o.cls_mode->count()) h.cls_mode = cls_mode_from_string(rc.cls_mode);
  if (o.cls_tap->count()) h.cls_tap = cls_tap_from_string(rc.cls_tap);
  if (o.supervised->count()) h.supervised = rc.supervised;
  if (o.seed->count()) h.seed = rc.hyper.seed;
  if (o.kmeans_iters->count()) h.kmeans_iters = rc.hyper.kmeans_iters;
  apply_env_seed(h, o.seed->count() > 0 || cfg_keys.contains("seed"));
  return h;
}

void add_hyper_options(CLI::App* cmd, RunConfig& rc, HyperOpts& o) {
  cmd->add_option("--config", rc.config, "JSON config file; flags override its values");
  o.lambda = cmd->add_option("--lambda", rc.hyper.lambda, "Classification loss weight");
  o.tau = cmd->add_option("--tau", rc.hyper.tau, "Distortion loss weight");
  o.mu = cmd->add_option("--mu", rc.hyper.mu, "Hard reconstruction weight");
  o.nu = cmd->add_option("--nu", rc.hyper.nu, "Soft/hard match weight");
  o.gamma = cmd->add_option("--gamma", rc.hyper.gamma, "Soft-assignment sharpness");
  o.eta = cmd->add_option("--eta", rc.hyper.eta, "Learning rate");
  o.epochs = cmd->add_option("--epochs", rc.hyper.epochs, "Training epochs");
  o.batch = cmd->add_option("--batch", rc.hyper.batch_size, "Mini-batch size");
  o.optimizer = cmd->add_option("--optimizer", rc.optimizer, "adam or sgd");
  o.layers = cmd->add_option("--layers", rc.hyper.layers, "Quantization layers L");
  o.codebook_size = cmd->add_option("--codebook-size", rc.hyper.codebook_size,
                                    "Codewords per layer K (power of two for encoding)");
  o.embed_dim = cmd->add_option("--embed-dim", rc.hyper.embed_dim, "Semantic embedding width");
  o.metric = cmd->add_option("--metric", rc.metric, "Soft-assignment metric: euclidean or cosine");
  o.cls_mode = cmd->add_option("--cls-mode", rc.cls_mode, "single_label or multi_label");
  o.cls_tap = cmd->add_option("--cls-tap", rc.cls_tap, "Classifier input: semantic or feature");
  o.supervised = cmd->add_flag("--supervised,!--unsupervised", rc.supervised,
                               "Train the projection/classification head "
                               "(default: on exactly when labels are given)");
  o.seed = cmd->add_option("--seed", rc.hyper.seed, "RNG seed (PROGQ_SEED as fallback)");
  o.kmeans_iters = cmd->add_option("--kmeans-iters", rc.hyper.kmeans_iters,
                                   "K-means iterations for codebook initialization");
}

// ---------------------------------------------------------------------------
// Shared plumbing.
// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const int workers = std::max(1, threads);
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!error) error = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::ostream& open_report(std::ofstream& file, const std::string& path) {
  if (path.empty()) return std::cout;
  file.open(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open output file " + path);
  return file;
}

struct LoadedBundle {
  Matrix features;
  std::vector<LabelAnnotation> labels;
  Matrix label_embeddings;
  dpq::SplitManifest splits;
  bool has_splits = false;
};

LoadedBundle load_inputs(const RunConfig& rc, bool need_labels, bool need_splits) {
  LoadedBundle b;
  b.features = dpq::read_fvecs(std::filesystem::path(rc.data));
  if (!rc.labels.empty()) b.labels = dpq::read_labels(std::filesystem::path(rc.labels));
  else if (need_labels) throw std::runtime_error("this command requires --labels");
  if (!rc.label_embeddings.empty())
    b.label_embeddings = dpq::read_label_embeddings(std::filesystem::path(rc.label_embeddings));
  if (!rc.splits.empty()) {
    b.splits = dpq::read_splits(rc.splits);
    b.has_splits = true;
  } else if (need_splits) {
    throw std::runtime_error("this command requires --splits");
  }
  if (b.has_splits) {
    dpq::DatasetBundle full{b.features, b.labels, b.label_embeddings, b.splits};
    dpq::validate_bundle(full);
  }
  return b;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train(const RunConfig& rc, const HyperOpts& opts) {
  std::set<std::string> cfg_keys;
  Hyperparameters h = resolve_hyper(rc, opts, cfg_keys);

  LoadedBundle b = load_inputs(rc, /*need_labels=*/false, /*need_splits=*/false);
  Matrix train_x = b.features;
  std::vector<LabelAnnotation> train_y = b.labels;
  if (b.has_splits) {
    train_x = dpq::take_rows(b.features, b.splits.train);
    if (!b.labels.empty()) train_y = dpq::take_labels(b.labels, b.splits.train);
  }

  // Unless told otherwise, supervision follows the presence of labels.
  if (opts.supervised->count() == 0 && !cfg_keys.contains("supervised"))
    h.supervised = !train_y.empty();

  const ProgressiveModel model =
      dpq::train(train_x, train_y, h, b.label_embeddings.rows() ? &b.label_embeddings : nullptr);
  dpq::write_model(std::filesystem::path(rc.out), model);

  std::cout << "trained " << model.layer_count() << " layers x " << h.codebook_size
            << " codewords on " << train_x.rows() << " points";
  if (!model.diag.total.empty())
    std::cout << "; final loss " << std::setprecision(6) << model.diag.total.back();
  std::cout << "\nwrote " << rc.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

int run_encode(const RunConfig& rc) {
  const ProgressiveModel model = dpq::read_model(std::filesystem::path(rc.model));
  LoadedBundle b = load_inputs(rc, false, false);
  const Matrix rows = b.has_splits ? dpq::take_rows(b.features, b.splits.database) : b.features;
  const EncodedDatabase db = dpq::encode_database(rows, model, rc.threads);
  dpq::write_database_file(rc.out, db);
  std::cout << "encoded " << db.size() << " points: " << db.layers << " layers x "
            << db.bits_per_layer << " bits\nwrote " << rc.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

std::vector<RetrievalResult> run_queries(const Matrix& queries, const EncodedDatabase& db,
                                         const ProgressiveModel& model, std::size_t k,
                                         std::size_t l, int threads) {
  std::vector<RetrievalResult> results(queries.rows());
  parallel_for(queries.rows(), threads,
               [&](std::size_t qi) { results[qi] = dpq::topk(queries.row(qi), db, model, k, l); });
  return results;
}

int run_search(const RunConfig& rc) {
  const ProgressiveModel model = dpq::read_model(std::filesystem::path(rc.model));
  const EncodedDatabase db = dpq::read_database_file(rc.db);
  const Matrix queries = dpq::read_fvecs(std::filesystem::path(rc.data));
  const std::size_t l = rc.l_active == 0 ? db.layers : rc.l_active;

  const auto results = run_queries(queries, db, model, rc.k, l, rc.threads);

  std::ofstream file;
  std::ostream& out = open_report(file, rc.out);
  out << "query,rank,id,distance\n" << std::setprecision(17);
  for (std::size_t qi = 0; qi < results.size(); ++qi)
    for (std::size_t r = 0; r < results[qi].ids.size(); ++r)
      out << qi << ',' << r + 1 << ',' << results[qi].ids[r] << ','
          << results[qi].distances[r] << '\n';
  if (!out) throw std::runtime_error("search: write failed");
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int run_eval(const RunConfig& rc) {
  const ProgressiveModel model = dpq::read_model(std::filesystem::path(rc.model));
  LoadedBundle b = load_inputs(rc, /*need_labels=*/true, /*need_splits=*/true);

  const Matrix db_rows = dpq::take_rows(b.features, b.splits.database);
  EncodedDatabase db;
  if (!rc.db.empty()) {
    db = dpq::read_database_file(rc.db);
    if (db.size() != b.splits.database.size())
      throw std::runtime_error("eval: encoded database has " + std::to_string(db.size()) +
                               " points but the split lists " +
                               std::to_string(b.splits.database.size()));
  } else {
    db = dpq::encode_database(db_rows, model, rc.threads);
  }

  const Matrix queries = dpq::take_rows(b.features, b.splits.query);
  const auto query_labels = dpq::take_labels(b.labels, b.splits.query);
  const auto db_labels = dpq::take_labels(b.labels, b.splits.database);
  const dpq::RelevanceFn relevant = [&](std::size_t q, std::uint32_t id) {
    return dpq::labels_match(query_labels[q], db_labels[id]);
  };

  const std::size_t r_cutoff = rc.r_cutoff == 0 ? db.size() : std::min(rc.r_cutoff, db.size());
  std::size_t k = r_cutoff;
  for (std::size_t p : rc.precision_cutoffs) k = std::max(k, p);
  k = std::min(k, db.size());

  std::ofstream file;
  std::ostream& out = open_report(file, rc.out);
  out << "metric,code_bits,value\n" << std::setprecision(17);

  std::ofstream pr_file;
  if (!rc.pr_out.empty()) {
    pr_file.open(rc.pr_out, std::ios::binary);
    if (!pr_file) throw std::runtime_error("cannot open output file " + rc.pr_out);
    pr_file << "code_bits,recall,precision\n" << std::setprecision(17);
  }

  for (std::size_t l = 1; l <= db.layers; ++l) {
    const auto results = run_queries(queries, db, model, k, l, rc.threads);
    const std::size_t bits = l * db.bits_per_layer;
    out << "map," << bits << ','
        << dpq::mean_average_precision(results, relevant, r_cutoff, db.size()) << '\n';
    const Vec prec = dpq::precision_at_R(results, relevant, rc.precision_cutoffs);
    for (std::size_t i = 0; i < rc.precision_cutoffs.size(); ++i)
      out << "precision@" << rc.precision_cutoffs[i] << ',' << bits << ',' << prec[i] << '\n';
    if (pr_file.is_open())
      for (const auto& pt : dpq::precision_recall_curve(results, relevant, db.size()))
        pr_file << bits << ',' << pt.recall << ',' << pt.precision << '\n';
  }
  if (!out) throw std::runtime_error("eval: write failed");
  if (pr_file.is_open() && !pr_file) throw std::runtime_error("eval: write failed");
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct CheckInstance {
  ProgressiveModel model;
  Matrix batch;
  std::vector<LabelAnnotation> labels;
};

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
  std::normal_distribution<double> gauss(0.0, scale);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
  return m;
}

// Small random instance inside the checking envelope (D<=8, K<=4, L<=2,
// gamma<=50), supervised or codebooks-only.
CheckInstance random_instance(std::mt19937_64& rng, bool supervised, dpq::DistanceMetric metric) {
  const std::size_t d = 2 + rng() % 7;
  const std::size_t k = 2 + rng() % 3;
  const std::size_t layers = 1 + rng() % 2;
  const std::size_t e = supervised ? 2 + rng() % 3 : d;
  const std::size_t classes = 2 + rng() % 4;

  CheckInstance inst;
  inst.model.has_head = supervised;
  if (supervised) {
    inst.model.head.w_embed = random_matrix(rng, d, e, 0.6);
    inst.model.head.w_cls = random_matrix(rng, e, classes, 0.6);
    inst.model.head.cls_bias = Vec(classes, 0.0);
    for (auto& bias : inst.model.head.cls_bias) bias = 0.1 * double(rng() % 7) - 0.3;
    inst.model.sem = dpq::SemanticLabelSet::from_embeddings(random_matrix(rng, classes, e, 1.0));
  }
  for (std::size_t l = 0; l < layers; ++l) {
    dpq::Codebook cb;
    cb.layer_id = static_cast<int>(l + 1);
    cb.codewords = random_matrix(rng, k, e, 1.0);
    inst.model.codebooks.push_back(std::move(cb));
  }
  auto& h = inst.model.hyper;
  h.layers = static_cast<int>(layers);
  h.codebook_size = static_cast<int>(k);
  h.feature_dim = static_cast<int>(d);
  h.embed_dim = static_cast<int>(e);
  h.gamma = 1.0 + double(rng() % 50);
  h.train_metric = metric;
  h.supervised = supervised;

  inst.batch = random_matrix(rng, 2, d, 1.0);
  if (supervised) {
    inst.labels.resize(2);
    for (auto& ann : inst.labels)
      ann.positives = {static_cast<std::uint16_t>(rng() % classes)};
  }
  return inst;
}

int run_gradcheck(const RunConfig& rc, std::uint64_t seed) {
  constexpr double kTolerance = 1e-4;
  double worst = 0.0;
  std::mt19937_64 rng(seed);
  for (int t = 0; t < rc.trials; ++t) {
    const bool supervised = t % 2 == 0;
    const auto metric =
        (t / 2) % 2 == 0 ? dpq::DistanceMetric::cosine : dpq::DistanceMetric::euclidean;
    const CheckInstance inst = random_instance(rng, supervised, metric);
    const dpq::Gradients analytic =
        dpq::analytic_gradients(inst.batch, inst.labels, inst.model);
    const dpq::Gradients fd = dpq::finite_diff_gradients(
        [&](const ProgressiveModel& m) {
          return dpq::batch_loss(inst.batch, inst.labels, m).total;
        },
        inst.model, rc.fd_epsilon);
    worst = std::max(worst, dpq::max_relative_error(analytic, fd));
  }
  std::cout << "gradcheck: " << rc.trials << " trials, max relative error = "
            << std::setprecision(3) << std::scientific << worst << std::defaultfloat
            << " (tolerance " << kTolerance << ")\n";
  if (worst < kTolerance) {
    std::cout << "gradcheck PASS\n";
    return 0;
  }
  std::cout << "gradcheck FAIL\n";
  return 1;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

double time_queries(std::size_t n_queries, const std::function<void(std::size_t)>& one) {
  using clock = std::chrono::steady_clock;
  std::size_t done = 0;
  const auto start = clock::now();
  double elapsed = 0.0;
  do {
    for (std::size_t qi = 0; qi < n_queries; ++qi) one(qi);
    done += n_queries;
    elapsed = std::chrono::duration<double>(clock::now() - start).count();
  } while (elapsed < 0.3);
  return double(done) / elapsed;
}

int run_bench(const RunConfig& rc, const HyperOpts& opts) {
  std::set<std::string> cfg_keys;
  Hyperparameters h = resolve_hyper(rc, opts, cfg_keys);
  h.supervised = false;  // the bench compares quantizers on raw features
  if (opts.codebook_size->count() == 0 && !cfg_keys.contains("codebook_size"))
    h.codebook_size = 16;
  if (opts.epochs->count() == 0 && !cfg_keys.contains("epochs")) h.epochs = 16;

  if (h.layers <= 0 || rc.dim % static_cast<std::size_t>(h.layers) != 0)
    throw std::runtime_error(
        "bench: --dim must be divisible by --layers (the pq baseline splits "
        "features into one subspace per layer)");

  dpq::SyntheticSpec spec;
  spec.clusters = rc.clusters;
  spec.per_cluster = rc.per_cluster;
  spec.dim = rc.dim;
  spec.noise = rc.noise;
  spec.seed = h.seed;
  const dpq::DatasetBundle bundle = dpq::make_synthetic(spec);
  const Matrix train_x = dpq::take_rows(bundle.features, bundle.splits.train);
  const Matrix db_x = dpq::take_rows(bundle.features, bundle.splits.database);
  const Matrix queries = dpq::take_rows(bundle.features, bundle.splits.query);

  const auto layers = static_cast<std::size_t>(h.layers);
  const auto k_codewords = static_cast<std::size_t>(h.codebook_size);
  const std::size_t topk = std::min<std::size_t>(10, db_x.rows());

  std::cout << "benchmark: " << db_x.rows() << " database points, " << queries.rows()
            << " queries, D=" << db_x.cols() << ", " << layers << " layers x "
            << dpq::bits_for_codebook_size(k_codewords) << " bits\n";
  std::cout << "method,distortion,queries_per_sec\n" << std::setprecision(6);

  const auto report_cascade = [&](const char* name, const ProgressiveModel& model) {
    const double distortion = dpq::mean_residual_distortion(db_x, model.codebooks);
    const EncodedDatabase db = dpq::encode_database(db_x, model, rc.threads);
    const double qps = time_queries(queries.rows(), [&](std::size_t qi) {
      (void)dpq::topk(queries.row(qi), db, model, topk, layers);
    });
    std::cout << name << ',' << distortion << ',' << qps << '\n';
  };

  // Gradient-trained progressive quantizer.
  report_cascade("dpq", dpq::train(train_x, {}, h));

  // Stacked k-means on residuals: same cascade, no gradient refinement.
  {
    ProgressiveModel rq;
    rq.codebooks = dpq::train_residual_baseline(train_x, layers, k_codewords, h.kmeans_iters,
                                                h.seed);
    rq.hyper = h;
    rq.hyper.feature_dim = static_cast<int>(train_x.cols());
    report_cascade("residual_kmeans", rq);
  }

  // Product quantization at the same bit budget: L subspaces of D/L dims.
  {
    const auto books =
        dpq::train_pq_baseline(train_x, layers, k_codewords, h.kmeans_iters, h.seed);
    const std::size_t sub = db_x.cols() / layers;

    double distortion = 0.0;
    std::vector<std::vector<dpq::AssignmentIndex>> codes(db_x.rows());
    for (std::size_t i = 0; i < db_x.rows(); ++i) {
      codes[i].resize(layers);
      for (std::size_t s = 0; s < layers; ++s) {
        const dpq::ConstSpan slice(db_x.row(i).data() + s * sub, sub);
        const auto a = dpq::hard_assign(slice, books[s]);
        codes[i][s] = a;
        distortion += dpq::squared_distance(slice, books[s].codeword(a));
      }
    }
    distortion /= double(db_x.rows());

    const double qps = time_queries(queries.rows(), [&](std::size_t qi) {
      // Per-subspace ADC tables, then a scan summing one lookup per subspace.
      std::vector<Vec> tables(layers, Vec(k_codewords));
      for (std::size_t s = 0; s < layers; ++s) {
        const dpq::ConstSpan slice(queries.row(qi).data() + s * sub, sub);
        for (std::size_t c = 0; c < k_codewords; ++c)
          tables[s][c] = dpq::squared_distance(slice, books[s].codeword(c));
      }
      std::priority_queue<std::pair<double, std::uint32_t>> heap;
      for (std::size_t i = 0; i < codes.size(); ++i) {
        double dist = 0.0;
        for (std::size_t s = 0; s < layers; ++s) dist += tables[s][codes[i][s]];
        if (heap.size() < topk) heap.emplace(dist, std::uint32_t(i));
        else if (dist < heap.top().first) {
          heap.pop();
          heap.emplace(dist, std::uint32_t(i));
        }
      }
    });
    std::cout << "pq," << distortion << ',' << qps << '\n';
  }

  // Uncompressed linear scan for reference.
  {
    const double qps = time_queries(queries.rows(), [&](std::size_t qi) {
      std::priority_queue<std::pair<double, std::uint32_t>> heap;
      for (std::size_t i = 0; i < db_x.rows(); ++i) {
        const double dist = dpq::squared_distance(queries.row(qi), db_x.row(i));
        if (heap.size() < topk) heap.emplace(dist, std::uint32_t(i));
        else if (dist < heap.top().first) {
          heap.pop();
          heap.emplace(dist, std::uint32_t(i));
        }
      }
    });
    std::cout << "exact,0,"  << qps << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int run_synth(const RunConfig& rc, std::uint64_t seed) {
  dpq::SyntheticSpec spec;
  spec.clusters = rc.clusters;
  spec.per_cluster = rc.per_cluster;
  spec.dim = rc.dim;
  spec.noise = rc.noise;
  spec.seed = seed;
  const dpq::DatasetBundle bundle = dpq::make_synthetic(spec);

  const std::filesystem::path dir(rc.out_dir);
  std::filesystem::create_directories(dir);
  const auto features_path = dir / "features.fvecs";
  const auto labels_path = dir / "labels.bin";
  const auto splits_path = dir / "splits.json";
  dpq::write_fvecs(features_path, bundle.features);
  dpq::write_labels(labels_path, bundle.labels);
  dpq::write_splits(splits_path, bundle.splits);
  std::cout << "wrote " << features_path.string() << "\nwrote " << labels_path.string()
            << "\nwrote " << splits_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive residual quantization: train, encode, search, evaluate"};
  app.require_subcommand(1);

  RunConfig rc;
  HyperOpts train_opts;
  HyperOpts bench_opts;

  CLI::App* train = app.add_subcommand("train", "Fit codebooks (and head) on a feature file");
  train->add_option("--data", rc.data, "Feature vectors (fvecs)")->required();
  train->add_option("--labels", rc.labels, "Class annotations");
  train->add_option("--label-embeddings", rc.label_embeddings, "Class embedding matrix");
  train->add_option("--splits", rc.splits, "Split manifest (JSON); trains on its train ids");
  train->add_option("--out", rc.out, "Output model file")->required();
  add_hyper_options(train, rc, train_opts);

  CLI::App* encode = app.add_subcommand("encode", "Quantize a feature file into packed codes");
  encode->add_option("--model", rc.model, "Trained model file")->required();
  encode->add_option("--data", rc.data, "Feature vectors (fvecs)")->required();
  encode->add_option("--splits", rc.splits, "Encode only the manifest's database ids");
  encode->add_option("--out", rc.out, "Output encoded-database file")->required();
  encode->add_option("--threads", rc.threads, "Worker threads (1 = deterministic reference)");

  CLI::App* search = app.add_subcommand("search", "Run top-k queries against encoded codes");
  search->add_option("--model", rc.model, "Trained model file")->required();
  search->add_option("--db", rc.db, "Encoded database file")->required();
  search->add_option("--queries", rc.data, "Query vectors (fvecs)")->required();
  search->add_option("-k,--k", rc.k, "Neighbors per query");
  search->add_option("--l", rc.l_active, "Code prefix length in layers (default: all)");
  search->add_option("--out", rc.out, "Result CSV (default: stdout)");
  search->add_option("--threads", rc.threads, "Worker threads");

  CLI::App* eval = app.add_subcommand("eval", "Retrieval metrics against labeled ground truth");
  eval->add_option("--model", rc.model, "Trained model file")->required();
  eval->add_option("--data", rc.data, "Feature vectors (fvecs)")->required();
  eval->add_option("--labels", rc.labels, "Class annotations")->required();
  eval->add_option("--splits", rc.splits, "Split manifest (JSON)")->required();
  eval->add_option("--db", rc.db, "Encoded database file (default: encode now)");
  eval->add_option("--r", rc.r_cutoff, "mAP cutoff R (0 = whole database)");
  eval->add_option("--precision-at", rc.precision_cutoffs, "Cutoffs for precision@R rows");
  eval->add_option("--out", rc.out, "Metrics CSV (default: stdout)");
  eval->add_option("--pr-out", rc.pr_out, "Also write the precision-recall curve CSV here");
  eval->add_option("--threads", rc.threads, "Worker threads");

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Compare analytic gradients against central finite differences");
  std::uint64_t gc_seed = 0;
  CLI::Option* gc_seed_opt = gradcheck->add_option("--seed", gc_seed, "Base RNG seed");
  gradcheck->add_option("--trials", rc.trials, "Random instances to check");
  gradcheck->add_option("--eps", rc.fd_epsilon, "Finite-difference step");

  CLI::App* bench = app.add_subcommand(
      "bench", "Distortion and query throughput: gradient-trained cascade vs k-means baselines");
  bench->add_option("--clusters", rc.clusters, "Synthetic clusters");
  bench->add_option("--per-cluster", rc.per_cluster, "Points per cluster");
  bench->add_option("--dim", rc.dim, "Feature dimension");
  bench->add_option("--noise", rc.noise, "Within-cluster noise");
  bench->add_option("--threads", rc.threads, "Worker threads for encoding");
  add_hyper_options(bench, rc, bench_opts);

  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic labeled benchmark to a directory");
  synth->add_option("--out-dir", rc.out_dir, "Output directory")->required();
  synth->add_option("--clusters", rc.clusters, "Clusters");
  synth->add_option("--per-cluster", rc.per_cluster, "Points per cluster");
  synth->add_option("--dim", rc.dim, "Feature dimension");
  synth->add_option("--noise", rc.noise, "Within-cluster noise");
  std::uint64_t synth_seed = 0;
  CLI::Option* synth_seed_opt = synth->add_option("--seed", synth_seed, "RNG seed");

  try {
    app.parse(argc, argv);

    if (app.got_subcommand(train)) return run_train(rc, train_opts);
    if (app.got_subcommand(encode)) return run_encode(rc);
    if (app.got_subcommand(search)) return run_search(rc);
    if (app.got_subcommand(eval)) return run_eval(rc);
    if (app.got_subcommand(gradcheck)) {
      Hyperparameters h;
      h.seed = gc_seed;
      apply_env_seed(h, gc_seed_opt->count() > 0);
      return run_gradcheck(rc, h.seed);
    }
    if (app.got_subcommand(bench)) return run_bench(rc, bench_opts);
    if (app.got_subcommand(synth)) {
      Hyperparameters h;
      h.seed = synth_seed;
      apply_env_seed(h, synth_seed_opt->count() > 0);
      return run_synth(rc, h.seed);
    }
    return 2;  // unreachable: require_subcommand guarantees a match
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);                                     // prints the usage diagnostic
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
