#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dpq/index.hpp"
#include "dpq/io.hpp"
#include "dpq/search.hpp"
#include "dpq/trainer.hpp"

namespace py = pybind11;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelLists = std::vector<std::vector<std::uint16_t>>;

dpq::Matrix as_matrix(const DoubleArray& arr) {
  const py::buffer_info buf = arr.request();
  if (buf.ndim != 2) throw std::invalid_argument("expected a 2-D array of floats");
  dpq::Matrix m(static_cast<std::size_t>(buf.shape[0]), static_cast<std::size_t>(buf.shape[1]));
  std::memcpy(m.data(), buf.ptr, m.size() * sizeof(double));
  return m;
}

dpq::Vec as_vec(const DoubleArray& arr) {
  const py::buffer_info buf = arr.request();
  if (buf.ndim != 1) throw std::invalid_argument("expected a 1-D array of floats");
  const auto* p = static_cast<const double*>(buf.ptr);
  return dpq::Vec(p, p + buf.shape[0]);
}

py::array_t<double> matrix_array(const dpq::Matrix& m) {
  py::array_t<double> arr({m.rows(), m.cols()});
  std::memcpy(arr.mutable_data(), m.data(), m.size() * sizeof(double));
  return arr;
}

template <typename T>
py::array_t<T> vector_array(const std::vector<T>& v) {
  py::array_t<T> arr(static_cast<py::ssize_t>(v.size()));
  std::memcpy(arr.mutable_data(), v.data(), v.size() * sizeof(T));
  return arr;
}

std::vector<dpq::LabelAnnotation> as_annotations(const LabelLists& raw) {
  std::vector<dpq::LabelAnnotation> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& ids = out[i].positives;
    ids = raw[i];
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  }
  return out;
}

LabelLists annotation_lists(std::span<const dpq::LabelAnnotation> labels) {
  LabelLists out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i].positives;
  return out;
}

py::dict breakdown_dict(const dpq::TotalLossBreakdown& b) {
  py::dict d;
  d["margin"] = b.margin;
  d["classification"] = b.classification;
  d["distortion"] = b.distortion;
  d["total"] = b.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_dpq, m) {
  m.doc() =
      "Progressive residual quantization: gradient-trained codebooks, prefix-valid binary "
      "codes, and asymmetric-distance search.";
  m.attr("__version__") = "0.1.0";

  py::enum_<dpq::Optimizer>(m, "Optimizer")
      .value("adam", dpq::Optimizer::adam)
      .value("sgd", dpq::Optimizer::sgd);

  py::enum_<dpq::DistanceMetric>(m, "DistanceMetric")
      .value("euclidean", dpq::DistanceMetric::euclidean)
      .value("cosine", dpq::DistanceMetric::cosine);

  py::enum_<dpq::ClassificationMode>(m, "ClassificationMode")
      .value("single_label", dpq::ClassificationMode::single_label)
      .value("multi_label", dpq::ClassificationMode::multi_label);

  py::enum_<dpq::ClassifierTap>(m, "ClassifierTap")
      .value("semantic", dpq::ClassifierTap::semantic)
      .value("feature", dpq::ClassifierTap::feature);

  py::class_<dpq::Hyperparameters>(m, "Hyperparameters",
                                   "Every knob of a training run. `lambda_` carries the "
                                   "trailing underscore only in python; the config-file key "
                                   "is `lambda`.")
      .def(py::init<>())
      .def_readwrite("lambda_", &dpq::Hyperparameters::lambda)
      .def_readwrite("tau", &dpq::Hyperparameters::tau)
      .def_readwrite("mu", &dpq::Hyperparameters::mu)
      .def_readwrite("nu", &dpq::Hyperparameters::nu)
      .def_readwrite("gamma", &dpq::Hyperparameters::gamma)
      .def_readwrite("layer_weights", &dpq::Hyperparameters::layer_weights)
      .def_readwrite("eta", &dpq::Hyperparameters::eta)
      .def_readwrite("epochs", &dpq::Hyperparameters::epochs)
      .def_readwrite("batch_size", &dpq::Hyperparameters::batch_size)
      .def_readwrite("optimizer", &dpq::Hyperparameters::optimizer)
      .def_readwrite("beta1", &dpq::Hyperparameters::beta1)
      .def_readwrite("beta2", &dpq::Hyperparameters::beta2)
      .def_readwrite("adam_eps", &dpq::Hyperparameters::adam_eps)
      .def_readwrite("layers", &dpq::Hyperparameters::layers)
      .def_readwrite("codebook_size", &dpq::Hyperparameters::codebook_size)
      .def_readwrite("feature_dim", &dpq::Hyperparameters::feature_dim)
      .def_readwrite("embed_dim", &dpq::Hyperparameters::embed_dim)
      .def_readwrite("train_metric", &dpq::Hyperparameters::train_metric)
      .def_readwrite("cls_mode", &dpq::Hyperparameters::cls_mode)
      .def_readwrite("cls_tap", &dpq::Hyperparameters::cls_tap)
      .def_readwrite("supervised", &dpq::Hyperparameters::supervised)
      .def_readwrite("seed", &dpq::Hyperparameters::seed)
      .def_readwrite("kmeans_iters", &dpq::Hyperparameters::kmeans_iters);

  py::class_<dpq::TrainingDiagnostics>(m, "TrainingDiagnostics",
                                       "Per-epoch training curves.")
      .def_readonly("total", &dpq::TrainingDiagnostics::total)
      .def_readonly("margin", &dpq::TrainingDiagnostics::margin)
      .def_readonly("classification", &dpq::TrainingDiagnostics::classification)
      .def_readonly("distortion", &dpq::TrainingDiagnostics::distortion);

  py::class_<dpq::ProgressiveModel>(m, "Model",
                                    "Trained codebooks plus the projection/classification "
                                    "head when supervised.")
      .def_property_readonly("layers",
                             [](const dpq::ProgressiveModel& model) { return model.layer_count(); })
      .def_property_readonly("code_dim", &dpq::ProgressiveModel::code_dim)
      .def_property_readonly("codebook_size",
                             [](const dpq::ProgressiveModel& model) {
                               return model.codebooks.empty() ? std::size_t(0)
                                                              : model.codebooks.front().size();
                             })
      .def_property_readonly("supervised",
                             [](const dpq::ProgressiveModel& model) { return model.has_head; })
      .def_readonly("hyper", &dpq::ProgressiveModel::hyper)
      .def_readonly("diagnostics", &dpq::ProgressiveModel::diag)
      .def("__repr__", [](const dpq::ProgressiveModel& model) {
        return "<dpq.Model layers=" + std::to_string(model.layer_count()) +
               " codebook_size=" +
               std::to_string(model.codebooks.empty() ? 0 : model.codebooks.front().size()) +
               " code_dim=" + std::to_string(model.code_dim()) +
               (model.has_head ? " supervised>" : ">");
      });

  py::class_<dpq::EncodedDatabase>(m, "EncodedDatabase",
                                   "Packed codes plus the per-prefix cross-term cache; any "
                                   "code length 1..layers is searchable.")
      .def("__len__", &dpq::EncodedDatabase::size)
      .def_readonly("layers", &dpq::EncodedDatabase::layers)
      .def_readonly("bits_per_layer", &dpq::EncodedDatabase::bits_per_layer)
      .def_readonly("model_ref", &dpq::EncodedDatabase::model_ref)
      .def(
          "indices",
          [](const dpq::EncodedDatabase& db, std::size_t i) {
            if (i >= db.size()) throw std::out_of_range("item index out of range");
            return dpq::unpack_code(db.codes[i], db.layers, db.bits_per_layer);
          },
          py::arg("i"), "Per-layer codeword indices of item i.");

  py::class_<dpq::RetrievalResult>(m, "RetrievalResult",
                                   "Ids and distances in ascending (distance, id) order.")
      .def("__len__", [](const dpq::RetrievalResult& r) { return r.ids.size(); })
      .def_property_readonly(
          "ids", [](const dpq::RetrievalResult& r) { return vector_array(r.ids); })
      .def_property_readonly(
          "distances", [](const dpq::RetrievalResult& r) { return vector_array(r.distances); })
      .def_readonly("k_requested", &dpq::RetrievalResult::k_requested)
      .def_readonly("l_active", &dpq::RetrievalResult::l_active)
      .def_readonly("k_clamped", &dpq::RetrievalResult::k_clamped);

  m.def(
      "train",
      [](const DoubleArray& features, const std::optional<LabelLists>& labels,
         std::optional<dpq::Hyperparameters> hyper,
         const std::optional<DoubleArray>& label_embeddings) {
        const dpq::Matrix x = as_matrix(features);
        std::vector<dpq::LabelAnnotation> y;
        if (labels) y = as_annotations(*labels);
        if (!hyper) {
          hyper.emplace();
          hyper->supervised = !y.empty();
        }
        dpq::Matrix z;
        const dpq::Matrix* z_ptr = nullptr;
        if (label_embeddings) {
          z = as_matrix(*label_embeddings);
          z_ptr = &z;
        }
        const py::gil_scoped_release release;
        return dpq::train(x, y, *hyper, z_ptr);
      },
      py::arg("features"), py::arg("labels") = py::none(), py::arg("hyper") = py::none(),
      py::arg("label_embeddings") = py::none(),
      "Fit codebooks (and the head when supervised) by mini-batch gradient descent.\n\n"
      "features: N x D array. labels: per-row lists of class ids, or None.\n"
      "When hyper is omitted, defaults are used and supervision follows label presence.");

  m.def(
      "encode",
      [](const DoubleArray& features, const dpq::ProgressiveModel& model, int threads) {
        const dpq::Matrix x = as_matrix(features);
        const py::gil_scoped_release release;
        return dpq::encode_database(x, model, threads);
      },
      py::arg("features"), py::arg("model"), py::arg("threads") = 1,
      "Hard-encode every row through the residual cascade. Output order matches input order "
      "for any thread count.");

  m.def(
      "topk",
      [](const DoubleArray& query, const dpq::EncodedDatabase& db,
         const dpq::ProgressiveModel& model, std::size_t k, std::size_t l) {
        const dpq::Vec q = as_vec(query);
        if (l == 0) l = db.layers;
        const py::gil_scoped_release release;
        return dpq::topk(q, db, model, k, l);
      },
      py::arg("query"), py::arg("db"), py::arg("model"), py::arg("k"), py::arg("l") = 0,
      "Exact top-k under the asymmetric quantization distance at code-length prefix l "
      "(0 means all layers).");

  m.def(
      "reconstruct",
      [](const dpq::EncodedDatabase& db, std::size_t i, const dpq::ProgressiveModel& model,
         std::size_t l) {
        if (i >= db.size()) throw std::out_of_range("item index out of range");
        if (l == 0) l = db.layers;
        return vector_array(dpq::decode(db.codes[i], model, l));
      },
      py::arg("db"), py::arg("i"), py::arg("model"), py::arg("l") = 0,
      "Sum of the first l selected codewords of item i (0 means all layers).");

  m.def(
      "mean_average_precision",
      [](const std::vector<dpq::RetrievalResult>& results, const dpq::RelevanceFn& relevant,
         std::size_t db_size, std::size_t r_cutoff) {
        if (r_cutoff == 0) r_cutoff = db_size;
        return dpq::mean_average_precision(results, relevant, r_cutoff, db_size);
      },
      py::arg("results"), py::arg("relevant"), py::arg("db_size"), py::arg("r_cutoff") = 0,
      "Mean average precision at cutoff R (0 means the whole database). `relevant` is called "
      "as relevant(query_index, item_id).");

  m.def(
      "precision_at_r",
      [](const std::vector<dpq::RetrievalResult>& results, const dpq::RelevanceFn& relevant,
         const std::vector<std::size_t>& r_values) {
        return dpq::precision_at_R(results, relevant, r_values);
      },
      py::arg("results"), py::arg("relevant"), py::arg("r_values"),
      "Mean precision within the top R for each requested R.");

  m.def(
      "precision_recall_curve",
      [](const std::vector<dpq::RetrievalResult>& results, const dpq::RelevanceFn& relevant,
         std::size_t db_size) {
        std::vector<std::pair<double, double>> out;
        for (const dpq::PrPoint& p : dpq::precision_recall_curve(results, relevant, db_size))
          out.emplace_back(p.recall, p.precision);
        return out;
      },
      py::arg("results"), py::arg("relevant"), py::arg("db_size"),
      "(recall, precision) pairs at every rank where the mean recall increases.");

  m.def(
      "batch_loss",
      [](const DoubleArray& features, const std::optional<LabelLists>& labels,
         const dpq::ProgressiveModel& model) {
        const dpq::Matrix x = as_matrix(features);
        std::vector<dpq::LabelAnnotation> y;
        if (labels) y = as_annotations(*labels);
        return breakdown_dict(dpq::batch_loss(x, y, model));
      },
      py::arg("features"), py::arg("labels"), py::arg("model"),
      "Mean loss breakdown over a batch: margin, classification, distortion, total.");

  m.def("model_digest", &dpq::model_digest, py::arg("model"),
        "Digest over everything that determines codes; search refuses mismatched databases.");

  m.def(
      "save_model",
      [](const std::filesystem::path& path, const dpq::ProgressiveModel& model) {
        dpq::write_model(path, model);
      },
      py::arg("path"), py::arg("model"), "Write a model file; save/load is exact.");

  m.def(
      "load_model",
      [](const std::filesystem::path& path) { return dpq::read_model(path); }, py::arg("path"),
      "Read a model file.");

  m.def(
      "save_database",
      [](const std::filesystem::path& path, const dpq::EncodedDatabase& db) {
        dpq::write_database_file(path, db);
      },
      py::arg("path"), py::arg("db"), "Write an encoded-database file.");

  m.def(
      "load_database",
      [](const std::filesystem::path& path) { return dpq::read_database_file(path); },
      py::arg("path"), "Read an encoded-database file.");

  m.def(
      "read_fvecs",
      [](const std::filesystem::path& path) { return matrix_array(dpq::read_fvecs(path)); },
      py::arg("path"), "Read an fvecs file as an N x D array.");

  m.def(
      "write_fvecs",
      [](const std::filesystem::path& path, const DoubleArray& features) {
        dpq::write_fvecs(path, as_matrix(features));
      },
      py::arg("path"), py::arg("features"),
      "Write an N x D array as an fvecs file (values narrow to float32).");

  m.def(
      "make_synthetic",
      [](std::size_t clusters, std::size_t per_cluster, std::size_t dim, double noise,
         std::uint64_t seed) {
        const dpq::DatasetBundle bundle =
            dpq::make_synthetic({clusters, per_cluster, dim, noise, seed});
        py::dict out;
        out["features"] = matrix_array(bundle.features);
        out["labels"] = annotation_lists(bundle.labels);
        out["train"] = vector_array(bundle.splits.train);
        out["query"] = vector_array(bundle.splits.query);
        out["database"] = vector_array(bundle.splits.database);
        return out;
      },
      py::arg("clusters") = 10, py::arg("per_cluster") = 200, py::arg("dim") = 16,
      py::arg("noise") = 0.1, py::arg("seed") = 0,
      "Labeled Gaussian-mixture benchmark with train/query/database splits, deterministic "
      "per seed.");
}
