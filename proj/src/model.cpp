#include "dpq/model.hpp"

#include <cmath>

namespace dpq {

DistortionWeights Hyperparameters::distortion_weights() const {
  DistortionWeights w;
  if (layer_weights.empty())
    w.layer_weights.assign(static_cast<std::size_t>(layers), 1.0);
  else
    w.layer_weights = layer_weights;
  w.mu = mu;
  w.nu = nu;
  w.gamma = gamma;
  return w;
}

void validate_hyperparameters(const Hyperparameters& hyper) {
  require(hyper.lambda >= 0.0 && hyper.tau >= 0.0 && hyper.mu >= 0.0 && hyper.nu >= 0.0,
          "hyperparameters: loss weights must be nonnegative");
  require(hyper.gamma > 0.0, "hyperparameters: gamma must be positive");
  require(hyper.eta > 0.0, "hyperparameters: learning rate must be positive");
  require(hyper.epochs >= 0, "hyperparameters: epochs must be nonnegative");
  require(hyper.batch_size >= 1, "hyperparameters: batch size must be at least 1");
  require(hyper.layers >= 1, "hyperparameters: need at least one layer");
  require(hyper.codebook_size >= 1, "hyperparameters: need at least one codeword");
  require(hyper.embed_dim >= 1, "hyperparameters: embedding dim must be positive");
  require(hyper.beta1 >= 0.0 && hyper.beta1 < 1.0 && hyper.beta2 >= 0.0 && hyper.beta2 < 1.0,
          "hyperparameters: moment decays must lie in [0, 1)");
  require(hyper.adam_eps > 0.0, "hyperparameters: optimizer epsilon must be positive");
  require(hyper.kmeans_iters >= 0, "hyperparameters: kmeans iterations must be nonnegative");
  if (!hyper.layer_weights.empty()) {
    require(hyper.layer_weights.size() == static_cast<std::size_t>(hyper.layers),
            "hyperparameters: layer weight count mismatch");
    for (double w : hyper.layer_weights)
      require(w >= 0.0, "hyperparameters: layer weights must be nonnegative");
  }
}

Vec ProgressiveModel::qblock_input(ConstSpan x) const {
  if (has_head) return project(x, head);
  return Vec(x.begin(), x.end());
}

void validate_model(const ProgressiveModel& model) {
  require(!model.codebooks.empty(), "model: no codebooks");
  const std::size_t dim = model.codebooks.front().dim();
  for (const auto& cb : model.codebooks) {
    validate_codebook(cb);
    require(cb.dim() == dim, "model: codebook dims differ");
  }
  if (model.has_head) {
    validate_head(model.head);
    require(model.sem.class_count() >= 1, "model: supervised model without label set");
    require(model.sem.embed_dim() == model.head.embed_dim(),
            "model: label embedding dim does not match projection");
    require(dim == model.head.embed_dim(), "model: codebooks must live in the projected space");
  }
}

namespace {

TotalLossBreakdown loss_impl(ConstSpan x, const LabelAnnotation* labels,
                             const ProgressiveModel& model) {
  const Hyperparameters& hyper = model.hyper;
  TotalLossBreakdown out;

  Vec v = model.qblock_input(x);
  if (model.has_head) {
    require(labels != nullptr, "total_loss: supervised model needs labels");
    out.margin = adaptive_margin_loss(v, *labels, model.sem);
    ConstSpan tap_input = model.head.tap == ClassifierTap::semantic ? ConstSpan(v) : x;
    Vec logits = class_logits_from_tap(tap_input, model.head);
    out.classification = classification_loss_from_logits(logits, *labels, hyper.cls_mode);
  }

  CascadeState state = forward_cascade(v, model.codebooks, hyper.gamma, CascadeMode::training,
                                       hyper.train_metric);
  out.distortion = distortion(v, state, hyper.distortion_weights()).total;
  out.total = out.margin + hyper.lambda * out.classification + hyper.tau * out.distortion;
  return out;
}

}  // namespace

TotalLossBreakdown total_loss(ConstSpan x, const LabelAnnotation& labels,
                              const ProgressiveModel& model) {
  return loss_impl(x, &labels, model);
}

TotalLossBreakdown total_loss(ConstSpan x, const ProgressiveModel& model) {
  require(!model.has_head, "total_loss: supervised model needs labels");
  return loss_impl(x, nullptr, model);
}

TotalLossBreakdown batch_loss(const Matrix& features, std::span<const LabelAnnotation> labels,
                              const ProgressiveModel& model) {
  require(features.rows() >= 1, "batch_loss: empty batch");
  if (model.has_head)
    require(labels.size() == features.rows(), "batch_loss: label/feature count mismatch");
  TotalLossBreakdown sum;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    TotalLossBreakdown one = model.has_head ? total_loss(features.row(i), labels[i], model)
                                            : total_loss(features.row(i), model);
    sum.margin += one.margin;
    sum.classification += one.classification;
    sum.distortion += one.distortion;
    sum.total += one.total;
  }
  const double inv = 1.0 / static_cast<double>(features.rows());
  sum.margin *= inv;
  sum.classification *= inv;
  sum.distortion *= inv;
  sum.total *= inv;
  return sum;
}

}  // namespace dpq
