#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpq/codebook.hpp"
#include "dpq/common.hpp"
#include "dpq/quantizer.hpp"
#include "dpq/supervised.hpp"

namespace dpq {

enum class Optimizer : std::uint8_t { adam = 0, sgd = 1 };

/// Every knob of a training run. Field names double as the JSON config keys.
struct Hyperparameters {
  // Loss weights: total = L_S + lambda * L_C + tau * E.
  double lambda = 0.1;
  double tau = 1.0;
  double mu = 1.0;
  double nu = 0.1;
  double gamma = 20.0;
  std::vector<double> layer_weights;  // empty -> 1.0 per layer

  // Optimization.
  double eta = 1e-3;
  int epochs = 64;
  int batch_size = 16;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // Architecture.
  int layers = 4;         // L
  int codebook_size = 256;  // K
  int feature_dim = 0;    // D, taken from data when 0
  int embed_dim = 300;    // E

  // Behavior switches.
  DistanceMetric train_metric = DistanceMetric::cosine;
  ClassificationMode cls_mode = ClassificationMode::single_label;
  ClassifierTap cls_tap = ClassifierTap::semantic;
  bool supervised = true;  // false trains codebooks only, on raw features

  std::uint64_t seed = 0;
  int kmeans_iters = 25;  // codebook initialization

  DistortionWeights distortion_weights() const;
};

void validate_hyperparameters(const Hyperparameters& hyper);

/// Per-epoch training curves, one entry per epoch.
struct TrainingDiagnostics {
  std::vector<double> total;
  std::vector<double> margin;      // L_S
  std::vector<double> classification;  // L_C
  std::vector<double> distortion;  // E
};

/// The trained artifact: L codebooks over the Q-Block input space, plus the
/// projection/classification head and label embeddings when supervised.
struct ProgressiveModel {
  std::vector<Codebook> codebooks;
  ProjectionHead head;
  SemanticLabelSet sem;
  bool has_head = false;
  Hyperparameters hyper;
  TrainingDiagnostics diag;

  std::size_t layer_count() const { return codebooks.size(); }
  /// Dimension the cascade quantizes: E with a head, D without.
  std::size_t code_dim() const { return codebooks.empty() ? 0 : codebooks.front().dim(); }

  /// The vector the Q-Block sees for a raw feature x.
  Vec qblock_input(ConstSpan x) const;
};

void validate_model(const ProgressiveModel& model);

/// Scalar total plus the three per-term values of one sample.
struct TotalLossBreakdown {
  double margin = 0.0;          // L_S
  double classification = 0.0;  // L_C
  double distortion = 0.0;      // E
  double total = 0.0;           // L_S + lambda L_C + tau E
};

/// Supervised per-sample loss: margin + classification + distortion of the
/// projected vector.
TotalLossBreakdown total_loss(ConstSpan x, const LabelAnnotation& labels,
                              const ProgressiveModel& model);

/// Headless per-sample loss: distortion terms only.
TotalLossBreakdown total_loss(ConstSpan x, const ProgressiveModel& model);

/// Mean breakdown over a batch; annotations may be empty for headless models.
TotalLossBreakdown batch_loss(const Matrix& features, std::span<const LabelAnnotation> labels,
                              const ProgressiveModel& model);

}  // namespace dpq
