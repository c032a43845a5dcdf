#pragma once

#include <cstdint>
#include <vector>

#include "dpq/common.hpp"

namespace dpq {

/// C label embeddings plus the precomputed pairwise margin matrix
/// delta_ij = 1 - cos(z_i, z_j). Symmetric, zero diagonal, entries in [0, 2].
struct SemanticLabelSet {
  Matrix z;      // C x E, one row per class
  Matrix delta;  // C x C margins

  std::size_t class_count() const { return z.rows(); }
  std::size_t embed_dim() const { return z.cols(); }

  /// Builds the margin matrix from raw label embeddings.
  static SemanticLabelSet from_embeddings(Matrix embeddings);
};

/// Where the classifier reads its input: the projected semantic vector v
/// (default) or the raw feature vector x.
enum class ClassifierTap : std::uint8_t { semantic = 0, feature = 1 };

/// Single-label softmax cross-entropy vs. per-class sigmoid cross-entropy.
enum class ClassificationMode : std::uint8_t { single_label = 0, multi_label = 1 };

/// Linear projection to the semantic space plus a linear classification head.
struct ProjectionHead {
  Matrix w_embed;  // D x E; v = w_embed^T x
  Matrix w_cls;    // (E or D, by tap) x C
  Vec cls_bias;    // C
  ClassifierTap tap = ClassifierTap::semantic;

  std::size_t feature_dim() const { return w_embed.rows(); }
  std::size_t embed_dim() const { return w_embed.cols(); }
  std::size_t class_count() const { return w_cls.cols(); }
};

void validate_head(const ProjectionHead& head);

/// Ground-truth positive classes of one data point. Single-label points carry
/// exactly one id; multi-label points one or more.
struct LabelAnnotation {
  std::vector<std::uint16_t> positives;  // sorted, unique

  bool is_positive(std::size_t cls) const;
  /// {0,1}-valued target vector of length `classes`.
  Vec multi_hot(std::size_t classes) const;
};

void validate_annotation(const LabelAnnotation& labels, std::size_t classes);

/// v = w_embed^T x.
Vec project(ConstSpan x, const ProjectionHead& head);

/// Class logits from the tap-selected input (projects internally when the
/// tap is `semantic`).
Vec class_logits(ConstSpan x, const ProjectionHead& head);

/// Class logits when the caller already holds the tap input (v for the
/// semantic tap, x for the feature tap): w_cls^T u + bias.
Vec class_logits_from_tap(ConstSpan u, const ProjectionHead& head);

/// Cross-entropy at the logit level. Single-label: logsumexp(z) - z_y.
/// Multi-label: sum_c [softplus(z_c) - y_c z_c], evaluated in the stable
/// max(z,0) - z y + log1p(exp(-|z|)) form.
double classification_loss_from_logits(ConstSpan logits, const LabelAnnotation& labels,
                                       ClassificationMode mode);

/// Same loss starting from the feature vector.
double classification_loss(ConstSpan x, const LabelAnnotation& labels, const ProjectionHead& head,
                           ClassificationMode mode);

/// Loss plus d(loss)/d(logits): softmax(z) - onehot(y) for single-label,
/// sigmoid(z) - y for multi-label.
double classification_loss_grad(ConstSpan logits, const LabelAnnotation& labels,
                                ClassificationMode mode, MutSpan grad_logits);

/// sum_{i in Y} sum_{j not in Y} max(0, delta_ij - cos(v, z_i) + cos(v, z_j)).
/// A degenerate ||v|| contributes 0 and bumps the degenerate-norm counter.
double adaptive_margin_loss(ConstSpan v, const LabelAnnotation& labels,
                            const SemanticLabelSet& sem);

/// Loss plus accumulation of d(loss)/dv into grad_v (adds, does not reset).
double adaptive_margin_loss_grad(ConstSpan v, const LabelAnnotation& labels,
                                 const SemanticLabelSet& sem, MutSpan grad_v);

}  // namespace dpq
