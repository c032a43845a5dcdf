#include "dpq/supervised.hpp"

#include <algorithm>
#include <cmath>

#include "dpq/quantizer.hpp"

namespace dpq {

namespace {

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// softplus(z) = log(1 + e^z) without overflow on large |z|.
double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

SemanticLabelSet SemanticLabelSet::from_embeddings(Matrix embeddings) {
  require(embeddings.rows() >= 1, "label set: need at least one class");
  require(all_finite(embeddings), "label set: embeddings must be finite");
  SemanticLabelSet sem;
  sem.z = std::move(embeddings);
  const std::size_t c = sem.z.rows();
  sem.delta = Matrix(c, c);
  for (std::size_t i = 0; i < c; ++i) {
    sem.delta(i, i) = 0.0;
    for (std::size_t j = i + 1; j < c; ++j) {
      // cosine_distance is -cos, so 1 - cos = 1 + cosine_distance.
      const double d = std::clamp(1.0 + cosine_distance(sem.z.row(i), sem.z.row(j)), 0.0, 2.0);
      sem.delta(i, j) = d;
      sem.delta(j, i) = d;
    }
  }
  return sem;
}

void validate_head(const ProjectionHead& head) {
  require(head.w_embed.rows() >= 1 && head.w_embed.cols() >= 1,
          "projection head: empty embedding matrix");
  require(all_finite(head.w_embed) && all_finite(head.w_cls), "projection head: non-finite entry");
  for (double b : head.cls_bias) require(std::isfinite(b), "projection head: non-finite bias");
  require(head.cls_bias.size() == head.w_cls.cols(), "projection head: bias/class mismatch");
  const std::size_t tap_dim =
      head.tap == ClassifierTap::semantic ? head.embed_dim() : head.feature_dim();
  require(head.w_cls.rows() == tap_dim, "projection head: classifier input dim mismatch");
}

bool LabelAnnotation::is_positive(std::size_t cls) const {
  return std::binary_search(positives.begin(), positives.end(),
                            static_cast<std::uint16_t>(cls));
}

Vec LabelAnnotation::multi_hot(std::size_t classes) const {
  Vec y(classes, 0.0);
  for (std::uint16_t cls : positives) {
    require(cls < classes, "label annotation: class id out of range");
    y[cls] = 1.0;
  }
  return y;
}

void validate_annotation(const LabelAnnotation& labels, std::size_t classes) {
  require(!labels.positives.empty(), "label annotation: empty positive set");
  for (std::size_t i = 0; i < labels.positives.size(); ++i) {
    require(labels.positives[i] < classes, "label annotation: class id out of range");
    if (i > 0)
      require(labels.positives[i - 1] < labels.positives[i],
              "label annotation: ids must be sorted and unique");
  }
}

Vec project(ConstSpan x, const ProjectionHead& head) {
  require(x.size() == head.feature_dim(), "project: feature dim mismatch");
  const std::size_t e_dim = head.embed_dim();
  Vec v(e_dim, 0.0);
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double xd = x[d];
    auto row = head.w_embed.row(d);
    for (std::size_t e = 0; e < e_dim; ++e) v[e] += row[e] * xd;
  }
  return v;
}

Vec class_logits_from_tap(ConstSpan u, const ProjectionHead& head) {
  require(u.size() == head.w_cls.rows(), "class_logits: tap input dim mismatch");
  const std::size_t c = head.class_count();
  require(head.cls_bias.size() == c, "class_logits: bias/class mismatch");
  Vec logits(head.cls_bias.begin(), head.cls_bias.end());
  for (std::size_t d = 0; d < u.size(); ++d) {
    const double ud = u[d];
    auto row = head.w_cls.row(d);
    for (std::size_t k = 0; k < c; ++k) logits[k] += row[k] * ud;
  }
  return logits;
}

Vec class_logits(ConstSpan x, const ProjectionHead& head) {
  if (head.tap == ClassifierTap::feature) return class_logits_from_tap(x, head);
  Vec v = project(x, head);
  return class_logits_from_tap(v, head);
}

double classification_loss_from_logits(ConstSpan logits, const LabelAnnotation& labels,
                                       ClassificationMode mode) {
  validate_annotation(labels, logits.size());
  if (mode == ClassificationMode::single_label) {
    require(labels.positives.size() == 1, "single-label loss needs exactly one positive");
    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - top);
    return top + std::log(denom) - logits[labels.positives[0]];
  }
  double loss = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double y = labels.is_positive(c) ? 1.0 : 0.0;
    loss += stable_softplus(logits[c]) - y * logits[c];
  }
  return loss;
}

double classification_loss(ConstSpan x, const LabelAnnotation& labels, const ProjectionHead& head,
                           ClassificationMode mode) {
  Vec logits = class_logits(x, head);
  return classification_loss_from_logits(logits, labels, mode);
}

double classification_loss_grad(ConstSpan logits, const LabelAnnotation& labels,
                                ClassificationMode mode, MutSpan grad_logits) {
  require(grad_logits.size() == logits.size(), "classification grad: size mismatch");
  validate_annotation(labels, logits.size());
  if (mode == ClassificationMode::single_label) {
    require(labels.positives.size() == 1, "single-label loss needs exactly one positive");
    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - top);
    for (std::size_t c = 0; c < logits.size(); ++c)
      grad_logits[c] = std::exp(logits[c] - top) / denom;
    grad_logits[labels.positives[0]] -= 1.0;
    return top + std::log(denom) - logits[labels.positives[0]];
  }
  double loss = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double y = labels.is_positive(c) ? 1.0 : 0.0;
    grad_logits[c] = stable_sigmoid(logits[c]) - y;
    loss += stable_softplus(logits[c]) - y * logits[c];
  }
  return loss;
}

double adaptive_margin_loss(ConstSpan v, const LabelAnnotation& labels,
                            const SemanticLabelSet& sem) {
  const std::size_t c = sem.class_count();
  validate_annotation(labels, c);
  require(v.size() == sem.embed_dim(), "margin loss: embedding dim mismatch");
  if (norm(v) < kDegenerateNorm) {
    detail::note_degenerate_norm();
    return 0.0;
  }
  // cos(v, z_c) for every class, once.
  Vec cos_vc(c);
  for (std::size_t k = 0; k < c; ++k) cos_vc[k] = -cosine_distance(v, sem.z.row(k));

  double loss = 0.0;
  for (std::uint16_t i : labels.positives) {
    for (std::size_t j = 0; j < c; ++j) {
      if (labels.is_positive(j)) continue;
      const double hinge = sem.delta(i, j) - cos_vc[i] + cos_vc[j];
      if (hinge > 0.0) loss += hinge;
    }
  }
  return loss;
}

double adaptive_margin_loss_grad(ConstSpan v, const LabelAnnotation& labels,
                                 const SemanticLabelSet& sem, MutSpan grad_v) {
  const std::size_t c = sem.class_count();
  validate_annotation(labels, c);
  require(v.size() == sem.embed_dim() && grad_v.size() == v.size(),
          "margin grad: dimension mismatch");
  const double nv = norm(v);
  if (nv < kDegenerateNorm) {
    detail::note_degenerate_norm();
    return 0.0;
  }
  Vec cos_vc(c);
  for (std::size_t k = 0; k < c; ++k) cos_vc[k] = -cosine_distance(v, sem.z.row(k));

  // Active-pair coefficient per class: each active (i, j) pair contributes
  // -dcos(v,z_i)/dv + dcos(v,z_j)/dv, so tally +-1 counts first.
  Vec coeff(c, 0.0);
  double loss = 0.0;
  for (std::uint16_t i : labels.positives) {
    for (std::size_t j = 0; j < c; ++j) {
      if (labels.is_positive(j)) continue;
      const double hinge = sem.delta(i, j) - cos_vc[i] + cos_vc[j];
      if (hinge > 0.0) {
        loss += hinge;
        coeff[i] -= 1.0;
        coeff[j] += 1.0;
      }
    }
  }
  // dcos(v,z)/dv = z/(|v||z|) - cos(v,z) * v/|v|^2.
  for (std::size_t k = 0; k < c; ++k) {
    if (coeff[k] == 0.0) continue;
    auto zk = sem.z.row(k);
    const double nz = norm(zk);
    if (nz < kDegenerateNorm) {
      detail::note_degenerate_norm();
      continue;
    }
    const double a = coeff[k] / (nv * nz);
    const double b = -coeff[k] * cos_vc[k] / (nv * nv);
    for (std::size_t d = 0; d < v.size(); ++d) grad_v[d] += a * zk[d] + b * v[d];
  }
  return loss;
}

}  // namespace dpq
