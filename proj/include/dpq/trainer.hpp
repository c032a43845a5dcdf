#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dpq/kmeans.hpp"
#include "dpq/model.hpp"

namespace dpq {

/// Gradient (or optimizer-moment) storage shaped exactly like the trainable
/// parameters of a ProgressiveModel.
struct Gradients {
  std::vector<Matrix> codebooks;  // L matrices of K x E
  Matrix w_embed;                 // D x E (empty when headless)
  Matrix w_cls;
  Vec cls_bias;

  static Gradients zeros_like(const ProgressiveModel& model);
  void add_scaled(const Gradients& other, double alpha);
  void scale(double alpha);
  double max_abs() const;
};

/// Mean gradient of the total loss over the batch, for every codeword and
/// head parameter. Hard assignments are constants of the forward pass: they
/// route gradients onto the selected codewords but the argmin itself
/// contributes none.
Gradients analytic_gradients(const Matrix& features, std::span<const LabelAnnotation> labels,
                             const ProgressiveModel& model);

/// Central differences (f(p+eps) - f(p-eps)) / 2 eps for every scalar
/// parameter of the model, under an arbitrary loss evaluator.
Gradients finite_diff_gradients(const std::function<double(const ProgressiveModel&)>& loss,
                                const ProgressiveModel& model, double epsilon);

/// Largest relative disagreement |a-b| / max(1, |a|, |b|) over all parameters.
double max_relative_error(const Gradients& a, const Gradients& b);

/// Adaptive-moment optimizer over the model's parameter set.
class AdamState {
 public:
  explicit AdamState(const ProgressiveModel& model);

  /// One update: p -= eta * mhat / (sqrt(vhat) + eps), moments per parameter.
  void step(ProgressiveModel& model, const Gradients& grad, const Hyperparameters& hyper);

 private:
  Gradients m_;
  Gradients v_;
  std::int64_t t_ = 0;
};

/// Plain gradient descent: p -= eta * grad.
void sgd_step(ProgressiveModel& model, const Gradients& grad, double eta);

/// Builds the initial model: seeded random head (supervised), label set from
/// the provided embeddings (or deterministic synthetic ones), and codebooks
/// from the residual k-means baseline on the Q-Block inputs.
ProgressiveModel initialize_model(const Matrix& features,
                                  std::span<const LabelAnnotation> labels,
                                  const Hyperparameters& hyper, const Matrix* label_embeddings);

/// Mini-batch gradient training. Labels may be empty when hyper.supervised is
/// false. Deterministic given (seed, data, hyper). Throws on divergence.
ProgressiveModel train(const Matrix& features, std::span<const LabelAnnotation> labels,
                       const Hyperparameters& hyper, const Matrix* label_embeddings = nullptr);

}  // namespace dpq
