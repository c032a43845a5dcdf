#include "dpq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace dpq {

namespace {

// All trainable scalars of a model, in one fixed order (codebooks, then the
// head). Gradients uses the same order so optimizer code can walk both.
std::vector<double*> parameter_view(ProgressiveModel& model) {
  std::vector<double*> out;
  for (auto& cb : model.codebooks)
    for (std::size_t i = 0; i < cb.codewords.size(); ++i) out.push_back(cb.codewords.data() + i);
  if (model.has_head) {
    for (std::size_t i = 0; i < model.head.w_embed.size(); ++i)
      out.push_back(model.head.w_embed.data() + i);
    for (std::size_t i = 0; i < model.head.w_cls.size(); ++i)
      out.push_back(model.head.w_cls.data() + i);
    for (auto& b : model.head.cls_bias) out.push_back(&b);
  }
  return out;
}

template <typename G>
auto gradient_view(G& grad) {
  using Ptr = std::conditional_t<std::is_const_v<G>, const double*, double*>;
  std::vector<Ptr> out;
  for (auto& cb : grad.codebooks)
    for (std::size_t i = 0; i < cb.size(); ++i) out.push_back(cb.data() + i);
  for (std::size_t i = 0; i < grad.w_embed.size(); ++i) out.push_back(grad.w_embed.data() + i);
  for (std::size_t i = 0; i < grad.w_cls.size(); ++i) out.push_back(grad.w_cls.data() + i);
  for (auto& b : grad.cls_bias) out.push_back(&b);
  return out;
}

// d(distance)/dx and d(distance)/dc for one (x, codeword) pair. Degenerate
// geometry (zero norms, coincident points) contributes nothing, matching the
// piecewise definition of the distances there.
void distance_gradients(ConstSpan x, ConstSpan c, DistanceMetric metric, Vec& ddx, Vec& ddc) {
  const std::size_t dim = x.size();
  std::fill(ddx.begin(), ddx.end(), 0.0);
  std::fill(ddc.begin(), ddc.end(), 0.0);
  if (metric == DistanceMetric::cosine) {
    const double nx = norm(x);
    const double nc = norm(c);
    if (nx < kDegenerateNorm || nc < kDegenerateNorm) return;
    const double d = -dot(x, c) / (nx * nc);
    const double inv = 1.0 / (nx * nc);
    for (std::size_t i = 0; i < dim; ++i) {
      ddx[i] = -c[i] * inv - d * x[i] / (nx * nx);
      ddc[i] = -x[i] * inv - d * c[i] / (nc * nc);
    }
    return;
  }
  double dist = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double diff = x[i] - c[i];
    dist += diff * diff;
  }
  dist = std::sqrt(dist);
  if (dist < kDegenerateNorm) return;
  for (std::size_t i = 0; i < dim; ++i) {
    ddx[i] = (x[i] - c[i]) / dist;
    ddc[i] = -ddx[i];
  }
}

// Backward pass of tau * E through the soft cascade. Adds tau-scaled codeword
// gradients into grad and tau * dE/dv into dv.
void distortion_backward(ConstSpan v, const CascadeState& state, const ProgressiveModel& model,
                         double tau, Gradients& grad, Vec& dv) {
  const Hyperparameters& hyper = model.hyper;
  const DistortionWeights weights = hyper.distortion_weights();
  const std::vector<double>& w = weights.layer_weights;
  const std::size_t layers = state.layer_count();
  const std::size_t dim = v.size();
  const double gamma = hyper.gamma;
  const DistanceMetric metric = hyper.train_metric;

  // Hard residuals r_h^l = v - sum_{i<=l} q_H^i.
  std::vector<Vec> hard_resid(layers);
  {
    Vec acc(v.begin(), v.end());
    for (std::size_t l = 0; l < layers; ++l) {
      axpy(-1.0, state.hard[l], acc);
      hard_resid[l] = acc;
    }
  }

  // g = dE/d(x-node), seeded at the deepest node x^{L+1} by the last soft
  // reconstruction loss ||x^{L+1}||^2.
  Vec g(dim);
  for (std::size_t i = 0; i < dim; ++i)
    g[i] = 2.0 * w[layers - 1] * (state.inputs[layers - 1][i] - state.soft[layers - 1][i]);

  Vec suffix(dim, 0.0);  // sum_{j>=l} w_j r_h^j, grown as l descends
  Vec t(dim), m(dim), ddx(dim), ddc(dim), gx(dim);
  for (std::size_t li = layers; li-- > 0;) {
    const Codebook& cb = model.codebooks[li];
    const std::vector<double>& a = state.weights[li];
    ConstSpan xl = state.inputs[li];
    const std::size_t k_count = cb.size();

    axpy(w[li], hard_resid[li], suffix);

    // m = d(match)/d(q^l); t = total dE/d(q^l).
    for (std::size_t i = 0; i < dim; ++i) {
      m[i] = 2.0 * weights.nu * w[li] * (state.soft[li][i] - state.hard[li][i]);
      t[i] = m[i] - g[i];
    }

    // Softmax backward: u_k = <t, c_k>, p_k = -gamma a_k (u_k - <a, u>).
    Vec u(k_count);
    double avg = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      u[k] = dot(t, cb.codeword(k));
      avg += a[k] * u[k];
    }

    std::fill(gx.begin(), gx.end(), 0.0);
    Matrix& cgrad = grad.codebooks[li];
    for (std::size_t k = 0; k < k_count; ++k) {
      auto ck = cb.codeword(k);
      auto crow = cgrad.row(k);
      // Direct convex-combination path: q = sum_k a_k c_k.
      axpy(tau * a[k], t, crow);
      const double p = -gamma * a[k] * (u[k] - avg);
      if (p != 0.0) {
        distance_gradients(xl, ck, metric, ddx, ddc);
        axpy(tau * p, ddc, crow);
        axpy(p, ddx, gx);
      }
    }
    // Hard path: the selected codeword is a parameter of l_quanH and l_match.
    {
      auto crow = cgrad.row(state.indices[li]);
      for (std::size_t i = 0; i < dim; ++i)
        crow[i] += tau * (-2.0 * weights.mu * suffix[i] - m[i]);
    }

    // Step to the previous node: chain + this node's own reconstruction loss.
    axpy(1.0, gx, g);
    if (li >= 1) axpy(2.0 * w[li - 1], xl, g);
  }

  // The hard reconstruction losses ||v - sum q_H||^2 read the cascade input
  // directly; after the loop suffix holds sum_l w_l r_h^l.
  axpy(2.0 * weights.mu, suffix, g);

  axpy(tau, g, dv);
}

// Per-sample gradient accumulation; returns the sample's loss breakdown.
TotalLossBreakdown sample_gradients(ConstSpan x, const LabelAnnotation* labels,
                                    const ProgressiveModel& model, Gradients& grad) {
  const Hyperparameters& hyper = model.hyper;
  TotalLossBreakdown out;

  Vec v = model.qblock_input(x);
  Vec dv(v.size(), 0.0);

  if (model.has_head) {
    require(labels != nullptr, "gradients: supervised model needs labels");
    out.margin = adaptive_margin_loss_grad(v, *labels, model.sem, dv);

    const bool semantic_tap = model.head.tap == ClassifierTap::semantic;
    ConstSpan tap_input = semantic_tap ? ConstSpan(v) : x;
    Vec logits = class_logits_from_tap(tap_input, model.head);
    Vec glogits(logits.size(), 0.0);
    out.classification =
        classification_loss_grad(logits, *labels, hyper.cls_mode, glogits);
    for (std::size_t c = 0; c < glogits.size(); ++c) {
      const double gl = hyper.lambda * glogits[c];
      grad.cls_bias[c] += gl;
      for (std::size_t d = 0; d < tap_input.size(); ++d)
        grad.w_cls(d, c) += gl * tap_input[d];
    }
    if (semantic_tap) {
      for (std::size_t d = 0; d < v.size(); ++d) {
        auto row = model.head.w_cls.row(d);
        double acc = 0.0;
        for (std::size_t c = 0; c < glogits.size(); ++c) acc += row[c] * glogits[c];
        dv[d] += hyper.lambda * acc;
      }
    }
  }

  CascadeState state =
      forward_cascade(v, model.codebooks, hyper.gamma, CascadeMode::training, hyper.train_metric);
  out.distortion = distortion(v, state, hyper.distortion_weights()).total;
  if (hyper.tau != 0.0) distortion_backward(v, state, model, hyper.tau, grad, dv);

  if (model.has_head) {
    // v = w_embed^T x, so dW_embed = x (outer) dv.
    for (std::size_t d = 0; d < x.size(); ++d) {
      auto row = grad.w_embed.row(d);
      axpy(x[d], dv, row);
    }
  }

  out.total = out.margin + hyper.lambda * out.classification + hyper.tau * out.distortion;
  return out;
}

}  // namespace

Gradients Gradients::zeros_like(const ProgressiveModel& model) {
  Gradients g;
  g.codebooks.reserve(model.codebooks.size());
  for (const auto& cb : model.codebooks)
    g.codebooks.emplace_back(cb.codewords.rows(), cb.codewords.cols());
  if (model.has_head) {
    g.w_embed = Matrix(model.head.w_embed.rows(), model.head.w_embed.cols());
    g.w_cls = Matrix(model.head.w_cls.rows(), model.head.w_cls.cols());
    g.cls_bias.assign(model.head.cls_bias.size(), 0.0);
  }
  return g;
}

void Gradients::add_scaled(const Gradients& other, double alpha) {
  auto mine = gradient_view(*this);
  auto theirs = gradient_view(other);
  require(mine.size() == theirs.size(), "gradients: shape mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) *mine[i] += alpha * *theirs[i];
}

void Gradients::scale(double alpha) {
  for (double* p : gradient_view(*this)) *p *= alpha;
}

double Gradients::max_abs() const {
  double top = 0.0;
  for (const double* p : gradient_view(*this)) top = std::max(top, std::abs(*p));
  return top;
}

Gradients analytic_gradients(const Matrix& features, std::span<const LabelAnnotation> labels,
                             const ProgressiveModel& model) {
  require(features.rows() >= 1, "gradients: empty batch");
  if (model.has_head)
    require(labels.size() == features.rows(), "gradients: label/feature count mismatch");
  Gradients grad = Gradients::zeros_like(model);
  for (std::size_t i = 0; i < features.rows(); ++i)
    (void)sample_gradients(features.row(i), model.has_head ? &labels[i] : nullptr, model, grad);
  grad.scale(1.0 / static_cast<double>(features.rows()));
  return grad;
}

Gradients finite_diff_gradients(const std::function<double(const ProgressiveModel&)>& loss,
                                const ProgressiveModel& model, double epsilon) {
  require(epsilon >= 1e-7 && epsilon <= 1e-3, "finite differences: epsilon out of range");
  ProgressiveModel probe = model;
  Gradients grad = Gradients::zeros_like(model);
  auto params = parameter_view(probe);
  auto slots = gradient_view(grad);
  require(params.size() == slots.size(), "finite differences: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + epsilon;
    const double up = loss(probe);
    *params[i] = saved - epsilon;
    const double down = loss(probe);
    *params[i] = saved;
    *slots[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

double max_relative_error(const Gradients& a, const Gradients& b) {
  auto va = gradient_view(a);
  auto vb = gradient_view(b);
  require(va.size() == vb.size(), "gradient comparison: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double denom = std::max({1.0, std::abs(*va[i]), std::abs(*vb[i])});
    worst = std::max(worst, std::abs(*va[i] - *vb[i]) / denom);
  }
  return worst;
}

AdamState::AdamState(const ProgressiveModel& model)
    : m_(Gradients::zeros_like(model)), v_(Gradients::zeros_like(model)) {}

void AdamState::step(ProgressiveModel& model, const Gradients& grad,
                     const Hyperparameters& hyper) {
  ++t_;
  auto params = parameter_view(model);
  auto gv = gradient_view(grad);
  auto mv = gradient_view(m_);
  auto vv = gradient_view(v_);
  require(params.size() == gv.size(), "adam: gradient shape mismatch");
  const double bias1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    *mv[i] = hyper.beta1 * *mv[i] + (1.0 - hyper.beta1) * *gv[i];
    *vv[i] = hyper.beta2 * *vv[i] + (1.0 - hyper.beta2) * *gv[i] * *gv[i];
    const double mhat = *mv[i] / bias1;
    const double vhat = *vv[i] / bias2;
    *params[i] -= hyper.eta * mhat / (std::sqrt(vhat) + hyper.adam_eps);
  }
}

void sgd_step(ProgressiveModel& model, const Gradients& grad, double eta) {
  auto params = parameter_view(model);
  auto gv = gradient_view(grad);
  require(params.size() == gv.size(), "sgd: gradient shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] -= eta * *gv[i];
}

ProgressiveModel initialize_model(const Matrix& features,
                                  std::span<const LabelAnnotation> labels,
                                  const Hyperparameters& hyper, const Matrix* label_embeddings) {
  validate_hyperparameters(hyper);
  require(features.rows() >= 1, "initialize: empty feature set");

  ProgressiveModel model;
  model.hyper = hyper;
  if (model.hyper.feature_dim == 0)
    model.hyper.feature_dim = static_cast<int>(features.cols());
  require(static_cast<std::size_t>(model.hyper.feature_dim) == features.cols(),
          "initialize: feature dim does not match data");

  std::mt19937_64 rng(model.hyper.seed);

  if (model.hyper.supervised) {
    require(labels.size() == features.rows(), "initialize: label/feature count mismatch");
    std::size_t classes = 0;
    for (const auto& ann : labels) {
      require(!ann.positives.empty(), "initialize: empty label annotation");
      classes = std::max<std::size_t>(classes, ann.positives.back() + 1);
    }

    Matrix z;
    if (label_embeddings != nullptr) {
      require(label_embeddings->cols() == static_cast<std::size_t>(model.hyper.embed_dim),
              "initialize: label embedding dim does not match embed_dim");
      require(label_embeddings->rows() >= classes,
              "initialize: label embeddings cover fewer classes than the labels use");
      z = *label_embeddings;
    } else {
      // Deterministic synthetic label embeddings: random unit vectors.
      z = Matrix(classes, static_cast<std::size_t>(model.hyper.embed_dim));
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (std::size_t c = 0; c < classes; ++c) {
        auto row = z.row(c);
        double n = 0.0;
        for (auto& e : row) {
          e = gauss(rng);
          n += e * e;
        }
        n = std::sqrt(n);
        if (n > 0.0)
          for (auto& e : row) e /= n;
      }
    }
    model.sem = SemanticLabelSet::from_embeddings(std::move(z));
    model.has_head = true;

    const std::size_t d = features.cols();
    const std::size_t e = static_cast<std::size_t>(model.hyper.embed_dim);
    const std::size_t c = model.sem.class_count();
    std::normal_distribution<double> gauss(0.0, 1.0);
    model.head.tap = model.hyper.cls_tap;
    model.head.w_embed = Matrix(d, e);
    const double embed_scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < model.head.w_embed.size(); ++i)
      model.head.w_embed.data()[i] = embed_scale * gauss(rng);
    const std::size_t tap_dim = model.head.tap == ClassifierTap::semantic ? e : d;
    model.head.w_cls = Matrix(tap_dim, c);
    const double cls_scale = 1.0 / std::sqrt(static_cast<double>(tap_dim));
    for (std::size_t i = 0; i < model.head.w_cls.size(); ++i)
      model.head.w_cls.data()[i] = cls_scale * gauss(rng);
    model.head.cls_bias.assign(c, 0.0);
  }

  // Codebooks start from the residual k-means baseline on the Q-Block inputs.
  Matrix qblock(features.rows(),
                model.has_head ? static_cast<std::size_t>(model.hyper.embed_dim)
                               : features.cols());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    Vec v = model.qblock_input(features.row(i));
    std::copy(v.begin(), v.end(), qblock.row(i).begin());
  }
  model.codebooks = train_residual_baseline(qblock, static_cast<std::size_t>(model.hyper.layers),
                                            static_cast<std::size_t>(model.hyper.codebook_size),
                                            model.hyper.kmeans_iters, rng());

  validate_model(model);
  return model;
}

ProgressiveModel train(const Matrix& features, std::span<const LabelAnnotation> labels,
                       const Hyperparameters& hyper, const Matrix* label_embeddings) {
  ProgressiveModel model = initialize_model(features, labels, hyper, label_embeddings);
  if (model.hyper.epochs == 0) return model;

  const std::size_t n = features.rows();
  const std::size_t batch = static_cast<std::size_t>(model.hyper.batch_size);
  std::mt19937_64 shuffle_rng(model.hyper.seed ^ 0x9e3779b97f4a7c15ull);
  AdamState adam(model);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < model.hyper.epochs; ++epoch) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const std::size_t j = i + shuffle_rng() % (n - i);
      std::swap(order[i], order[j]);
    }

    TotalLossBreakdown epoch_mean;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t size = std::min(batch, n - start);
      Matrix bfeat(size, features.cols());
      std::vector<LabelAnnotation> blabels(model.has_head ? size : 0);
      for (std::size_t i = 0; i < size; ++i) {
        auto src = features.row(order[start + i]);
        std::copy(src.begin(), src.end(), bfeat.row(i).begin());
        if (model.has_head) blabels[i] = labels[order[start + i]];
      }

      Gradients grad = Gradients::zeros_like(model);
      TotalLossBreakdown mean;
      for (std::size_t i = 0; i < size; ++i) {
        TotalLossBreakdown one = sample_gradients(
            bfeat.row(i), model.has_head ? &blabels[i] : nullptr, model, grad);
        mean.margin += one.margin;
        mean.classification += one.classification;
        mean.distortion += one.distortion;
        mean.total += one.total;
      }
      const double inv = 1.0 / static_cast<double>(size);
      grad.scale(inv);
      mean.margin *= inv;
      mean.classification *= inv;
      mean.distortion *= inv;
      mean.total *= inv;

      if (!std::isfinite(mean.total) || !std::isfinite(grad.max_abs())) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << batches
            << ": total loss " << mean.total;
        throw std::runtime_error(msg.str());
      }

      if (model.hyper.optimizer == Optimizer::adam)
        adam.step(model, grad, model.hyper);
      else
        sgd_step(model, grad, model.hyper.eta);

      epoch_mean.margin += mean.margin;
      epoch_mean.classification += mean.classification;
      epoch_mean.distortion += mean.distortion;
      epoch_mean.total += mean.total;
      ++batches;
    }

    const double inv = 1.0 / static_cast<double>(batches);
    model.diag.total.push_back(epoch_mean.total * inv);
    model.diag.margin.push_back(epoch_mean.margin * inv);
    model.diag.classification.push_back(epoch_mean.classification * inv);
    model.diag.distortion.push_back(epoch_mean.distortion * inv);
  }
  return model;
}

}  // namespace dpq
