#include "dpq/quantizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace dpq {

namespace {
std::atomic<std::uint64_t> g_degenerate_norms{0};
}

std::uint64_t degenerate_norm_count() { return g_degenerate_norms.load(); }
void reset_degenerate_norm_count() { g_degenerate_norms.store(0); }

namespace detail {
void note_degenerate_norm() { g_degenerate_norms.fetch_add(1, std::memory_order_relaxed); }
}  // namespace detail

double cosine_distance(ConstSpan x, ConstSpan c) {
  require(x.size() == c.size(), "cosine_distance: dimension mismatch");
  const double nx = norm(x);
  const double nc = norm(c);
  if (nx < kDegenerateNorm || nc < kDegenerateNorm) {
    g_degenerate_norms.fetch_add(1, std::memory_order_relaxed);
    return 0.0;
  }
  return -dot(x, c) / (nx * nc);
}

double euclidean_distance(ConstSpan x, ConstSpan c) {
  require(x.size() == c.size(), "euclidean_distance: dimension mismatch");
  return std::sqrt(squared_distance(x, c));
}

double codeword_distance(ConstSpan x, ConstSpan c, DistanceMetric metric) {
  return metric == DistanceMetric::cosine ? cosine_distance(x, c) : euclidean_distance(x, c);
}

std::vector<double> soft_assign(ConstSpan x, const Codebook& cb, double gamma,
                                DistanceMetric metric) {
  require(gamma > 0.0, "soft_assign: gamma must be positive");
  require(x.size() == cb.dim(), "soft_assign: dimension mismatch");
  const std::size_t k = cb.size();
  std::vector<double> scores(k);
  double smax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    scores[i] = -gamma * codeword_distance(x, cb.codeword(i), metric);
    smax = std::max(smax, scores[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    scores[i] = std::exp(scores[i] - smax);
    total += scores[i];
  }
  for (std::size_t i = 0; i < k; ++i) scores[i] /= total;
  return scores;
}

Vec soft_quantize(ConstSpan x, const Codebook& cb, double gamma, DistanceMetric metric) {
  const std::vector<double> weights = soft_assign(x, cb, gamma, metric);
  Vec q(cb.dim(), 0.0);
  for (std::size_t k = 0; k < cb.size(); ++k) axpy(weights[k], cb.codeword(k), q);
  return q;
}

AssignmentIndex hard_assign(ConstSpan x, const Codebook& cb, DistanceMetric metric) {
  require(x.size() == cb.dim(), "hard_assign: dimension mismatch");
  AssignmentIndex best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cb.size(); ++k) {
    // Squared distance has the same argmin as the plain norm.
    const double d = metric == DistanceMetric::cosine ? cosine_distance(x, cb.codeword(k))
                                                      : squared_distance(x, cb.codeword(k));
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<AssignmentIndex>(k);
    }
  }
  return best;
}

Vec hard_quantize(ConstSpan x, const Codebook& cb, DistanceMetric metric) {
  const ConstSpan c = cb.codeword(hard_assign(x, cb, metric));
  return Vec(c.begin(), c.end());
}

CascadeState forward_cascade(ConstSpan x, std::span<const Codebook> codebooks, double gamma,
                             CascadeMode mode, DistanceMetric soft_metric,
                             DistanceMetric hard_metric) {
  require(!codebooks.empty(), "forward_cascade: need at least one codebook");
  for (const Codebook& cb : codebooks)
    require(cb.dim() == x.size(), "forward_cascade: codebook dimension mismatch");

  CascadeState state;
  state.mode = mode;
  const std::size_t layers = codebooks.size();
  state.inputs.reserve(layers);
  state.soft.reserve(layers);
  state.hard.reserve(layers);
  state.indices.reserve(layers);
  state.weights.reserve(layers);

  Vec input(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const Codebook& cb = codebooks[l];
    std::vector<double> weights = soft_assign(input, cb, gamma, soft_metric);
    Vec q(cb.dim(), 0.0);
    for (std::size_t k = 0; k < cb.size(); ++k) axpy(weights[k], cb.codeword(k), q);
    const AssignmentIndex idx = hard_assign(input, cb, hard_metric);
    const ConstSpan cw = cb.codeword(idx);

    state.inputs.push_back(input);
    state.weights.push_back(std::move(weights));
    state.soft.push_back(std::move(q));
    state.hard.emplace_back(cw.begin(), cw.end());
    state.indices.push_back(idx);

    const Vec& sub = mode == CascadeMode::training ? state.soft.back() : state.hard.back();
    for (std::size_t i = 0; i < input.size(); ++i) input[i] -= sub[i];
  }
  return state;
}

void validate_weights(const DistortionWeights& w, std::size_t layers) {
  require(w.layer_weights.size() == layers, "distortion weights: layer count mismatch");
  for (double v : w.layer_weights) require(v >= 0.0, "layer weights must be nonnegative");
  require(w.mu >= 0.0 && w.nu >= 0.0, "mu and nu must be nonnegative");
  require(w.gamma > 0.0, "gamma must be positive");
}

DistortionBreakdown distortion(ConstSpan x, const CascadeState& state,
                               const DistortionWeights& weights) {
  const std::size_t layers = state.layer_count();
  validate_weights(weights, layers);
  require(!state.inputs.empty() && state.inputs.front().size() == x.size(),
          "distortion: state does not match input");

  DistortionBreakdown out;
  out.soft_losses.resize(layers);
  out.hard_losses.resize(layers);
  out.match_losses.resize(layers);

  Vec soft_residual(x.begin(), x.end());
  Vec hard_residual(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    axpy(-1.0, state.soft[l], soft_residual);
    axpy(-1.0, state.hard[l], hard_residual);
    out.soft_losses[l] = squared_norm(soft_residual);
    out.hard_losses[l] = squared_norm(hard_residual);
    out.match_losses[l] = squared_distance(state.soft[l], state.hard[l]);
  }

  double total = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    total += weights.layer_weights[l] *
             (out.soft_losses[l] + weights.mu * out.hard_losses[l] +
              weights.nu * out.match_losses[l]);
  }
  out.total = total;
  return out;
}

}  // namespace dpq
