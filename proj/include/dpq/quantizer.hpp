#pragma once

#include <cstdint>
#include <vector>

#include "dpq/codebook.hpp"
#include "dpq/codes.hpp"
#include "dpq/common.hpp"

namespace dpq {

enum class DistanceMetric : std::uint8_t { euclidean = 0, cosine = 1 };

/// Norms below this are treated as degenerate: the distance is defined as 0
/// and the event is counted (see degenerate_norm_count).
inline constexpr double kDegenerateNorm = 1e-12;

std::uint64_t degenerate_norm_count();
void reset_degenerate_norm_count();

namespace detail {
/// Records one degenerate-norm event (used by every cosine-based routine).
void note_degenerate_norm();
}  // namespace detail

/// -<x,c> / (|x| |c|), in [-1, 1]. Degenerate norms give 0.
double cosine_distance(ConstSpan x, ConstSpan c);

/// Plain (non-squared) Euclidean distance.
double euclidean_distance(ConstSpan x, ConstSpan c);

double codeword_distance(ConstSpan x, ConstSpan c, DistanceMetric metric);

/// Softmax of -gamma * d(x, c_k) over the codebook, computed with
/// max-subtraction. A probability vector over the K codewords.
std::vector<double> soft_assign(ConstSpan x, const Codebook& cb, double gamma,
                                DistanceMetric metric = DistanceMetric::cosine);

/// Convex combination sum_k a_k c_k with soft_assign weights.
Vec soft_quantize(ConstSpan x, const Codebook& cb, double gamma,
                  DistanceMetric metric = DistanceMetric::cosine);

/// Index of the nearest codeword; ties broken by lowest index.
AssignmentIndex hard_assign(ConstSpan x, const Codebook& cb,
                            DistanceMetric metric = DistanceMetric::euclidean);

Vec hard_quantize(ConstSpan x, const Codebook& cb,
                  DistanceMetric metric = DistanceMetric::euclidean);

/// Whether layer l+1 consumes the soft or the hard residual. Training keeps
/// gradients flowing through every layer; encoding matches the retrieval-time
/// hard cascade.
enum class CascadeMode : std::uint8_t { training = 0, encoding = 1 };

/// Per-layer record of one pass through the L-layer residual cascade. Both the
/// soft and the hard track are filled in either mode; `mode` only selects
/// which quantized value is subtracted to form the next layer input.
struct CascadeState {
  std::vector<Vec> inputs;                 // x^l
  std::vector<Vec> soft;                   // q^l
  std::vector<Vec> hard;                   // q_H^l
  std::vector<AssignmentIndex> indices;    // e(x^l)
  std::vector<std::vector<double>> weights;  // a^l
  CascadeMode mode = CascadeMode::training;

  std::size_t layer_count() const { return inputs.size(); }
};

CascadeState forward_cascade(ConstSpan x, std::span<const Codebook> codebooks, double gamma,
                             CascadeMode mode = CascadeMode::training,
                             DistanceMetric soft_metric = DistanceMetric::cosine,
                             DistanceMetric hard_metric = DistanceMetric::euclidean);

/// Layer weights and term multipliers of the distortion objective.
struct DistortionWeights {
  std::vector<double> layer_weights;  // w^l, one per layer
  double mu = 1.0;
  double nu = 0.1;
  double gamma = 20.0;

  static DistortionWeights uniform(std::size_t layers, double mu = 1.0, double nu = 0.1,
                                   double gamma = 20.0) {
    DistortionWeights w;
    w.layer_weights.assign(layers, 1.0);
    w.mu = mu;
    w.nu = nu;
    w.gamma = gamma;
    return w;
  }
};

void validate_weights(const DistortionWeights& w, std::size_t layers);

/// Per-layer loss terms and their weighted total
///   E = sum_l w_l soft_l + mu sum_l w_l hard_l + nu sum_l w_l match_l.
struct DistortionBreakdown {
  std::vector<double> soft_losses;   // |x - sum_{i<=l} q^i|^2
  std::vector<double> hard_losses;   // |x - sum_{i<=l} q_H^i|^2
  std::vector<double> match_losses;  // |q^l - q_H^l|^2
  double total = 0.0;
};

DistortionBreakdown distortion(ConstSpan x, const CascadeState& state,
                               const DistortionWeights& weights);

}  // namespace dpq
