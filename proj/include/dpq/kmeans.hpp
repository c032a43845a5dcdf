#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dpq/codebook.hpp"
#include "dpq/codes.hpp"
#include "dpq/common.hpp"

namespace dpq {

/// Output of Lloyd's algorithm: the codebook, the final assignment of every
/// input row, and the mean squared distortion before each update (entry 0 is
/// the seeding distortion, entry i>0 the value after iteration i).
struct KMeansResult {
  Codebook codebook;
  std::vector<AssignmentIndex> assignments;
  std::vector<double> distortion_history;
};

/// Lloyd's algorithm with K data points sampled (without replacement) as
/// seeds. Assignment is the Euclidean argmin with lowest-index ties; empty
/// clusters are re-seeded from the farthest point of the largest cluster.
/// Fewer rows than k warns and duplicates seeds. iters == 0 returns the seeds.
KMeansResult kmeans_lloyd(const Matrix& data, std::size_t k, int iters, std::mt19937_64& rng);

/// Same algorithm from caller-provided seed centroids.
KMeansResult kmeans_lloyd(const Matrix& data, Codebook init, int iters);

/// Stacked (residual) quantization: layer l runs k-means on the residuals
/// left by layers < l. Layer ids are 1-based.
std::vector<Codebook> train_residual_baseline(const Matrix& data, std::size_t layers,
                                              std::size_t k, int iters, std::uint64_t seed);

/// Product quantization: independent k-means per contiguous dim/m slice.
/// Sub-codebook s covers dims [s*dim/m, (s+1)*dim/m).
std::vector<Codebook> train_pq_baseline(const Matrix& data, std::size_t m_subspaces,
                                        std::size_t k, int iters, std::uint64_t seed);

/// Mean over rows of ‖row − nearest codeword sum over layers‖² for a residual
/// cascade (hard Euclidean assignment per layer).
double mean_residual_distortion(const Matrix& data, std::span<const Codebook> codebooks);

}  // namespace dpq
