#include "dpq/kmeans.hpp"

#include <algorithm>
#include <iostream>
#include <limits>
#include <numeric>

#include "dpq/quantizer.hpp"

namespace dpq {

namespace {

// Nearest centroid by squared Euclidean distance, lowest index on ties.
AssignmentIndex nearest(ConstSpan x, const Matrix& centroids) {
  AssignmentIndex best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const double d = squared_distance(x, centroids.row(k));
    if (d < best_d) {
      best_d = d;
      best = static_cast<AssignmentIndex>(k);
    }
  }
  return best;
}

double mean_distortion(const Matrix& data, const Matrix& centroids,
                       std::span<const AssignmentIndex> assignments) {
  double sum = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i)
    sum += squared_distance(data.row(i), centroids.row(assignments[i]));
  return sum / static_cast<double>(data.rows());
}

}  // namespace

KMeansResult kmeans_lloyd(const Matrix& data, Codebook init, int iters) {
  require(data.rows() >= 1, "kmeans: empty data");
  require(init.codewords.rows() >= 1, "kmeans: empty seed codebook");
  require(init.codewords.cols() == data.cols(), "kmeans: seed dim mismatch");
  require(iters >= 0, "kmeans: negative iteration count");

  const std::size_t n = data.rows();
  const std::size_t k = init.codewords.rows();
  Matrix centroids = init.codewords;

  KMeansResult out;
  out.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.assignments[i] = nearest(data.row(i), centroids);
  out.distortion_history.push_back(mean_distortion(data, centroids, out.assignments));

  std::vector<std::size_t> counts(k);
  for (int iter = 0; iter < iters; ++iter) {
    // Update step: each centroid becomes the mean of its members.
    Matrix next(k, data.cols(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const AssignmentIndex a = out.assignments[i];
      ++counts[a];
      axpy(1.0, data.row(i), next.row(a));
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t d = 0; d < data.cols(); ++d) next(c, d) *= inv;
    }

    // Empty clusters grab the farthest member of the currently largest one.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t largest = 0;
      for (std::size_t o = 1; o < k; ++o)
        if (counts[o] > counts[largest]) largest = o;
      if (counts[largest] <= 1) {
        // Nothing to split; keep the previous centroid.
        for (std::size_t d = 0; d < data.cols(); ++d) next(c, d) = centroids(c, d);
        continue;
      }
      std::size_t far = n;  // sentinel
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (out.assignments[i] != largest) continue;
        const double d = squared_distance(data.row(i), next.row(largest));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      for (std::size_t d = 0; d < data.cols(); ++d) next(c, d) = data(far, d);
      out.assignments[far] = static_cast<AssignmentIndex>(c);
      --counts[largest];
      ++counts[c];
    }

    centroids = std::move(next);
    for (std::size_t i = 0; i < n; ++i) out.assignments[i] = nearest(data.row(i), centroids);
    out.distortion_history.push_back(mean_distortion(data, centroids, out.assignments));
  }

  out.codebook.layer_id = init.layer_id;
  out.codebook.codewords = std::move(centroids);
  return out;
}

KMeansResult kmeans_lloyd(const Matrix& data, std::size_t k, int iters, std::mt19937_64& rng) {
  require(data.rows() >= 1, "kmeans: empty data");
  require(k >= 1, "kmeans: need at least one cluster");

  const std::size_t n = data.rows();
  if (n < k)
    std::cerr << "kmeans: only " << n << " points for " << k
              << " clusters; duplicating seeds\n";

  // Sample k distinct row indices (with wraparound duplicates when n < k).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t j = i + rng() % (n - i);
    std::swap(order[i], order[j]);
  }
  Codebook init;
  init.codewords = Matrix(k, data.cols());
  for (std::size_t c = 0; c < k; ++c) {
    auto src = data.row(order[c % n]);
    std::copy(src.begin(), src.end(), init.codewords.row(c).begin());
  }
  return kmeans_lloyd(data, std::move(init), iters);
}

std::vector<Codebook> train_residual_baseline(const Matrix& data, std::size_t layers,
                                              std::size_t k, int iters, std::uint64_t seed) {
  require(layers >= 1, "residual baseline: need at least one layer");
  std::mt19937_64 rng(seed);
  Matrix residuals = data;
  std::vector<Codebook> books;
  books.reserve(layers);
  for (std::size_t l =  0; l < layers; ++l) {
    KMeansResult result = kmeans_lloyd(residuals, k, iters, rng);
    result.codebook.layer_id = static_cast<int>(l + 1);
    for (std::size_t i = 0; i < residuals.rows(); ++i)
      axpy(-1.0, result.codebook.codeword(result.assignments[i]), residuals.row(i));
    books.push_back(std::move(result.codebook));
  }
  return books;
}

std::vector<Codebook> train_pq_baseline(const Matrix& data, std::size_t m_subspaces,
                                        std::size_t k, int iters, std::uint64_t seed) {
  require(m_subspaces >= 1, "pq baseline: need at least one subspace");
  require(data.cols() % m_subspaces == 0,
          "pq baseline: feature dim must be divisible by the subspace count");
  const std::size_t sub = data.cols() / m_subspaces;
  std::mt19937_64 rng(seed);
  std::vector<Codebook> books;
  books.reserve(m_subspaces);
  for (std::size_t s = 0; s < m_subspaces; ++s) {
    Matrix slice(data.rows(), sub);
    for (std::size_t i = 0; i < data.rows(); ++i)
      for (std::size_t d = 0; d < sub; ++d) slice(i, d) = data(i, s * sub + d);
    KMeansResult result = kmeans_lloyd(slice, k, iters, rng);
    result.codebook.layer_id = static_cast<int>(s + 1);
    books.push_back(std::move(result.codebook));
  }
  return books;
}

double mean_residual_distortion(const Matrix& data, std::span<const Codebook> codebooks) {
  require(data.rows() >= 1, "mean_residual_distortion: empty data");
  double sum = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    Vec residual(data.row(i).begin(), data.row(i).end());
    for (const Codebook& cb : codebooks) {
      const AssignmentIndex a = hard_assign(residual, cb);
      axpy(-1.0, cb.codeword(a), residual);
    }
    sum += squared_norm(residual);
  }
  return sum / static_cast<double>(data.rows());
}

}  // namespace dpq
