#include "doctest.h"

#include "dpq/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "dpq/quantizer.hpp"

using dpq::Codebook;
using dpq::KMeansResult;
using dpq::Matrix;
using dpq::Vec;

namespace {

Matrix random_blobs(std::mt19937_64& rng, size_t clusters, size_t per_cluster, size_t dim,
                    double spread = 0.15) {
    std::normal_distribution<double> center_dist(0.0, 2.0);
    std::normal_distribution<double> noise(0.0, spread);
    Matrix data(clusters * per_cluster, dim);
    for (size_t c = 0; c < clusters; ++c) {
        Vec center(dim);
        for (auto& v : center) v = center_dist(rng);
        for (size_t i = 0; i < per_cluster; ++i)
            for (size_t d = 0; d < dim; ++d)
                data(c * per_cluster + i, d) = center[d] + noise(rng);
    }
    return data;
}

}  // namespace

TEST_CASE("kmeans: K distinct points fit exactly") {
    Matrix data = Matrix::from_rows({{0.0, 0.0}, {5.0, 1.0}, {-3.0, 2.0}});
    std::mt19937_64 rng(1);
    KMeansResult result = dpq::kmeans_lloyd(data, 3, 10, rng);
    CHECK(result.distortion_history.back() == doctest::Approx(0.0).epsilon(1e-15));
    // The codebook is the three points, as a set.
    std::set<std::pair<double, double>> want = {{0.0, 0.0}, {5.0, 1.0}, {-3.0, 2.0}};
    std::set<std::pair<double, double>> got;
    for (size_t k = 0; k < 3; ++k)
        got.insert({result.codebook.codewords(k, 0), result.codebook.codewords(k, 1)});
    CHECK(got == want);
}

TEST_CASE("kmeans: one iteration matches a hand-stepped 1-D instance") {
    // Data 0,1,2,10,11,12 with seeds 0 and 2. Assignment: {0,1}->c0 (the tie
    // at point 1 goes to the lower index), {2,10,11,12}->c1. Means: 0.5, 8.75.
    Matrix data = Matrix::from_rows({{0.0}, {1.0}, {2.0}, {10.0}, {11.0}, {12.0}});
    Codebook init;
    init.codewords = Matrix::from_rows({{0.0}, {2.0}});
    KMeansResult result = dpq::kmeans_lloyd(data, init, 1);
    CHECK(result.codebook.codewords(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(result.codebook.codewords(1, 0) == doctest::Approx(8.75).epsilon(1e-15));
    // Seeding distortion: (0 + 1 + 0 + 64 + 81 + 100) / 6.
    CHECK(result.distortion_history[0] == doctest::Approx(246.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("kmeans: zero iterations return the seeds unchanged") {
    Matrix data = Matrix::from_rows({{1.0}, {2.0}, {9.0}});
    Codebook init;
    init.codewords = Matrix::from_rows({{0.0}, {8.0}});
    KMeansResult result = dpq::kmeans_lloyd(data, init, 0);
    CHECK(result.codebook.codewords == init.codewords);
    REQUIRE(result.distortion_history.size() == 1);
    REQUIRE(result.assignments.size() == 3);
    CHECK(result.assignments[0] == 0);
    CHECK(result.assignments[1] == 0);
    CHECK(result.assignments[2] == 1);
}

TEST_CASE("kmeans: distortion history never increases") {
    std::mt19937_64 rng(2026);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix data = random_blobs(rng, 5, 30, 4);
        KMeansResult result = dpq::kmeans_lloyd(data, 8, 15, rng);
        for (size_t i = 1; i < result.distortion_history.size(); ++i)
            CHECK(result.distortion_history[i] <= result.distortion_history[i - 1] + 1e-12);
    }
}

TEST_CASE("kmeans: empty cluster is re-seeded from the largest cluster") {
    Matrix data = Matrix::from_rows({{0.0}, {1.0}, {10.0}});
    Codebook init;
    init.codewords = Matrix::from_rows({{0.4}, {0.6}, {99.0}});
    KMeansResult result = dpq::kmeans_lloyd(data, init, 3);
    // All three clusters end up occupied and the fit is exact.
    std::set<dpq::AssignmentIndex> used(result.assignments.begin(), result.assignments.end());
    CHECK(used.size() == 3);
    CHECK(result.distortion_history.back() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("kmeans: fewer points than clusters proceeds with duplicate seeds") {
    Matrix data = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    std::mt19937_64 rng(5);
    KMeansResult result = dpq::kmeans_lloyd(data, 4, 3, rng);
    CHECK(result.codebook.size() == 4);
    CHECK(result.distortion_history.back() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("kmeans: deterministic given the same generator state") {
    std::mt19937_64 data_rng(31337);
    Matrix data = random_blobs(data_rng, 4, 20, 3);
    std::mt19937_64 rng_a(777), rng_b(777);
    KMeansResult a = dpq::kmeans_lloyd(data, 6, 10, rng_a);
    KMeansResult b = dpq::kmeans_lloyd(data, 6, 10, rng_b);
    CHECK(a.codebook.codewords == b.codebook.codewords);
    CHECK(a.assignments == b.assignments);
    CHECK(a.distortion_history == b.distortion_history);
}

TEST_CASE("residual baseline: single layer equals plain k-means") {
    std::mt19937_64 data_rng(404);
    Matrix data = random_blobs(data_rng, 3, 15, 4);
    auto books = dpq::train_residual_baseline(data, 1, 4, 8, 11);
    std::mt19937_64 rng(11);
    KMeansResult direct = dpq::kmeans_lloyd(data, 4, 8, rng);
    REQUIRE(books.size() == 1);
    CHECK(books[0].codewords == direct.codebook.codewords);
}

TEST_CASE("residual baseline: recovers two-scale additive structure") {
    // Data constructed as every sum of a coarse and a fine codeword; the two
    // scales differ enough that layer-wise k-means separates them.
    std::mt19937_64 rng(515);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix coarse(4, 6), fine(4, 6);
    for (size_t k = 0; k < 4; ++k)
        for (size_t d = 0; d < 6; ++d) {
            coarse(k, d) = 10.0 * gauss(rng);
            fine(k, d) = 0.05 * gauss(rng);
        }
    Matrix data(16, 6);
    for (size_t a = 0; a < 4; ++a)
        for (size_t b = 0; b < 4; ++b)
            for (size_t d = 0; d < 6; ++d) data(a * 4 + b, d) = coarse(a, d) + fine(b, d);

    auto books = dpq::train_residual_baseline(data, 2, 4, 50, 99);
    const double leftover = dpq::mean_residual_distortion(data, books);
    const double scale = dpq::squared_norm(dpq::ConstSpan(data.data(), data.size())) / 16.0;
    CHECK(leftover < 1e-10 * scale);
}

TEST_CASE("residual baseline: mean residual norm is non-increasing per layer") {
    std::mt19937_64 rng(606);
    Matrix data = random_blobs(rng, 6, 25, 8, 0.5);
    auto books = dpq::train_residual_baseline(data, 4, 8, 12, 21);
    REQUIRE(books.size() == 4);

    // Walk the hard cascade and record mean residual norms after each layer.
    std::vector<double> mean_norms;
    Matrix residuals = data;
    for (const Codebook& cb : books) {
        double total = 0.0;
        for (size_t i = 0; i < residuals.rows(); ++i) {
            auto a = dpq::hard_assign(residuals.row(i), cb);
            dpq::axpy(-1.0, cb.codeword(a), residuals.row(i));
            total += dpq::norm(residuals.row(i));
        }
        mean_norms.push_back(total / double(residuals.rows()));
    }
    for (size_t l = 1; l < mean_norms.size(); ++l)
        CHECK(mean_norms[l] <= mean_norms[l - 1] + 1e-12);
}

TEST_CASE("pq baseline: one subspace is plain k-means") {
    std::mt19937_64 data_rng(707);
    Matrix data = random_blobs(data_rng, 3, 12, 4);
    auto books = dpq::train_pq_baseline(data, 1, 4, 6, 13);
    std::mt19937_64 rng(13);
    KMeansResult direct = dpq::kmeans_lloyd(data, 4, 6, rng);
    REQUIRE(books.size() == 1);
    CHECK(books[0].codewords == direct.codebook.codewords);
}

TEST_CASE("pq baseline: one-dim subspaces with K=1 store per-dim means") {
    Matrix data = Matrix::from_rows({{1.0, 10.0}, {3.0, 20.0}, {5.0, 30.0}});
    auto books = dpq::train_pq_baseline(data, 2, 1, 5, 0);
    REQUIRE(books.size() == 2);
    CHECK(books[0].codewords(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(books[1].codewords(0, 0) == doctest::Approx(20.0).epsilon(1e-12));
    // Distortion equals the total variance around those means.
    double variance = 0.0;
    for (size_t i = 0; i < 3; ++i)
        variance += (data(i, 0) - 3.0) * (data(i, 0) - 3.0) +
                    (data(i, 1) - 20.0) * (data(i, 1) - 20.0);
    variance /= 3.0;
    double got = 0.0;
    for (size_t i = 0; i < 3; ++i) {
        got += (data(i, 0) - books[0].codewords(0, 0)) * (data(i, 0) - books[0].codewords(0, 0));
        got += (data(i, 1) - books[1].codewords(0, 0)) * (data(i, 1) - books[1].codewords(0, 0));
    }
    got /= 3.0;
    CHECK(got == doctest::Approx(variance).epsilon(1e-12));
}

TEST_CASE("pq baseline: reconstruction concatenates per-subspace reconstructions") {
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> uni(0.0, 100.0);
    Matrix data(60, 8);
    for (size_t i = 0; i < 60; ++i)
        for (size_t d = 0; d < 8; ++d) data(i, d) = uni(rng);
    auto books = dpq::train_pq_baseline(data, 4, 16, 10, 404);
    REQUIRE(books.size() == 4);
    const size_t sub = 2;
    for (size_t i = 0; i < 60; ++i) {
        Vec full(8, 0.0);
        for (size_t s = 0; s < 4; ++s) {
            Vec slice(sub);
            for (size_t d = 0; d < sub; ++d) slice[d] = data(i, s * sub + d);
            auto a = dpq::hard_assign(slice, books[s]);
            for (size_t d = 0; d < sub; ++d) full[s * sub + d] = books[s].codeword(a)[d];
        }
        // Oracle: per-subspace nearest codeword found by an independent scan.
        for (size_t s = 0; s < 4; ++s) {
            size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (size_t k = 0; k < 16; ++k) {
                double d2 = 0.0;
                for (size_t d = 0; d < sub; ++d) {
                    const double diff = data(i, s * sub + d) - books[s].codeword(k)[d];
                    d2 += diff * diff;
                }
                if (d2 < best_d) {
                    best_d = d2;
                    best = k;
                }
            }
            for (size_t d = 0; d < sub; ++d)
                CHECK(full[s * sub + d] == books[s].codeword(best)[d]);
        }
    }
}

TEST_CASE("pq baseline: indivisible dimension split is a config error") {
    Matrix data = Matrix::from_rows({{1.0, 2.0, 3.0}});
    CHECK_THROWS_AS((void)dpq::train_pq_baseline(data, 2, 1, 1, 0), std::invalid_argument);
}
