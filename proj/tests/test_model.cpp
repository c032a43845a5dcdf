#include "doctest.h"

#include "dpq/model.hpp"

#include <cmath>
#include <random>

using dpq::ClassificationMode;
using dpq::LabelAnnotation;
using dpq::Matrix;
using dpq::ProgressiveModel;
using dpq::SemanticLabelSet;
using dpq::Vec;

namespace {

Matrix random_matrix(std::mt19937_64& rng, size_t rows, size_t cols, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    Matrix m(rows, cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) m(r, c) = gauss(rng);
    return m;
}

// Small supervised model: D=4 features, E=3 semantic dims, C=3 classes,
// L=2 layers of K=4 codewords.
ProgressiveModel tiny_model(std::mt19937_64& rng) {
    ProgressiveModel model;
    model.has_head = true;
    model.head.w_embed = random_matrix(rng, 4, 3, 0.5);
    model.head.w_cls = random_matrix(rng, 3, 3, 0.5);
    model.head.cls_bias = {0.1, -0.1, 0.0};
    model.sem = SemanticLabelSet::from_embeddings(random_matrix(rng, 3, 3));
    for (int l = 0; l < 2; ++l) {
        dpq::Codebook cb;
        cb.layer_id = l + 1;
        cb.codewords = random_matrix(rng, 4, 3, 1.0 / (1.0 + l));
        model.codebooks.push_back(std::move(cb));
    }
    model.hyper.layers = 2;
    model.hyper.codebook_size = 4;
    model.hyper.feature_dim = 4;
    model.hyper.embed_dim = 3;
    model.hyper.gamma = 5.0;
    return model;
}

}  // namespace

TEST_CASE("total loss: lambda = tau = 0 isolates the margin term") {
    std::mt19937_64 rng(2001);
    ProgressiveModel model = tiny_model(rng);
    model.hyper.lambda = 0.0;
    model.hyper.tau = 0.0;
    Vec x = {0.3, -1.2, 0.7, 0.4};
    LabelAnnotation labels;
    labels.positives = {1};
    auto breakdown = dpq::total_loss(x, labels, model);
    CHECK(breakdown.total == doctest::Approx(breakdown.margin).epsilon(1e-15));
    Vec v = dpq::project(x, model.head);
    CHECK(breakdown.margin ==
          doctest::Approx(dpq::adaptive_margin_loss(v, labels, model.sem)).epsilon(1e-12));
}

TEST_CASE("total loss: default weighting combines separately computed terms") {
    std::mt19937_64 rng(2003);
    ProgressiveModel model = tiny_model(rng);
    // Defaults: lambda=0.1, tau=1, mu=1, nu=0.1.
    CHECK(model.hyper.lambda == 0.1);
    CHECK(model.hyper.tau == 1.0);
    CHECK(model.hyper.mu == 1.0);
    CHECK(model.hyper.nu == 0.1);

    Vec x = {1.0, 0.2, -0.5, 0.8};
    LabelAnnotation labels;
    labels.positives = {0};
    auto breakdown = dpq::total_loss(x, labels, model);

    Vec v = dpq::project(x, model.head);
    const double margin = dpq::adaptive_margin_loss(v, labels, model.sem);
    Vec logits = dpq::class_logits_from_tap(v, model.head);
    const double cls = dpq::classification_loss_from_logits(logits, labels,
                                                            ClassificationMode::single_label);
    auto state = dpq::forward_cascade(v, model.codebooks, model.hyper.gamma);
    const double dist = dpq::distortion(v, state, model.hyper.distortion_weights()).total;

    CHECK(breakdown.margin == doctest::Approx(margin).epsilon(1e-12));
    CHECK(breakdown.classification == doctest::Approx(cls).epsilon(1e-12));
    CHECK(breakdown.distortion == doctest::Approx(dist).epsilon(1e-12));
    CHECK(breakdown.total == doctest::Approx(margin + 0.1 * cls + dist).epsilon(1e-12));
}

TEST_CASE("total loss: headless model carries only distortion") {
    std::mt19937_64 rng(2005);
    ProgressiveModel model;
    model.has_head = false;
    dpq::Codebook cb;
    cb.codewords = random_matrix(rng, 4, 5);
    model.codebooks.push_back(cb);
    model.hyper.layers = 1;
    model.hyper.tau = 2.0;
    Vec x = {0.1, 0.2, 0.3, 0.4, 0.5};
    auto breakdown = dpq::total_loss(x, model);
    CHECK(breakdown.margin == 0.0);
    CHECK(breakdown.classification == 0.0);
    CHECK(breakdown.total == doctest::Approx(2.0 * breakdown.distortion).epsilon(1e-15));
}

TEST_CASE("batch loss: mean of per-sample breakdowns") {
    std::mt19937_64 rng(2007);
    ProgressiveModel model = tiny_model(rng);
    Matrix batch = random_matrix(rng, 3, 4);
    std::vector<LabelAnnotation> labels(3);
    labels[0].positives = {0};
    labels[1].positives = {1, 2};
    labels[2].positives = {2};
    model.hyper.cls_mode = ClassificationMode::multi_label;
    auto mean = dpq::batch_loss(batch, labels, model);
    double want_total = 0.0, want_margin = 0.0;
    for (size_t i = 0; i < 3; ++i) {
        auto one = dpq::total_loss(batch.row(i), labels[i], model);
        want_total += one.total;
        want_margin += one.margin;
    }
    CHECK(mean.total == doctest::Approx(want_total / 3.0).epsilon(1e-12));
    CHECK(mean.margin == doctest::Approx(want_margin / 3.0).epsilon(1e-12));
}

TEST_CASE("model validation rejects inconsistent structure") {
    std::mt19937_64 rng(2009);
    ProgressiveModel model = tiny_model(rng);
    CHECK_NOTHROW(dpq::validate_model(model));

    ProgressiveModel mixed = model;
    mixed.codebooks[1].codewords = random_matrix(rng, 4, 5);  // wrong dim
    CHECK_THROWS_AS(dpq::validate_model(mixed), std::invalid_argument);

    ProgressiveModel empty;
    CHECK_THROWS_AS(dpq::validate_model(empty), std::invalid_argument);

    ProgressiveModel feature_space = model;
    feature_space.head.w_embed = random_matrix(rng, 4, 5);  // E=5 vs codebook dim 3
    CHECK_THROWS_AS(dpq::validate_model(feature_space), std::invalid_argument);
}

TEST_CASE("hyperparameter validation") {
    dpq::Hyperparameters hyper;
    CHECK_NOTHROW(dpq::validate_hyperparameters(hyper));
    hyper.gamma = 0.0;
    CHECK_THROWS_AS(dpq::validate_hyperparameters(hyper), std::invalid_argument);
    hyper.gamma = 20.0;
    hyper.batch_size = 0;
    CHECK_THROWS_AS(dpq::validate_hyperparameters(hyper), std::invalid_argument);
    hyper.batch_size = 16;
    hyper.layer_weights = {1.0, 1.0};  // layers=4 by default
    CHECK_THROWS_AS(dpq::validate_hyperparameters(hyper), std::invalid_argument);
}
