#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "kalign/error.hpp"
#include "kalign/eval.hpp"
#include "kalign/synthetic.hpp"
#include "support.hpp"

using namespace kalign;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Contract;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("point-to-point error examples") {
    const RawAnnotation truth{{{0, 0}, {3, 4}}, {0, 0, 3, 4}, "t"};
    const std::vector<Point2> same{{0, 0}, {3, 4}};
    CHECK(pt_pt_error(same, truth) == 0.0);
    const std::vector<Point2> shifted{{3, 4}, {6, 8}};
    CHECK(pt_pt_error(shifted, truth) == doctest::Approx(1.0));
    const std::vector<Point2> half{{0, 2.5}, {3, 4}};
    CHECK(pt_pt_error(half, truth) == doctest::Approx(0.3536).epsilon(1e-4));
    CHECK(kind_of([&] { pt_pt_error(std::vector<Point2>{{0, 0}}, truth); }) == ErrorKind::Schema);
    const RawAnnotation flat{{{0, 0}}, {0, 0, 0, 0}, "t"};
    CHECK(kind_of([&] { pt_pt_error(std::vector<Point2>{{0, 0}}, flat); }) == ErrorKind::InvalidAnnotation);
}

TEST_CASE("canonical and pixel errors agree") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-100, 100), ext(10, 80);
    for (int t = 0; t < 100; ++t) {
        RawAnnotation truth;
        truth.bbox = {u(rng), u(rng), ext(rng), ext(rng)};
        for (int i = 0; i < 6; ++i) truth.points.push_back({u(rng), u(rng)});
        const Shape pred = kalign::testing::random_shape(rng, 6, 0.6);
        CHECK(pt_pt_error(denormalize_shape(pred, truth.bbox), truth) ==
              doctest::Approx(canonical_error(pred, normalize_shape(truth))).epsilon(1e-12));
    }
}

TEST_CASE("cumulative error distribution") {
    SUBCASE("examples") {
        const std::vector<double> zeros(10, 0.0), ones(10, 1.0);
        const CedCurve a = ced_stats(zeros);
        CHECK(a.auc == doctest::Approx(1.0));
        CHECK(a.failure_rate == 0.0);
        const CedCurve b = ced_stats(ones);
        CHECK(b.auc == 0.0);
        CHECK(b.failure_rate == 100.0);
        std::vector<double> mixed(zeros);
        mixed.insert(mixed.end(), ones.begin(), ones.end());
        const CedCurve c = ced_stats(mixed);
        CHECK(c.failure_rate == 50.0);
        CHECK(c.auc == doctest::Approx(0.5));
        // Errors equal to the threshold are not failures.
        CHECK(ced_stats(std::vector<double>{0.08}).failure_rate == 0.0);
    }
    SUBCASE("grid endpoints and monotone fractions") {
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(0, 0.12);
        std::vector<double> e(300);
        for (double& x : e) x = u(rng);
        const CedCurve c = ced_stats(e);
        CHECK(c.grid.front() == 0.0);
        CHECK(c.grid.back() == doctest::Approx(kFailureThreshold));
        CHECK(std::is_sorted(c.fractions.begin(), c.fractions.end()));
        // Continuous-area oracle: mean over errors of max(0, 1 - e / threshold).
        double area = 0;
        for (double x : e) area += std::max(0.0, 1.0 - x / kFailureThreshold);
        CHECK(std::abs(c.auc - area / 300.0) < 3e-3);
        std::shuffle(e.begin(), e.end(), rng);
        const CedCurve d = ced_stats(e);
        CHECK(d.auc == c.auc);
        CHECK(d.failure_rate == c.failure_rate);
    }
    SUBCASE("errors") {
        CHECK(kind_of([] { ced_stats(std::vector<double>{}); }) == ErrorKind::Contract);
        CHECK(kind_of([] { ced_stats(std::vector<double>{0.1}, 0.0); }) == ErrorKind::Config);
        CHECK(kind_of([] { ced_stats(std::vector<double>{0.1}, 0.08, 1); }) == ErrorKind::Config);
    }
}

TEST_CASE("hard subset") {
    const Dataset d = generate_synthetic(kalign::testing::small_config(200, 0, 0, 3));
    const auto shapes = normalized_shapes(d);
    const Shape mean = mean_shape(shapes);
    CHECK(hard_subset_indices(d, mean, 1.0).size() == 200);
    const auto ten = hard_subset_indices(d, mean, 0.1);
    const auto twenty = hard_subset_indices(d, mean, 0.2);
    CHECK(ten.size() == 20);
    CHECK(std::equal(ten.begin(), ten.end(), twenty.begin()));
    for (std::size_t i = 1; i < ten.size(); ++i)
        CHECK(shape_distance(shapes[ten[i - 1]], mean) >= shape_distance(shapes[ten[i]], mean));
    const double cut = shape_distance(shapes[ten.back()], mean);
    for (std::size_t i = 0; i < d.size(); ++i)
        if (std::find(ten.begin(), ten.end(), i) == ten.end()) CHECK(shape_distance(shapes[i], mean) <= cut);
    CHECK(hard_subset_indices(subset(d, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19}),
                              mean, 0.1)
              .size() == 2);

    double hard_yaw = 0, all_yaw = 0;
    for (std::size_t i : ten) hard_yaw += std::abs(d.records[i].meta.at("yaw"));
    for (const auto& r : d.records) all_yaw += std::abs(r.meta.at("yaw"));
    CHECK(hard_yaw / 20 > all_yaw / 200);
    CHECK(hard_subset(d, mean, 0.1).size() == 20);
    CHECK(kind_of([&] { hard_subset_indices(d, mean, 0.0); }) == ErrorKind::Config);
    CHECK(kind_of([&] { hard_subset_indices(d, mean, 1.5); }) == ErrorKind::Config);
}

TEST_CASE("loss scaling experiment") {
    const Dataset train = generate_synthetic(kalign::testing::small_config(120, 0, 0, 4));
    const Dataset val = generate_synthetic(kalign::testing::small_config(40, 0, 0, 5));
    const RandomFeatureExtractor ext({});
    const Eigen::MatrixXd ft = extract_dataset(ext, train), fv = extract_dataset(ext, val);
    LossScalingConfig cfg;
    cfg.k_grid = {1, 30};
    cfg.train.epochs = 5;
    const auto rows = loss_scaling_experiment(train, ft, val, fv, cfg);
    REQUIRE(rows.size() == 6);

    const auto ts = normalized_shapes(train), vs = normalized_shapes(val);
    const Shape mean = mean_shape(ts);
    double train_mean_err = 0, val_mean_err = 0;
    for (const auto& s : ts) train_mean_err += canonical_error(mean, s);
    for (const auto& s : vs) val_mean_err += canonical_error(mean, s);
    for (const auto& r : rows) {
        if (r.k == 1) {
            CHECK(r.train_landmark_error == doctest::Approx(train_mean_err / 120).epsilon(1e-6));
            CHECK(r.val_landmark_error == doctest::Approx(val_mean_err / 40).epsilon(1e-6));
            CHECK(r.train_exact_error == 0.0);
        }
        // The nearest class is always a member, so a multi-label miss is also an exact miss.
        CHECK(r.train_exact_error >= r.train_multilabel_error);
        CHECK(r.val_exact_error >= r.val_multilabel_error);
        CHECK(std::isfinite(r.final_train_loss));
    }
    const Table t = to_table(rows);
    CHECK(t.rows.size() == 6);
    CHECK(t.columns.front() == "k");
    cfg.k_grid = {121};
    CHECK(kind_of([&] { loss_scaling_experiment(train, ft, val, fv, cfg); }) == ErrorKind::Config);
    CHECK(kind_of([&] { loss_scaling_experiment(train, fv, val, fv, cfg); }) == ErrorKind::Contract);
}

TEST_CASE("head scaling bench bookkeeping") {
    BenchConfig cfg;
    cfg.feature_dim = 8;
    cfg.k_grid = {1, 10, 100};
    cfg.extractor_ratio = 2.0;
    cfg.repetitions = 3;
    cfg.warmup = 1;
    const BenchResult r = bench_head_scaling(cfg);
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) {
        CHECK(row.parameters == row.k * 9);
        CHECK(row.bytes == row.parameters * 8);
        CHECK(row.head_flops == 2.0 * row.k * 8);
        CHECK(row.median_head_seconds > 0.0);
        CHECK(row.head_share > 0.0);
    }
    CHECK(r.extractor_flops >= 2.0 * r.rows.back().head_flops);
    CHECK(r.machine.contains("cpu"));
    CHECK(r.extractor_config.at("kind") == "conv_stack");
    CHECK(to_table(r).rows.size() == 3);
    cfg.k_grid = {10, 1};
    CHECK(kind_of([&] { bench_head_scaling(cfg); }) == ErrorKind::Config);
    cfg.k_grid = {};
    CHECK(kind_of([&] { bench_head_scaling(cfg); }) == ErrorKind::Config);
}

TEST_CASE("model-level evaluations") {
    const Dataset train = flip_augment(generate_synthetic(kalign::testing::small_config(80, 0, 0, 6)));
    const Dataset val = generate_synthetic(kalign::testing::small_config(30, 0, 0, 7));
    const Model model = kalign::testing::tiny_model(train);
    const Shape mean = mean_shape(normalized_shapes(train));

    SUBCASE("predictor comparison") {
        const auto rows = compare_predictors(val, model, mean);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].predictor == "mean_shape");
        for (std::size_t i = 0; i < val.size(); ++i)
            CHECK(rows[0].errors[i] ==
                  doctest::Approx(canonical_error(mean, normalize_shape(val.records[i].annotation))));
        for (const auto& r : rows) CHECK(r.mean_error == doctest::Approx(mean_of(r.errors)));
        CHECK(rows[1].mean_error < rows[0].mean_error);
        CHECK(to_table(rows).rows.size() == 3);
    }
    SUBCASE("interactive click policies") {
        const auto rows = interactive_eval(val, model);
        REQUIRE(rows.size() == 3);
        const auto predictors = compare_predictors(val, model, mean);
        for (std::size_t i = 0; i < val.size(); ++i) {
            CHECK(rows[0].errors[i] == doctest::Approx(predictors[1].errors[i]));
            CHECK(rows[2].errors[i] <= rows[1].errors[i] + 1e-15);
            CHECK(rows[2].errors[i] <= rows[0].errors[i] + 1e-15);
            // When the MAP class already agrees with the click the prediction does not move.
            const auto& rec = val.records[i];
            const PosePosterior p = window_posterior(model, rec.image, rec.annotation.bbox);
            const Evidence e{model.schema.nose_index, normalize_shape(rec.annotation).point(model.schema.nose_index),
                             model.tau_evidence};
            const auto omega = consistent_classes(model.classes, e);
            if (std::binary_search(omega.begin(), omega.end(), map_class(p))) CHECK(rows[1].errors[i] == rows[0].errors[i]);
        }
        CHECK(rows[0].fallbacks == 0);
        CHECK(rows[2].mean_error <= rows[1].mean_error);
        CHECK(rows[1].mean_error <= rows[0].mean_error);
        CHECK(rows[0].failure_rate == ced_stats(rows[0].errors).failure_rate);

        InteractiveConfig tight;
        tight.policies = {ClickPolicy::FixedPoint};
        tight.tolerance = 1e-9;
        const auto fallback = interactive_eval(val, model, tight);
        CHECK(fallback[0].fallbacks == val.size());
        CHECK(fallback[0].errors == rows[0].errors);
        InteractiveConfig bad;
        bad.landmark = 99;
        CHECK(kind_of([&] { interactive_eval(val, model, bad); }) == ErrorKind::Config);
    }
    SUBCASE("embedding comparison") {
        const Eigen::MatrixXd ft = extract_dataset(*model.extractor, train);
        const auto shapes = normalized_shapes(train);
        const EmbeddingComparison same = compare_embeddings(model.head, model.classes, ft, shapes, ft, shapes);
        CHECK(same.nn_features_error == 0.0);
        const Eigen::MatrixXd fv = extract_dataset(*model.extractor, val);
        const EmbeddingComparison c =
            compare_embeddings(model.head, model.classes, ft, shapes, fv, normalized_shapes(val));
        CHECK(c.head_error > 0.0);
        CHECK(c.nn_weights_error > 0.0);
        CHECK(c.nn_features_error > 0.0);
    }
}

TEST_CASE("result tables") {
    Table t{{"name", "value"}, {{"a", "1.5"}, {"b", "x"}}};
    std::ostringstream os;
    write_csv(os, t);
    CHECK(os.str() == "name,value\na,1.5\nb,x\n");
    const auto j = to_json(t);
    REQUIRE(j.size() == 2);
    CHECK(j[0]["value"] == 1.5);
    CHECK(j[1]["value"] == "x");
    CHECK(j[0]["name"] == "a");
    CHECK(to_string(ClickPolicy::BestPoint) == "best_point");
}
