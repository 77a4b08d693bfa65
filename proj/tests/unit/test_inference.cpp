#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <numbers>
#include <random>

#include "kalign/classifier.hpp"
#include "kalign/error.hpp"
#include "kalign/inference.hpp"
#include "kalign/pose_stats.hpp"
#include "kalign/synthetic.hpp"
#include "support.hpp"

using namespace kalign;
using kalign::testing::line_classes;

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

PosePosterior post(std::initializer_list<double> v) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) p[i++] = x;
    return PosePosterior(p);
}

PosePosterior random_posterior(std::mt19937_64& rng, std::size_t k) {
    std::normal_distribution<double> g(0.0, 2.0);
    Eigen::VectorXd s(static_cast<Eigen::Index>(k));
    for (auto& x : s) x = g(rng);
    return posterior_from_scores(s);
}

PoseClassSet random_classes(std::mt19937_64& rng, std::size_t k, std::size_t n) {
    PoseClassSet c;
    std::uniform_real_distribution<double> sig(0.02, 0.1);
    for (std::size_t i = 0; i < k; ++i) {
        c.centers.push_back(kalign::testing::random_shape(rng, n));
        c.bandwidths.push_back(sig(rng));
    }
    return c;
}

PoseClassSet plane_classes(const std::vector<Point2>& pts, const std::vector<double>& sigmas) {
    PoseClassSet c;
    for (auto p : pts) c.centers.emplace_back(std::vector<Point2>{p});
    c.bandwidths = sigmas;
    return c;
}

}  // namespace

TEST_CASE("posterior from scores") {
    CHECK(posterior_from_scores(Eigen::Vector3d::Zero()).probs().isApprox(Eigen::Vector3d::Constant(1.0 / 3)));
    const PosePosterior p = posterior_from_scores(Eigen::Vector2d(std::log(3.0), 0.0));
    CHECK(p[0] == doctest::Approx(0.75));
    CHECK(p[1] == doctest::Approx(0.25));
    CHECK(posterior_from_scores(Eigen::Vector3d(1.0, 0.9, 0.0), 1e-3)[0] > 0.999);
    CHECK(posterior_from_scores(Eigen::Vector2d(1e4, -1e4))[0] == 1.0);
    CHECK(kind_of([] { posterior_from_scores(Eigen::Vector2d::Zero(), 0.0); }) == ErrorKind::Config);
    CHECK(kind_of([] { posterior_from_scores(Eigen::Vector2d::Zero(), -1.0); }) == ErrorKind::Config);
    CHECK(kind_of([] { post({0.5, 0.6}); }) == ErrorKind::Contract);
    CHECK(kind_of([] { post({1.5, -0.5}); }) == ErrorKind::Contract);

    std::mt19937_64 rng(1);
    for (int t = 0; t < 100; ++t) {
        const PosePosterior q = random_posterior(rng, 20);
        CHECK(q.probs().sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK((q.probs().array() >= 0).all());
    }
}

TEST_CASE("map class and top-k") {
    CHECK(map_class(post({0.2, 0.5, 0.3})) == 1);
    CHECK(map_class(post({0.4, 0.2, 0.4})) == 0);
    const auto top = top_k(post({0.1, 0.3, 0.3, 0.3}), 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0].first == 1);
    CHECK(top[1].first == 2);
    CHECK(top[2].first == 3);
    CHECK(top_k(post({0.5, 0.5}), 9).size() == 2);
}

TEST_CASE("landmark mixture") {
    const PoseClassSet c = plane_classes({{0, 0}, {1, 0}, {0, -1}}, {0.05, 0.1, 0.08});

    SUBCASE("one-hot posterior gives a single Gaussian") {
        const auto d = mixture(post({0, 1, 0}), c);
        CHECK(d.mean().isApprox(Eigen::Vector2d(1, 0)));
        const double peak = 1.0 / (2 * std::numbers::pi * 0.01);
        CHECK(d.density(Eigen::Vector2d(1, 0)) == doctest::Approx(peak));
        CHECK(d.density(Eigen::Vector2d(1.1, 0)) == doctest::Approx(peak * std::exp(-0.5)));
    }
    SUBCASE("expectation of the mixture") {
        const auto d = mixture(post({0.5, 0.5, 0.0}), c);
        CHECK(d.mean().isApprox(Eigen::Vector2d(0.5, 0)));
    }
    SUBCASE("density integrates to one and the quadrature mean matches") {
        const auto d = mixture(post({0.2, 0.5, 0.3}), c);
        const int n = 600;
        const double lo = -1.5, hi = 1.5, h = (hi - lo) / n;
        double total = 0.0;
        Eigen::Vector2d m = Eigen::Vector2d::Zero();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const Eigen::Vector2d y(lo + (i + 0.5) * h, lo + (j + 0.5) * h);
                const double w = d.density(y) * h * h;
                total += w;
                m += w * y;
            }
        CHECK(std::abs(total - 1.0) < 1e-3);
        CHECK((m - d.mean()).norm() < 1e-3);
    }
    SUBCASE("K mismatch and missing bandwidths") {
        CHECK(kind_of([&] { mixture(post({0.5, 0.5}), c); }) == ErrorKind::Schema);
        PoseClassSet no_bw = c;
        no_bw.bandwidths.clear();
        CHECK(kind_of([&] { mixture(post({0.2, 0.5, 0.3}), no_bw); }) == ErrorKind::Contract);
    }
}

TEST_CASE("marginal heatmap") {
    GridSpec grid;
    grid.x_min = -1;
    grid.x_max = 1;
    grid.y_min = -1;
    grid.y_max = 1;
    grid.nx = 64;
    grid.ny = 64;

    SUBCASE("one-hot posterior peaks at the class landmark") {
        const PoseClassSet c = plane_classes({{0.25, -0.25}, {-0.5, 0.5}}, {0.05, 0.05});
        const Heatmap h = marginal_heatmap(mixture(post({1, 0}), c), 0, grid);
        CHECK(h.mass.sum() == doctest::Approx(1.0));
        Eigen::Index r, col;
        h.mass.maxCoeff(&r, &col);
        CHECK(std::abs(grid.cell_x(static_cast<int>(col)) - 0.25) < 2.0 / 64);
        CHECK(std::abs(grid.cell_y(static_cast<int>(r)) + 0.25) < 2.0 / 64);
        // Isotropic: equal mass at equal distance along x and y.
        const int cr = 24, cc = 40;  // cell containing (0.25, -0.25)
        CHECK(h.mass(cr, cc + 3) == doctest::Approx(h.mass(cr + 3, cc)).epsilon(1e-9));
    }
    SUBCASE("symmetric bimodal posterior splits the mass in halves") {
        const PoseClassSet c = plane_classes({{-0.5, 0}, {0.5, 0}}, {0.1, 0.1});
        const Heatmap h = marginal_heatmap(mixture(post({0.5, 0.5}), c), 0, grid);
        const double left = h.mass.leftCols(32).sum(), right = h.mass.rightCols(32).sum();
        CHECK(std::abs(left - 0.5) < 1e-3);
        CHECK(std::abs(right - 0.5) < 1e-3);
    }
    SUBCASE("multi-landmark classes select the requested landmark") {
        std::mt19937_64 rng(2);
        const PoseClassSet c = random_classes(rng, 5, 4);
        const auto d = mixture(random_posterior(rng, 5), c);
        for (std::size_t l = 0; l < 4; ++l) CHECK(marginal_heatmap(d, l, grid).mass.sum() == doctest::Approx(1.0));
        CHECK(kind_of([&] { marginal_heatmap(d, 4, grid); }) == ErrorKind::Contract);
    }
    SUBCASE("degenerate grids") {
        const PoseClassSet c = plane_classes({{0, 0}}, {0.1});
        GridSpec bad = grid;
        bad.nx = 0;
        CHECK(kind_of([&] { marginal_heatmap(mixture(post({1}), c), 0, bad); }) == ErrorKind::Config);
        bad = grid;
        bad.y_max = bad.y_min;
        CHECK(kind_of([&] { marginal_heatmap(mixture(post({1}), c), 0, bad); }) == ErrorKind::Config);
    }
}

TEST_CASE("global marginal") {
    const PoseClassSet c = line_classes({0.0, 0.25, 0.5, 0.75, 1.0});
    const ShapeStatistic x_of = [](const Shape& s) { return s.point(0).x; };

    SUBCASE("one-hot posterior fills one bin") {
        const Histogram h = marginal_global(post({0, 0, 1, 0, 0}), c, x_of, 4);
        CHECK(h.lo == 0.0);
        CHECK(h.hi == 1.0);
        CHECK(h.mass[2] == 1.0);
        CHECK(h.expectation == 0.5);
    }
    SUBCASE("mass sums to one and the expectation is exact") {
        std::mt19937_64 rng(3);
        for (int t = 0; t < 50; ++t) {
            const PosePosterior p = random_posterior(rng, 5);
            const Histogram h = marginal_global(p, c, x_of, 7, std::make_pair(-1.0, 2.0));
            double total = 0.0, expect = 0.0;
            for (double m : h.mass) total += m;
            for (std::size_t k = 0; k < 5; ++k) expect += p[k] * c.centers[k].point(0).x;
            CHECK(total == doctest::Approx(1.0));
            CHECK(h.expectation == doctest::Approx(expect));
        }
    }
    SUBCASE("configuration errors") {
        CHECK(kind_of([&] { marginal_global(post({0, 0, 1, 0, 0}), c, x_of, 0); }) == ErrorKind::Config);
        CHECK(kind_of([&] { marginal_global(post({0, 0, 1, 0, 0}), c, x_of, 3, std::make_pair(1.0, 1.0)); }) ==
              ErrorKind::Config);
    }
}

TEST_CASE("global yaw marginal tracks the true yaw on held-out images") {
    Dataset train = flip_augment(generate_synthetic(kalign::testing::small_config(300, 0, 0, 31)));
    const Dataset val = generate_synthetic(kalign::testing::small_config(80, 0, 0, 32));
    const auto shapes = normalized_shapes(train);
    const auto classes = build_pose_classes(shapes, shapes.size(), 1);
    const auto ms = membership_sets(classes, shapes, 0.1);
    const RandomFeatureExtractor ext({});
    TrainConfig cfg;
    cfg.epochs = 15;
    const ClassifierHead head = train_head(extract_dataset(ext, train), make_targets(classes, shapes, ms),
                                           classes.size(), cfg);
    const PoseLandmarks roles{train.schema.left_eye_index, train.schema.right_eye_index, train.schema.nose_index};
    const ShapeStatistic yaw = [&](const Shape& s) { return yaw_proxy(s, roles); };
    const Eigen::MatrixXd f = extract_dataset(ext, val);
    std::vector<double> est, truth;
    for (std::size_t i = 0; i < val.size(); ++i) {
        const PosePosterior p = posterior(head, f.row(static_cast<Eigen::Index>(i)).transpose());
        est.push_back(marginal_global(p, classes, yaw, 20).expectation);
        truth.push_back(val.records[i].meta.at("yaw"));
    }
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    const double me = mean(est), mt = mean(truth);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        sxy += (est[i] - me) * (truth[i] - mt);
        sxx += (est[i] - me) * (est[i] - me);
        syy += (truth[i] - mt) * (truth[i] - mt);
    }
    const double r = sxy / std::sqrt(sxx * syy);
    MESSAGE("yaw correlation " << r);
    CHECK(std::abs(r) > 0.8);
}

TEST_CASE("conditioning examples") {
    const PoseClassSet c = line_classes({0.0, 1.0, 2.0});
    const Evidence near_zero{0, {0.0, 0.0}, 0.5};

    SUBCASE("evidence every class satisfies leaves the posterior unchanged") {
        const PosePosterior p = post({0.2, 0.3, 0.5});
        CHECK(condition(p, c, {0, {1.0, 0.0}, 5.0}).probs() == p.probs());
    }
    SUBCASE("two classes, only the first consistent") {
        const PoseClassSet two = line_classes({0.0, 1.0});
        const PosePosterior q = condition(post({0.2, 0.8}), two, near_zero);
        CHECK(q[0] == 1.0);
        CHECK(q[1] == 0.0);
    }
    SUBCASE("three classes, two consistent") {
        const PosePosterior q = condition(post({0.1, 0.3, 0.6}), c, {0, {1.5, 0.0}, 0.6});
        CHECK(q[0] == 0.0);
        CHECK(q[1] == doctest::Approx(1.0 / 3));
        CHECK(q[2] == doctest::Approx(2.0 / 3));
    }
    SUBCASE("empty consistent set") {
        CHECK(kind_of([&] { condition(post({0.2, 0.3, 0.5}), c, {0, {9.0, 0.0}, 0.1}); }) ==
              ErrorKind::NoConsistentClass);
    }
    SUBCASE("tolerance boundary is inclusive") {
        CHECK(consistent_classes(c, {0, {0.5, 0.0}, 0.5}) == std::vector<std::size_t>{0, 1});
        CHECK(kind_of([&] { consistent_classes(c, {0, {0.5, 0.0}, 0.0}); }) == ErrorKind::Config);
        CHECK(kind_of([&] { consistent_classes(c, {1, {0.5, 0.0}, 0.1}); }) == ErrorKind::Contract);
    }
    SUBCASE("all consistent mass underflowed falls back to uniform on the support") {
        const PosePosterior q = condition(post({0.0, 0.0, 1.0}), c, {0, {0.5, 0.0}, 0.6});
        CHECK(q[0] == 0.5);
        CHECK(q[1] == 0.5);
    }
}

TEST_CASE("conditioning invariants on random instances") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> pos(-0.3, 0.3), tol(0.05, 0.3);
    std::uniform_int_distribution<std::size_t> lm(0, 3);
    int checked = 0;
    for (int t = 0; t < 300; ++t) {
        const PoseClassSet c = random_classes(rng, 30, 4);
        const PosePosterior p = random_posterior(rng, 30);
        const Evidence e{lm(rng), {pos(rng), pos(rng)}, tol(rng)};
        const auto omega = consistent_classes(c, e);
        if (omega.empty()) {
            CHECK(kind_of([&] { condition(p, c, e); }) == ErrorKind::NoConsistentClass);
            continue;
        }
        ++checked;
        const PosePosterior q = condition(p, c, e);
        // Idempotent.
        CHECK(condition(q, c, e).probs() == q.probs());
        // MAP lands in Omega and mass outside Omega is zero.
        CHECK(std::binary_search(omega.begin(), omega.end(), map_class(q)));
        for (std::size_t k = 0; k < 30; ++k)
            if (!std::binary_search(omega.begin(), omega.end(), k)) CHECK(q[k] == 0.0);
        // Ratios inside Omega are preserved.
        for (std::size_t a : omega) CHECK(q[a] * p[omega.front()] == doctest::Approx(q[omega.front()] * p[a]));
        // Conditioning commutes with marginalizing onto a shape statistic.
        const ShapeStatistic first_x = [](const Shape& s) { return s.point(0).x; };
        const Histogram hp = marginal_global(p, c, first_x, 10, std::make_pair(-0.3, 0.3));
        const Histogram hq = marginal_global(q, c, first_x, 10, std::make_pair(-0.3, 0.3));
        std::vector<double> restricted(10, 0.0);
        double z = 0.0;
        for (std::size_t k : omega) {
            restricted[hp.bin_of(c.centers[k].point(0).x)] += p[k];
            z += p[k];
        }
        for (std::size_t b = 0; b < 10; ++b) CHECK(hq.mass[b] == doctest::Approx(restricted[b] / z));

        // Sequential evidence equals the joint restriction.
        const Evidence e2{lm(rng), {pos(rng), pos(rng)}, 0.4};
        std::vector<Evidence> both{e, e2};
        const auto omega2 = consistent_classes(c, e2);
        std::vector<std::size_t> joint;
        std::set_intersection(omega.begin(), omega.end(), omega2.begin(), omega2.end(), std::back_inserter(joint));
        if (joint.empty()) {
            CHECK(kind_of([&] { condition_all(p, c, both); }) == ErrorKind::NoConsistentClass);
        } else {
            CHECK((condition_all(p, c, both).probs() - condition(q, c, e2).probs()).cwiseAbs().maxCoeff() < 1e-15);
            CHECK(condition_all(p, c, both).probs() == restrict_to(p, joint).probs());
        }
    }
    CHECK(checked > 50);
    const PoseClassSet c = random_classes(rng, 5, 2);
    const PosePosterior p = random_posterior(rng, 5);
    CHECK(condition_all(p, c, std::span<const Evidence>{}).probs() == p.probs());
}

TEST_CASE("point predictions") {
    const PoseClassSet c = line_classes({0.0, 1.0, 3.0});
    const PosePosterior p = post({0.25, 0.5, 0.25});
    CHECK(predict_landmarks(p, c, PredictMode::Map).point(0).x == 1.0);
    CHECK(predict_landmarks(p, c, PredictMode::Expectation).point(0).x == doctest::Approx(1.25));
    // A symmetric two-mode posterior averages to the midpoint.
    CHECK(predict_landmarks(post({0.5, 0.0, 0.5}), c, PredictMode::Expectation).point(0).x == doctest::Approx(1.5));
    CHECK(kind_of([&] { predict_landmarks(post({0.5, 0.5}), c, PredictMode::Map); }) == ErrorKind::Schema);
}
