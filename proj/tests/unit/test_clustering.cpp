#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kalign/clustering.hpp"
#include "kalign/dataset.hpp"
#include "kalign/error.hpp"
#include "kalign/synthetic.hpp"
#include "support.hpp"

using namespace kalign;
using kalign::testing::line_classes;
using kalign::testing::line_shapes;
using kalign::testing::random_shape;

namespace {

// Minimum within-cluster SSE over all 2-partitions of 1-D points.
double best_two_partition(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    double best = 1e300;
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
        double sum[2] = {0, 0};
        int cnt[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const int g = (mask >> i) & 1u;
            sum[g] += xs[i];
            ++cnt[g];
        }
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const int g = (mask >> i) & 1u;
            const double d = xs[i] - sum[g] / cnt[g];
            sse += d * d;
        }
        best = std::min(best, sse);
    }
    return best;
}

double kmeans_sse(std::span<const Shape> shapes, const KMeansResult& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const double d = shape_distance(shapes[i], r.classes.centers[r.assignments[i]]);
        s += d * d;
    }
    return s;
}

std::vector<Shape> random_shapes(std::size_t m, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Shape> out;
    for (std::size_t i = 0; i < m; ++i) out.push_back(random_shape(rng, n));
    return out;
}

}  // namespace

TEST_CASE("k-means exemplar bypass returns the inputs verbatim") {
    const auto shapes = random_shapes(17, 4, 1);
    const auto r = kmeans_shapes(shapes, shapes.size());
    CHECK(r.classes.exemplar);
    CHECK(r.iterations == 0);
    REQUIRE(r.classes.size() == shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        CHECK(r.classes.centers[i] == shapes[i]);
        CHECK(r.assignments[i] == i);
    }
}

TEST_CASE("k-means with one class returns the mean") {
    const auto shapes = random_shapes(40, 3, 2);
    const auto r = kmeans_shapes(shapes, 1);
    CHECK(shape_distance(r.classes.centers[0], mean_shape(shapes)) < 1e-12);
    CHECK_FALSE(r.classes.exemplar);
}

TEST_CASE("k-means on {0, 1, 10, 11} finds the optimal 2-partition") {
    const std::vector<double> xs{0, 1, 10, 11};
    const auto shapes = line_shapes(xs);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        KMeansOptions opt;
        opt.seed = seed;
        const auto r = kmeans_shapes(shapes, 2, opt);
        std::vector<double> cx{r.classes.centers[0].point(0).x, r.classes.centers[1].point(0).x};
        std::sort(cx.begin(), cx.end());
        CHECK(cx[0] == doctest::Approx(0.5));
        CHECK(cx[1] == doctest::Approx(10.5));
        CHECK(kmeans_sse(shapes, r) == doctest::Approx(best_two_partition(xs)));
    }
}

TEST_CASE("k-means reaches the exhaustive optimum on separated 1-D instances") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> xs;
        for (int i = 0; i < 5; ++i) xs.push_back(g(rng));
        for (int i = 0; i < 5; ++i) xs.push_back(8.0 + g(rng));
        const auto shapes = line_shapes(xs);
        KMeansOptions opt;
        opt.seed = static_cast<std::uint64_t>(trial);
        CHECK(kmeans_sse(shapes, kmeans_shapes(shapes, 2, opt)) == doctest::Approx(best_two_partition(xs)));
    }
}

TEST_CASE("k-means SSE is non-increasing and the result is a fixed point") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto shapes = random_shapes(300, 6, 10 + seed);
        KMeansOptions opt;
        opt.seed = seed;
        const auto r = kmeans_shapes(shapes, 12, opt);
        REQUIRE(r.sse_history.size() >= 2);
        for (std::size_t i = 1; i < r.sse_history.size(); ++i) CHECK(r.sse_history[i] <= r.sse_history[i - 1] + 1e-12);
        REQUIRE(r.iterations < opt.max_iterations);
        // Converged: every center is the mean of its members and every member is nearest to its center.
        CHECK(assign_nearest(r.classes, shapes) == r.assignments);
        for (std::size_t k = 0; k < 12; ++k) {
            std::vector<Shape> members;
            for (std::size_t i = 0; i < shapes.size(); ++i)
                if (r.assignments[i] == k) members.push_back(shapes[i]);
            REQUIRE_FALSE(members.empty());
            CHECK(shape_distance(mean_shape(members), r.classes.centers[k]) < 1e-5);
        }
    }
}

TEST_CASE("k-means determinism, errors and duplicate inputs") {
    const auto shapes = random_shapes(50, 3, 4);
    KMeansOptions opt;
    opt.seed = 9;
    const auto a = kmeans_shapes(shapes, 5, opt);
    const auto b = kmeans_shapes(shapes, 5, opt);
    for (std::size_t k = 0; k < 5; ++k) CHECK(a.classes.centers[k] == b.classes.centers[k]);

    try {
        kmeans_shapes(shapes, 51);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }

    const auto dup = line_shapes({0, 0, 0, 1, 1, 1, 5, 5});
    const auto r = kmeans_shapes(dup, 5);
    CHECK(r.classes.size() == 5);
    for (const auto& c : r.classes.centers) CHECK(c.all_finite());
}

TEST_CASE("fit_bandwidths examples") {
    const auto center = line_shapes({0});
    SUBCASE("two members at distance one") {
        const auto members = line_shapes({1, -1});
        const std::vector<std::size_t> assign{0, 0};
        CHECK(fit_bandwidths(center, members, assign)[0] == doctest::Approx(1.0));
    }
    SUBCASE("exemplar class gets the floor") {
        const std::vector<std::size_t> assign{0};
        CHECK(fit_bandwidths(center, center, assign)[0] == kSigmaFloor);
    }
    SUBCASE("members at distances 3 and 4") {
        const auto members = line_shapes({3, -4});
        const std::vector<std::size_t> assign{0, 0};
        CHECK(fit_bandwidths(center, members, assign)[0] == doctest::Approx(std::sqrt(12.5)));
    }
    SUBCASE("empty cluster gets the floor") {
        const auto centers = line_shapes({0, 5});
        const auto members = line_shapes({1});
        const std::vector<std::size_t> assign{0};
        CHECK(fit_bandwidths(centers, members, assign)[1] == kSigmaFloor);
    }
}

TEST_CASE("membership_sets examples") {
    const auto classes = line_classes({0, 1, 3});
    const auto y = line_shapes({0.4});
    CHECK(membership_sets(classes, y, 1.0).sets[0] == std::vector<std::size_t>{0, 1});
    CHECK(membership_sets(classes, y, 0.0).sets[0] == std::vector<std::size_t>{0});
    CHECK(membership_sets(classes, y, 2.6).sets[0] == std::vector<std::size_t>{0, 1, 2});

    SUBCASE("exemplar mode with tau = 0 is self membership plus exact duplicates") {
        const auto shapes = line_shapes({0, 2, 2, 7});
        const auto ex = build_pose_classes(shapes, shapes.size(), 0);
        const auto ms = membership_sets(ex, shapes, 0.0);
        CHECK(ms.sets[0] == std::vector<std::size_t>{0});
        CHECK(ms.sets[1] == std::vector<std::size_t>{1, 2});
        CHECK(ms.sets[2] == std::vector<std::size_t>{1, 2});
        CHECK(ms.sets[3] == std::vector<std::size_t>{3});
    }
    SUBCASE("saturation") {
        const auto shapes = random_shapes(30, 4, 5);
        const auto ex = build_pose_classes(shapes, shapes.size(), 0);
        const auto ms = membership_sets(ex, shapes, 100.0);
        for (const auto& s : ms.sets) CHECK(s.size() == 30);
    }
    CHECK_THROWS_AS(membership_sets(classes, y, -1.0), Error);
}

TEST_CASE("membership_sets invariants on random shapes") {
    const auto shapes = random_shapes(120, 5, 6);
    const auto classes = build_pose_classes(shapes, 25, 1);
    std::vector<MembershipSets> by_tau;
    for (double tau : {0.0, 0.1, 0.2, 0.3, 0.5, 1.0}) by_tau.push_back(membership_sets(classes, shapes, tau));
    for (const auto& ms : by_tau) {
        for (std::size_t i = 0; i < ms.n_examples(); ++i) {
            REQUIRE_FALSE(ms.sets[i].empty());
            CHECK(ms.contains(i, nearest_class(classes, shapes[i])));
            CHECK(std::is_sorted(ms.sets[i].begin(), ms.sets[i].end()));
            for (std::size_t k = 0; k < ms.n_classes(); ++k) {
                const bool in_set = ms.contains(i, k);
                const auto& inv = ms.inverse[k];
                CHECK(in_set == std::binary_search(inv.begin(), inv.end(), i));
            }
        }
    }
    for (std::size_t t = 1; t < by_tau.size(); ++t)
        for (std::size_t i = 0; i < shapes.size(); ++i)
            CHECK(std::includes(by_tau[t].sets[i].begin(), by_tau[t].sets[i].end(), by_tau[t - 1].sets[i].begin(),
                                by_tau[t - 1].sets[i].end()));
}

TEST_CASE("membership_histogram examples") {
    SUBCASE("identical shapes in exemplar mode") {
        const auto shapes = line_shapes({2, 2, 2, 2, 2});
        const auto ex = build_pose_classes(shapes, 5, 0);
        const auto h = membership_histogram(membership_sets(ex, shapes, 0.1));
        CHECK(h == std::map<std::size_t, std::size_t>{{5, 5}});
    }
    SUBCASE("distinct shapes with tau = 0") {
        const auto shapes = random_shapes(40, 3, 7);
        const auto ex = build_pose_classes(shapes, 40, 0);
        const auto h = membership_histogram(membership_sets(ex, shapes, 0.0));
        CHECK(h == std::map<std::size_t, std::size_t>{{1, 40}});
    }
    SUBCASE("counts sum to M") {
        const auto shapes = random_shapes(60, 3, 8);
        const auto ex = build_pose_classes(shapes, 60, 0);
        std::size_t total = 0;
        for (const auto& [size, count] : membership_histogram(membership_sets(ex, shapes, 0.4))) total += count;
        CHECK(total == 60);
    }
}

TEST_CASE("large memberships are frontal, small memberships are extreme yaw") {
    auto cfg = kalign::testing::small_config(600, 0, 0, 12);
    const Dataset d = generate_synthetic(cfg);
    const auto shapes = normalized_shapes(d);
    const auto classes = build_pose_classes(shapes, shapes.size(), 0);
    const auto ms = membership_sets(classes, shapes, 0.1);

    std::vector<std::size_t> order(shapes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ms.sets[a].size() > ms.sets[b].size(); });
    const std::size_t decile = shapes.size() / 10;
    auto mean_abs_yaw = [&](std::size_t begin, std::size_t end) {
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) s += std::abs(d.records[order[i]].meta.at("yaw"));
        return s / static_cast<double>(end - begin);
    };
    const double top = mean_abs_yaw(0, decile);
    const double bottom = mean_abs_yaw(shapes.size() - decile, shapes.size());
    const double all = mean_abs_yaw(0, shapes.size());
    MESSAGE("mean |yaw|: top decile " << top << ", bottom decile " << bottom << ", all " << all);
    CHECK(top < all);
    CHECK(bottom > all);
    CHECK(top < 0.5 * bottom);
}
