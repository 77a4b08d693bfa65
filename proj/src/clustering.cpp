#include "kalign/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "kalign/argmax.hpp"
#include "kalign/error.hpp"

namespace kalign {
namespace {

Eigen::MatrixXd stack_rows(std::span<const Shape> shapes) {
    if (shapes.empty()) return {};
    const auto dim = shapes.front().stacked().size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(shapes.size()), dim);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (shapes[i].stacked().size() != dim) fail(ErrorKind::Schema, "shapes differ in landmark count");
        m.row(static_cast<Eigen::Index>(i)) = shapes[i].stacked().transpose();
    }
    return m;
}

// Squared distances between every row of a and every row of b.
Eigen::MatrixXd pairwise_sq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd d = (-2.0 * a * b.transpose()).eval();
    d.colwise() += a.rowwise().squaredNorm();
    d.rowwise() += b.rowwise().squaredNorm().transpose();
    return d.cwiseMax(0.0);
}

double sq_dist(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace

Eigen::MatrixXd PoseClassSet::center_matrix() const { return stack_rows(centers); }

KMeansResult kmeans_rows(const Eigen::MatrixXd& x, std::size_t k, const KMeansOptions& opt) {
    const auto m = static_cast<std::size_t>(x.rows());
    if (k == 0) fail(ErrorKind::Config, "k-means needs K >= 1");
    if (k > m) fail(ErrorKind::Config, "K = " + std::to_string(k) + " exceeds the " + std::to_string(m) + " inputs");

    KMeansResult res;
    auto to_classes = [&](const Eigen::MatrixXd& c) {
        res.classes.centers.clear();
        for (Eigen::Index r = 0; r < c.rows(); ++r) res.classes.centers.emplace_back(Eigen::VectorXd(c.row(r).transpose()));
    };
    if (k == m) {
        to_classes(x);
        res.classes.exemplar = true;
        res.assignments.resize(m);
        for (std::size_t i = 0; i < m; ++i) res.assignments[i] = i;
        res.sse_history.push_back(0.0);
        return res;
    }

    std::mt19937_64 rng(opt.seed);
    const auto ki = static_cast<Eigen::Index>(k);
    Eigen::MatrixXd centers(ki, x.cols());

    // k-means++ seeding.
    std::vector<double> d2(m, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
    centers.row(0) = x.row(static_cast<Eigen::Index>(first));
    for (Eigen::Index c = 1; c < ki; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            d2[i] = std::min(d2[i], sq_dist(x, static_cast<Eigen::Index>(i), centers, c - 1));
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            pick = m - 1;
            for (std::size_t i = 0; i < m; ++i) {
                if (u < d2[i]) {
                    pick = i;
                    break;
                }
                u -= d2[i];
            }
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
        }
        centers.row(c) = x.row(static_cast<Eigen::Index>(pick));
    }

    std::vector<std::size_t> assign(m, 0);
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        const Eigen::MatrixXd dist = pairwise_sq(x, centers);
        double sse = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const auto best = argmin(dist.row(static_cast<Eigen::Index>(i)));
            assign[i] = best;
            sse += sq_dist(x, static_cast<Eigen::Index>(i), centers, static_cast<Eigen::Index>(best));
        }
        res.sse_history.push_back(sse);
        res.iterations = iter + 1;

        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(ki, x.cols());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < m; ++i) {
            next.row(static_cast<Eigen::Index>(assign[i])) += x.row(static_cast<Eigen::Index>(i));
            ++counts[assign[i]];
        }
        // Empty clusters are re-seeded at the point farthest from its assigned center.
        std::vector<bool> taken(m, false);
        for (std::size_t c = 0; c < k; ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            if (counts[c] > 0) {
                next.row(ci) /= static_cast<double>(counts[c]);
                continue;
            }
            double worst = -1.0;
            std::size_t far = 0;
            for (std::size_t i = 0; i < m; ++i) {
                if (taken[i]) continue;
                const double d = sq_dist(x, static_cast<Eigen::Index>(i), centers, static_cast<Eigen::Index>(assign[i]));
                if (d > worst) {
                    worst = d;
                    far = i;
                }
            }
            taken[far] = true;
            next.row(ci) = x.row(static_cast<Eigen::Index>(far));
        }
        const double movement = (next - centers).rowwise().norm().maxCoeff();
        centers = std::move(next);
        if (movement < opt.tolerance) break;
    }
    // Final assignment against the converged centers.
    const Eigen::MatrixXd dist = pairwise_sq(x, centers);
    for (std::size_t i = 0; i < m; ++i) {
        assign[i] = argmin(dist.row(static_cast<Eigen::Index>(i)));
    }
    to_classes(centers);
    res.assignments = std::move(assign);
    return res;
}

KMeansResult kmeans_shapes(std::span<const Shape> shapes, std::size_t k, const KMeansOptions& options) {
    if (k == shapes.size() && k > 0) {
        KMeansResult res;
        res.classes.centers.assign(shapes.begin(), shapes.end());
        res.classes.exemplar = true;
        res.assignments.resize(k);
        for (std::size_t i = 0; i < k; ++i) res.assignments[i] = i;
        res.sse_history.push_back(0.0);
        return res;
    }
    return kmeans_rows(stack_rows(shapes), k, options);
}

std::vector<std::size_t> assign_nearest(const PoseClassSet& classes, std::span<const Shape> shapes) {
    if (classes.size() == 0) fail(ErrorKind::Contract, "empty pose class set");
    const Eigen::MatrixXd dist = pairwise_sq(stack_rows(shapes), classes.center_matrix());
    std::vector<std::size_t> out(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        out[i] = argmin(dist.row(static_cast<Eigen::Index>(i)));
    }
    return out;
}

std::size_t nearest_class(const PoseClassSet& classes, const Shape& shape) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const double d = (classes.centers[k].stacked() - shape.stacked()).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

std::vector<double> fit_bandwidths(std::span<const Shape> centers, std::span<const Shape> shapes,
                                   std::span<const std::size_t> assignments, double sigma_floor) {
    if (shapes.size() != assignments.size()) fail(ErrorKind::Contract, "one assignment per shape required");
    std::vector<double> sum_sq(centers.size(), 0.0);
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto k = assignments[i];
        if (k >= centers.size()) fail(ErrorKind::Contract, "assignment out of range");
        const double d = shape_distance(shapes[i], centers[k]);
        sum_sq[k] += d * d;
        ++count[k];
    }
    std::vector<double> sigma(centers.size(), sigma_floor);
    for (std::size_t k = 0; k < centers.size(); ++k)
        if (count[k] > 0) sigma[k] = std::max(sigma_floor, std::sqrt(sum_sq[k] / static_cast<double>(count[k])));
    return sigma;
}

PoseClassSet build_pose_classes(std::span<const Shape> shapes, std::size_t k, std::uint64_t seed, double sigma_floor) {
    KMeansOptions opt;
    opt.seed = seed;
    auto res = kmeans_shapes(shapes, k, opt);
    res.classes.bandwidths = fit_bandwidths(res.classes.centers, shapes, res.assignments, sigma_floor);
    return std::move(res.classes);
}

bool MembershipSets::contains(std::size_t example, std::size_t cls) const {
    const auto& s = sets.at(example);
    return std::binary_search(s.begin(), s.end(), cls);
}

MembershipSets membership_sets(const PoseClassSet& classes, std::span<const Shape> shapes, double tau) {
    if (!(tau >= 0.0)) fail(ErrorKind::Config, "membership threshold must be non-negative");
    MembershipSets ms;
    ms.tau = tau;
    ms.sets.resize(shapes.size());
    ms.inverse.resize(classes.size());
    const Eigen::MatrixXd c = classes.center_matrix();
    const Eigen::MatrixXd y = stack_rows(shapes);
    const double tau2 = tau * tau;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        // Exact differences (not the expanded form) so tau = 0 captures exact duplicates only.
        const Eigen::VectorXd d2 = (c.rowwise() - y.row(ii)).rowwise().squaredNorm();
        const auto nearest = static_cast<Eigen::Index>(argmin(d2));
        auto& set = ms.sets[i];
        for (Eigen::Index k = 0; k < d2.size(); ++k)
            if (d2[k] <= tau2 || k == nearest) set.push_back(static_cast<std::size_t>(k));
        for (auto k : set) ms.inverse[k].push_back(i);
    }
    return ms;
}

std::map<std::size_t, std::size_t> membership_histogram(const MembershipSets& memberships) {
    std::map<std::size_t, std::size_t> h;
    for (const auto& s : memberships.sets) ++h[s.size()];
    return h;
}

}  // namespace kalign
