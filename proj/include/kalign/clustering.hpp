#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "kalign/shape.hpp"

namespace kalign {

inline constexpr double kSigmaFloor = 0.01;

// The discrete output vocabulary: K pose-class centers with per-class bandwidths.
struct PoseClassSet {
    std::vector<Shape> centers;
    std::vector<double> bandwidths;
    bool exemplar = false;

    std::size_t size() const { return centers.size(); }
    std::size_t n_points() const { return centers.empty() ? 0 : centers.front().n_points(); }
    // K x 2N matrix of stacked centers.
    Eigen::MatrixXd center_matrix() const;
};

struct KMeansOptions {
    int max_iterations = 200;
    double tolerance = 1e-6;
    std::uint64_t seed = 0;
};

struct KMeansResult {
    PoseClassSet classes;  // bandwidths left empty
    std::vector<std::size_t> assignments;
    // Within-cluster SSE after each assignment step.
    std::vector<double> sse_history;
    int iterations = 0;
};

// Lloyd iterations with k-means++ seeding. K == M short-circuits to the inputs verbatim.
KMeansResult kmeans_shapes(std::span<const Shape> shapes, std::size_t k, const KMeansOptions& options = {});
// Same algorithm on raw row vectors.
KMeansResult kmeans_rows(const Eigen::MatrixXd& rows, std::size_t k, const KMeansOptions& options = {});

std::vector<std::size_t> assign_nearest(const PoseClassSet& classes, std::span<const Shape> shapes);
std::size_t nearest_class(const PoseClassSet& classes, const Shape& shape);

// sigma_k = max(floor, RMS distance of the assigned members to mu_k).
std::vector<double> fit_bandwidths(std::span<const Shape> centers, std::span<const Shape> shapes,
                                   std::span<const std::size_t> assignments, double sigma_floor = kSigmaFloor);

// Convenience: k-means followed by bandwidth fitting.
PoseClassSet build_pose_classes(std::span<const Shape> shapes, std::size_t k, std::uint64_t seed,
                                double sigma_floor = kSigmaFloor);

struct MembershipSets {
    double tau = 0.0;
    std::vector<std::vector<std::size_t>> sets;     // per example, ascending class ids
    std::vector<std::vector<std::size_t>> inverse;  // per class, ascending example ids

    std::size_t n_examples() const { return sets.size(); }
    std::size_t n_classes() const { return inverse.size(); }
    bool contains(std::size_t example, std::size_t cls) const;
};

// M_i = {k : ||mu_k - y_i|| <= tau}, with the nearest center always included.
MembershipSets membership_sets(const PoseClassSet& classes, std::span<const Shape> shapes, double tau);

// |M_i| -> number of examples with that membership size.
std::map<std::size_t, std::size_t> membership_histogram(const MembershipSets& memberships);

}  // namespace kalign
