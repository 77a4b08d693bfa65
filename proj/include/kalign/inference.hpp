#pragma once

#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "kalign/classifier.hpp"
#include "kalign/clustering.hpp"
#include "kalign/shape.hpp"

namespace kalign {

// Probability vector over the K pose classes.
class PosePosterior {
public:
    PosePosterior() = default;
    // Validates non-negativity, finiteness and unit sum (1e-9).
    explicit PosePosterior(Eigen::VectorXd probs);

    std::size_t size() const { return static_cast<std::size_t>(probs_.size()); }
    double operator[](std::size_t k) const { return probs_[static_cast<Eigen::Index>(k)]; }
    const Eigen::VectorXd& probs() const { return probs_; }

private:
    Eigen::VectorXd probs_;
};

// softmax(scores / temperature).
PosePosterior posterior_from_scores(const Eigen::Ref<const Eigen::VectorXd>& scores, double temperature = 1.0);
PosePosterior posterior(const ClassifierHead& head, const Eigen::Ref<const Eigen::VectorXd>& feature,
                        double temperature = 1.0);

std::size_t map_class(const PosePosterior& p);

// The k most probable classes, descending; equal probabilities keep ascending class order.
std::vector<std::pair<std::size_t, double>> top_k(const PosePosterior& p, std::size_t k);

// Mixture of spherical Gaussians over the stacked 2N landmark space; sigma_k is the
// per-coordinate standard deviation.
struct LandmarkDistribution {
    Eigen::VectorXd weights;
    Eigen::MatrixXd means;  // K x 2N
    Eigen::VectorXd sigmas;

    std::size_t n_components() const { return static_cast<std::size_t>(weights.size()); }
    std::size_t dim() const { return static_cast<std::size_t>(means.cols()); }
    double log_density(const Eigen::Ref<const Eigen::VectorXd>& y) const;
    double density(const Eigen::Ref<const Eigen::VectorXd>& y) const;
    Eigen::VectorXd mean() const;
};

LandmarkDistribution mixture(const PosePosterior& p, const PoseClassSet& classes);

// Cell-centered grid over the canonical frame.
struct GridSpec {
    double x_min = -0.5;
    double x_max = 0.5;
    double y_min = -0.5;
    double y_max = 0.5;
    int nx = 32;
    int ny = 32;

    double cell_x(int c) const { return x_min + (c + 0.5) * (x_max - x_min) / nx; }
    double cell_y(int r) const { return y_min + (r + 0.5) * (y_max - y_min) / ny; }
};

struct Heatmap {
    GridSpec grid;
    Eigen::MatrixXd mass;  // ny x nx, sums to 1
};

Heatmap marginal_heatmap(const LandmarkDistribution& dist, std::size_t landmark, const GridSpec& grid);

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> mass;
    // Exact pushforward mean sum_k p_k stat(mu_k), independent of binning.
    double expectation = 0.0;

    double bin_center(std::size_t b) const;
    std::size_t bin_of(double value) const;
    double binned_mean() const;
};

using ShapeStatistic = std::function<double(const Shape&)>;

// Pushforward of the class posterior through a scalar shape statistic. The bin range defaults
// to the statistic's span over all class centers.
Histogram marginal_global(const PosePosterior& p, const PoseClassSet& classes, const ShapeStatistic& statistic,
                          int n_bins, std::optional<std::pair<double, double>> range = std::nullopt);

// A user click: landmark `landmark` is at `position` (canonical frame) within `tolerance`.
struct Evidence {
    std::size_t landmark = 0;
    Point2 position;
    double tolerance = 0.05;
};

// Omega(E): classes whose mean places the landmark within the tolerance ball.
std::vector<std::size_t> consistent_classes(const PoseClassSet& classes, const Evidence& evidence);

// Restricts the posterior to Omega(E) and renormalizes. Throws NoConsistentClass when Omega(E) is empty.
PosePosterior condition(const PosePosterior& p, const PoseClassSet& classes, const Evidence& evidence);
// Restriction to the intersection of Omega(E) over all evidence; equals repeated condition() on a
// posterior without zero entries.
PosePosterior condition_all(const PosePosterior& p, const PoseClassSet& classes, std::span<const Evidence> evidence);
PosePosterior restrict_to(const PosePosterior& p, const std::vector<std::size_t>& support);

enum class PredictMode { Map, Expectation };

Shape predict_landmarks(const PosePosterior& p, const PoseClassSet& classes, PredictMode mode);

}  // namespace kalign
