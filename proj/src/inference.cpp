#include "kalign/inference.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <numbers>
#include <numeric>

#include "kalign/argmax.hpp"
#include "kalign/error.hpp"

namespace kalign {

PosePosterior::PosePosterior(Eigen::VectorXd probs) : probs_(std::move(probs)) {
    if (probs_.size() == 0) fail(ErrorKind::Contract, "posterior over zero classes");
    if (!probs_.allFinite() || (probs_.array() < 0.0).any())
        fail(ErrorKind::Contract, "posterior entries must be finite and non-negative");
    if (std::abs(probs_.sum() - 1.0) > 1e-9) fail(ErrorKind::Contract, "posterior does not sum to 1");
}

PosePosterior posterior_from_scores(const Eigen::Ref<const Eigen::VectorXd>& s, double temperature) {
    if (!(temperature > 0.0)) fail(ErrorKind::Config, "temperature must be positive");
    if (!s.allFinite()) fail(ErrorKind::Contract, "non-finite class scores");
    return PosePosterior(softmax(s / temperature));
}

PosePosterior posterior(const ClassifierHead& head, const Eigen::Ref<const Eigen::VectorXd>& feature, double temperature) {
    return posterior_from_scores(scores(head, feature), temperature);
}

std::size_t map_class(const PosePosterior& p) { return argmax(p.probs()); }

std::vector<std::pair<std::size_t, double>> top_k(const PosePosterior& p, std::size_t k) {
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t i = 0; i < k; ++i) out.emplace_back(idx[i], p[idx[i]]);
    return out;
}

double LandmarkDistribution::log_density(const Eigen::Ref<const Eigen::VectorXd>& y) const {
    if (y.size() != means.cols()) fail(ErrorKind::Schema, "point dimension does not match the mixture");
    const double d = static_cast<double>(dim());
    Eigen::VectorXd terms(weights.size());
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
        const double s2 = sigmas[k] * sigmas[k];
        const double sq = (y.transpose() - means.row(k)).squaredNorm();
        terms[k] = weights[k] > 0.0
                       ? std::log(weights[k]) - 0.5 * d * std::log(2.0 * std::numbers::pi * s2) - 0.5 * sq / s2
                       : -std::numeric_limits<double>::infinity();
    }
    const double m = terms.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((terms.array() - m).exp().sum());
}

double LandmarkDistribution::density(const Eigen::Ref<const Eigen::VectorXd>& y) const { return std::exp(log_density(y)); }

Eigen::VectorXd LandmarkDistribution::mean() const { return means.transpose() * weights; }

LandmarkDistribution mixture(const PosePosterior& p, const PoseClassSet& classes) {
    if (p.size() != classes.size())
        fail(ErrorKind::Schema, "posterior has " + std::to_string(p.size()) + " classes, class set has " +
                                    std::to_string(classes.size()));
    if (classes.bandwidths.size() != classes.size()) fail(ErrorKind::Contract, "class set has no fitted bandwidths");
    LandmarkDistribution dist;
    dist.weights = p.probs();
    dist.means = classes.center_matrix();
    dist.sigmas = Eigen::Map<const Eigen::VectorXd>(classes.bandwidths.data(),
                                                    static_cast<Eigen::Index>(classes.bandwidths.size()));
    return dist;
}

Heatmap marginal_heatmap(const LandmarkDistribution& dist, std::size_t landmark, const GridSpec& grid) {
    if (grid.nx < 1 || grid.ny < 1 || !(grid.x_max > grid.x_min) || !(grid.y_max > grid.y_min))
        fail(ErrorKind::Config, "degenerate heatmap grid");
    if (2 * landmark + 1 >= dist.dim())
        fail(ErrorKind::Contract, "landmark index out of range");
    Heatmap h{grid, Eigen::MatrixXd::Zero(grid.ny, grid.nx)};
    const auto jx = static_cast<Eigen::Index>(2 * landmark);
    for (Eigen::Index k = 0; k < dist.weights.size(); ++k) {
        const double w = dist.weights[k];
        if (w <= 0.0) continue;
        const double s2 = dist.sigmas[k] * dist.sigmas[k];
        const double mx = dist.means(k, jx), my = dist.means(k, jx + 1);
        const double norm = w / (2.0 * std::numbers::pi * s2);
        for (int r = 0; r < grid.ny; ++r) {
            const double dy = grid.cell_y(r) - my;
            for (int c = 0; c < grid.nx; ++c) {
                const double dx = grid.cell_x(c) - mx;
                h.mass(r, c) += norm * std::exp(-0.5 * (dx * dx + dy * dy) / s2);
            }
        }
    }
    const double total = h.mass.sum();
    if (total > 0.0) h.mass /= total;
    else h.mass.setConstant(1.0 / (static_cast<double>(grid.nx) * grid.ny));
    return h;
}

double Histogram::bin_center(std::size_t b) const {
    return lo + (static_cast<double>(b) + 0.5) * (hi - lo) / static_cast<double>(mass.size());
}

std::size_t Histogram::bin_of(double value) const {
    const double t = (value - lo) / (hi - lo) * static_cast<double>(mass.size());
    const auto b = static_cast<long>(std::floor(t));
    return static_cast<std::size_t>(std::clamp<long>(b, 0, static_cast<long>(mass.size()) - 1));
}

double Histogram::binned_mean() const {
    double m = 0.0;
    for (std::size_t b = 0; b < mass.size(); ++b) m += mass[b] * bin_center(b);
    return m;
}

Histogram marginal_global(const PosePosterior& p, const PoseClassSet& classes, const ShapeStatistic& statistic,
                          int n_bins, std::optional<std::pair<double, double>> range) {
    if (n_bins < 1) fail(ErrorKind::Config, "histogram needs at least one bin");
    if (p.size() != classes.size()) fail(ErrorKind::Schema, "posterior and class set disagree on K");
    std::vector<double> values(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) values[k] = statistic(classes.centers[k]);
    Histogram h;
    if (range) {
        h.lo = range->first;
        h.hi = range->second;
        if (!(h.hi > h.lo)) fail(ErrorKind::Config, "histogram range must be increasing");
    } else {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        h.lo = *mn;
        h.hi = *mx;
        if (!(h.hi > h.lo)) {
            h.lo -= 0.5;
            h.hi += 0.5;
        }
    }
    h.mass.assign(static_cast<std::size_t>(n_bins), 0.0);
    for (std::size_t k = 0; k < classes.size(); ++k) {
        h.mass[h.bin_of(values[k])] += p[k];
        h.expectation += p[k] * values[k];
    }
    return h;
}

std::vector<std::size_t> consistent_classes(const PoseClassSet& classes, const Evidence& e) {
    if (!(e.tolerance > 0.0)) fail(ErrorKind::Config, "evidence tolerance must be positive");
    if (e.landmark >= classes.n_points()) fail(ErrorKind::Contract, "evidence landmark index out of range");
    std::vector<std::size_t> omega;
    const double t2 = e.tolerance * e.tolerance;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const Point2 m = classes.centers[k].point(e.landmark);
        const double dx = m.x - e.position.x, dy = m.y - e.position.y;
        if (dx * dx + dy * dy <= t2) omega.push_back(k);
    }
    return omega;
}

PosePosterior restrict_to(const PosePosterior& p, const std::vector<std::size_t>& support) {
    if (support.empty()) fail(ErrorKind::NoConsistentClass, "no pose class is consistent with the evidence");
    Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.size()));
    double total = 0.0;
    for (auto k : support) {
        q[static_cast<Eigen::Index>(k)] = p[k];
        total += p[k];
    }
    // No mass outside the support: nothing to renormalize.
    if (total > 0.0 && q == p.probs()) return p;
    if (total > 0.0) {
        q /= total;
    } else {
        // All consistent classes underflowed; fall back to uniform over the support.
        for (auto k : support) q[static_cast<Eigen::Index>(k)] = 1.0 / static_cast<double>(support.size());
    }
    return PosePosterior(std::move(q));
}

PosePosterior condition(const PosePosterior& p, const PoseClassSet& classes, const Evidence& evidence) {
    if (p.size() != classes.size()) fail(ErrorKind::Schema, "posterior and class set disagree on K");
    return restrict_to(p, consistent_classes(classes, evidence));
}

PosePosterior condition_all(const PosePosterior& p, const PoseClassSet& classes, std::span<const Evidence> evidence) {
    if (p.size() != classes.size()) fail(ErrorKind::Schema, "posterior and class set disagree on K");
    if (evidence.empty()) return p;
    std::vector<std::size_t> support = consistent_classes(classes, evidence.front());
    for (std::size_t i = 1; i < evidence.size() && !support.empty(); ++i) {
        const auto next = consistent_classes(classes, evidence[i]);
        std::vector<std::size_t> both;
        std::set_intersection(support.begin(), support.end(), next.begin(), next.end(), std::back_inserter(both));
        support = std::move(both);
    }
    return restrict_to(p, support);
}

Shape predict_landmarks(const PosePosterior& p, const PoseClassSet& classes, PredictMode mode) {
    if (p.size() != classes.size()) fail(ErrorKind::Schema, "posterior and class set disagree on K");
    if (mode == PredictMode::Map) return classes.centers[map_class(p)];
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(classes.centers.front().stacked().size());
    for (std::size_t k = 0; k < classes.size(); ++k)
        if (p[k] > 0.0) acc += p[k] * classes.centers[k].stacked();
    return Shape(std::move(acc));
}

}  // namespace kalign
