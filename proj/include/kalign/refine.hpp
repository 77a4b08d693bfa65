#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "kalign/clustering.hpp"
#include "kalign/dataset.hpp"
#include "kalign/features.hpp"

namespace kalign {

// Affine map x -> x W + b fitted by ridge regression (bias not penalized).
struct RidgeModel {
    Eigen::MatrixXd weights;  // F x O
    Eigen::RowVectorXd bias;  // O

    Eigen::RowVectorXd apply(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return x * weights + bias; }
    Eigen::MatrixXd apply_batch(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
    bool empty() const { return weights.size() == 0; }
};

RidgeModel fit_ridge(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::MatrixXd>& y,
                     double lambda);

// R-CNN parametrization of a window correction.
struct BBoxDelta {
    double dx = 0.0;  // center shift / width
    double dy = 0.0;  // center shift / height
    double dw = 0.0;  // log width ratio
    double dh = 0.0;  // log height ratio
};

BBoxDelta bbox_delta(const BBox& from, const BBox& to);
// Log-scale terms are clamped to [-clamp, clamp] so the result keeps positive extent.
BBox apply_delta(const BBox& box, const BBoxDelta& delta, double clamp = 1.0);

struct BBoxRegressor {
    RidgeModel model;
    double lambda = 0.0;

    BBoxDelta predict(const Eigen::Ref<const Eigen::VectorXd>& feature) const;
};

struct PerturbOptions {
    double shift = 0.12;       // max center shift, fraction of the window side
    double log_scale = 0.15;   // max |log scale change|
    std::uint64_t seed = 5;
};

// Simulated detector output: every ground-truth window jittered in position and scale.
std::vector<BBox> perturb_windows(const Dataset& dataset, const PerturbOptions& options);

BBoxRegressor train_bbox_regressor(const Dataset& dataset, const FeatureExtractor& extractor,
                                   const std::vector<BBox>& detections, double lambda);

// One-shot refinement of a detection window.
BBox refine_bbox(const BBoxRegressor& regressor, const FeatureExtractor& extractor, const GrayImage& image,
                 const BBox& detection);

// Raw-pixel patch samples around each landmark: grid x grid points spaced `spacing` canonical units apart.
struct PatchSpec {
    int grid = 5;
    double spacing = 0.018;

    std::size_t dim(std::size_t n_points) const { return n_points * static_cast<std::size_t>(grid * grid); }
};

Eigen::VectorXd patch_features(const GrayImage& image, const BBox& bbox, const Shape& shape, const PatchSpec& spec);

struct CascadeOptions {
    std::size_t groups = 100;
    std::size_t levels = 7;
    double lambda = 1.0;
    // Initializations per example and group, drawn from the classes of M_i inside the group.
    std::size_t max_inits = 3;
    PatchSpec patch;
    std::uint64_t seed = 11;
};

struct CascadedRegressor {
    PatchSpec patch;
    std::size_t levels = 0;
    std::vector<std::size_t> group_of_class;
    std::vector<std::vector<RidgeModel>> groups;  // [group][level]

    std::size_t n_groups() const { return groups.size(); }
};

struct CascadeTrainLog {
    // Mean normalized point-to-point error over all training samples, before level 0 and after each level.
    std::vector<double> level_mean_error;
    std::vector<double> level_sum_squares;
    // Examples used to train each group.
    std::vector<std::vector<std::size_t>> group_examples;
};

// Groups classes by k-means on their centers (one group per class when groups >= K).
std::vector<std::size_t> group_classes(const PoseClassSet& classes, std::size_t groups, std::uint64_t seed);

// Example i joins group g iff some class of M_i belongs to g.
std::vector<std::vector<std::size_t>> group_training_sets(const std::vector<std::size_t>& group_of_class,
                                                          std::size_t n_groups, const MembershipSets& memberships);

CascadedRegressor train_pose_regressors(const Dataset& dataset, const PoseClassSet& classes,
                                        const MembershipSets& memberships, const CascadeOptions& options,
                                        CascadeTrainLog* log = nullptr);

// Starts from mu_cls and runs the cascade of the class's group. Returns a canonical-frame shape.
Shape apply_regressor(const CascadedRegressor& cascade, const PoseClassSet& classes, const GrayImage& image,
                      std::size_t cls, const BBox& bbox);

}  // namespace kalign
