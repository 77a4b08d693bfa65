#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kalign/classifier.hpp"
#include "kalign/dataset.hpp"
#include "kalign/features.hpp"
#include "kalign/model.hpp"

namespace kalign {

inline constexpr double kFailureThreshold = 0.08;

// RMS landmark distance divided by the ground-truth bbox diagonal.
double pt_pt_error(std::span<const Point2> predicted, const RawAnnotation& truth);
// Same error for a prediction in the canonical frame of the ground-truth bbox.
double canonical_error(const Shape& predicted, const Shape& truth);

struct CedCurve {
    double threshold = kFailureThreshold;
    std::vector<double> grid;       // uniform over [0, threshold], endpoints included
    std::vector<double> fractions;  // fraction of errors <= grid[i]
    double auc = 0.0;
    double failure_rate = 0.0;  // percent of errors > threshold
};

CedCurve ced_stats(std::span<const double> errors, double threshold = kFailureThreshold, std::size_t grid_points = 801);

// Indices of the ceil(fraction * M) records farthest from `mean`, farthest first;
// equal distances keep ascending index order.
std::vector<std::size_t> hard_subset_indices(const Dataset& dataset, const Shape& mean, double fraction = 0.1);
Dataset hard_subset(const Dataset& dataset, const Shape& mean, double fraction = 0.1);

// ---- loss vs number of classes ----

struct LossScalingConfig {
    std::vector<std::size_t> k_grid;
    std::vector<LossKind> losses{LossKind::Softmax, LossKind::SoftTarget, LossKind::MultiLabel};
    double tau = 0.1;
    TrainConfig train;
    std::uint64_t cluster_seed = 3;
};

struct LossScalingRow {
    std::size_t k = 0;
    LossKind loss = LossKind::Softmax;
    double train_landmark_error = 0.0;
    double val_landmark_error = 0.0;
    // Fraction of examples whose MAP class is outside M_i.
    double train_multilabel_error = 0.0;
    double val_multilabel_error = 0.0;
    // Fraction of examples whose MAP class is not the nearest class.
    double train_exact_error = 0.0;
    double val_exact_error = 0.0;
    double final_train_loss = 0.0;
};

// Features are M x D and V x D rows aligned with the datasets.
std::vector<LossScalingRow> loss_scaling_experiment(const Dataset& train, const Eigen::MatrixXd& train_features,
                                                    const Dataset& val, const Eigen::MatrixXd& val_features,
                                                    const LossScalingConfig& config);

// ---- head scaling bench ----

struct BenchConfig {
    std::size_t feature_dim = 64;
    std::vector<std::size_t> k_grid{10, 100, 1000, 10000};
    // Extractor FLOPs as a multiple of the head FLOPs at the largest K.
    double extractor_ratio = 200.0;
    int repetitions = 101;
    int warmup = 5;
    std::uint64_t seed = 41;
};

struct BenchRow {
    std::size_t k = 0;
    std::size_t parameters = 0;
    std::size_t bytes = 0;
    double head_flops = 0.0;
    double median_total_seconds = 0.0;
    double median_head_seconds = 0.0;
    double head_share = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    double extractor_flops = 0.0;
    nlohmann::json extractor_config;
    nlohmann::json machine;
};

nlohmann::json machine_fingerprint();
BenchResult bench_head_scaling(const BenchConfig& config);

// ---- interactive annotation ----

enum class ClickPolicy { None, FixedPoint, BestPoint };

std::string to_string(ClickPolicy policy);

struct InteractiveRow {
    ClickPolicy policy = ClickPolicy::None;
    double failure_rate = 0.0;
    double mean_error = 0.0;
    // Frames where the click admitted no class and the unconditioned prediction was kept.
    std::size_t fallbacks = 0;
    std::vector<double> errors;
};

struct InteractiveConfig {
    std::vector<ClickPolicy> policies{ClickPolicy::None, ClickPolicy::FixedPoint, ClickPolicy::BestPoint};
    // Landmark clicked by the fixed-point policy; defaults to the schema's nose.
    std::optional<std::size_t> landmark;
    // Click tolerance; defaults to the model's tau_evidence.
    std::optional<double> tolerance;
    bool refine = false;
};

std::vector<InteractiveRow> interactive_eval(const Dataset& dataset, const Model& model,
                                             const InteractiveConfig& config = {});

// ---- predictor comparison ----

struct PredictorRow {
    std::string predictor;
    std::vector<double> errors;
    double mean_error = 0.0;
    CedCurve ced;
};

// Mean-shape baseline, classification (MAP class mean) and classification + cascade, on ground-truth windows.
std::vector<PredictorRow> compare_predictors(const Dataset& dataset, const Model& model, const Shape& mean_shape);

// Linear head versus cosine nearest neighbor against head weights and against training features.
struct EmbeddingComparison {
    double head_error = 0.0;
    double nn_weights_error = 0.0;
    double nn_features_error = 0.0;
};

EmbeddingComparison compare_embeddings(const ClassifierHead& head, const PoseClassSet& classes,
                                       const Eigen::MatrixXd& train_features, std::span<const Shape> train_shapes,
                                       const Eigen::MatrixXd& val_features, std::span<const Shape> val_shapes);

// ---- result tables ----

// A header row plus data rows; written as CSV or as a JSON array of objects.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

Table to_table(const std::vector<LossScalingRow>& rows);
Table to_table(const BenchResult& result);
Table to_table(const std::vector<InteractiveRow>& rows);
Table to_table(const std::vector<PredictorRow>& rows);

void write_csv(std::ostream& os, const Table& table);
nlohmann::json to_json(const Table& table);

}  // namespace kalign
