#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kalign/clustering.hpp"
#include "kalign/dataset.hpp"
#include "kalign/features.hpp"

namespace kalign {

// K x D linear layer producing one score per pose class.
struct ClassifierHead {
    Eigen::MatrixXd weights;
    Eigen::VectorXd bias;

    ClassifierHead() = default;
    ClassifierHead(std::size_t k, std::size_t d);

    std::size_t n_classes() const { return static_cast<std::size_t>(weights.rows()); }
    std::size_t feature_dim() const { return static_cast<std::size_t>(weights.cols()); }
    std::size_t parameter_count() const { return n_classes() * (feature_dim() + 1); }
};

Eigen::VectorXd scores(const ClassifierHead& head, const Eigen::Ref<const Eigen::VectorXd>& feature);
// Row i holds the scores of features.row(i).
Eigen::MatrixXd scores_batch(const ClassifierHead& head, const Eigen::Ref<const Eigen::MatrixXd>& features);

struct LossValue {
    double loss = 0.0;
    Eigen::VectorXd grad;  // d loss / d scores
};

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& s);
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& s);

// -log softmax(s)[c]; grad = p - onehot(c).
LossValue softmax_loss(const Eigen::Ref<const Eigen::VectorXd>& s, std::size_t c);
// Cross-entropy against q uniform on `members`; grad = p - q.
LossValue soft_target_loss(const Eigen::Ref<const Eigen::VectorXd>& s, std::span<const std::size_t> members);
// sum_k log(1 + exp(-c_k s_k)), c_k = +1 on members and -1 elsewhere; grad = sigmoid(s) - [k in members].
LossValue multi_label_loss(const Eigen::Ref<const Eigen::VectorXd>& s, std::span<const std::size_t> members);

enum class LossKind { Softmax, SoftTarget, MultiLabel };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct TrainConfig {
    LossKind loss = LossKind::MultiLabel;
    double learning_rate = 0.5;
    // Multiplied into the learning rate after each epoch.
    double lr_decay = 0.95;
    double momentum = 0.9;
    int epochs = 30;
    int batch_size = 32;
    double weight_decay = 1e-4;
    bool train_bias = false;
    // Scales the learning rate of a trainable extractor relative to the head.
    double extractor_lr_scale = 0.1;
    std::uint64_t seed = 1;
};

std::string fingerprint(const TrainConfig& config);

struct TrainLog {
    std::vector<double> epoch_loss;
    // Fraction of training examples whose argmax class lies outside M_i.
    std::vector<double> epoch_multilabel_error;
};

// Per-example training targets: hard class for the softmax loss and the membership set for the others.
struct TrainTargets {
    std::vector<std::size_t> hard_class;
    const MembershipSets* memberships = nullptr;
};

TrainTargets make_targets(const PoseClassSet& classes, std::span<const Shape> shapes, const MembershipSets& memberships);

// Trains a head on precomputed features (M x D). Deterministic given config.seed.
ClassifierHead train_head(const Eigen::MatrixXd& features, const TrainTargets& targets, std::size_t n_classes,
                          const TrainConfig& config, TrainLog* log = nullptr);

// Trains head and extractor jointly; inputs are contrast-normalized crops (M x P).
ClassifierHead train_joint(const Eigen::MatrixXd& inputs, MlpExtractor& extractor, const TrainTargets& targets,
                           std::size_t n_classes, const TrainConfig& config, TrainLog* log = nullptr);

// Dataset-level entry point: crops at the annotation bbox and dispatches on extractor.trainable().
ClassifierHead train(const Dataset& dataset, FeatureExtractor& extractor, const PoseClassSet& classes,
                     const MembershipSets& memberships, const TrainConfig& config, TrainLog* log = nullptr);

enum class EmbedMode { Weights, Features };

Eigen::VectorXd embed_class(const ClassifierHead& head, std::size_t cls);
Eigen::VectorXd embed_image(const FeatureExtractor& extractor, const GrayImage& image, const BBox& window);

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

// Row index of `bank` with the highest cosine similarity to `query`; ties go to the lowest index.
std::size_t nn_classify(const Eigen::Ref<const Eigen::MatrixXd>& bank, const Eigen::Ref<const Eigen::VectorXd>& query);

// Batched version; bank rows are normalized once.
std::vector<std::size_t> nn_classify_batch(const Eigen::Ref<const Eigen::MatrixXd>& bank,
                                           const Eigen::Ref<const Eigen::MatrixXd>& queries);

}  // namespace kalign
