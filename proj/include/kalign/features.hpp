#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "kalign/dataset.hpp"
#include "kalign/image.hpp"

namespace kalign {

using ParamMap = std::map<std::string, Eigen::MatrixXd>;

// Maps a fixed-size face crop to a D-dimensional descriptor. Implementations are deterministic.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;

    virtual std::string kind() const = 0;
    virtual std::size_t dim() const = 0;
    // Side length of the square crop fed to extract().
    virtual int input_size() const = 0;
    virtual double flops_per_example() const = 0;

    virtual Eigen::VectorXd extract(const GrayImage& crop) const = 0;

    virtual bool trainable() const { return false; }

    virtual nlohmann::json config() const = 0;
    virtual ParamMap params() const = 0;

    Eigen::VectorXd extract_window(const GrayImage& image, const BBox& window) const;
};

// Crop pixels with mean removed and scaled to unit norm (zero vector for a flat crop).
Eigen::VectorXd contrast_normalize(const GrayImage& crop);

// Random Fourier features of the contrast-normalized crop:
// f = sqrt(2/D) cos(R x / bandwidth + phase), R ~ N(0, 1).
class RandomFeatureExtractor final : public FeatureExtractor {
public:
    struct Options {
        int input_size = 24;
        std::size_t dim = 384;
        double bandwidth = 0.6;
        std::uint64_t seed = 17;
    };

    explicit RandomFeatureExtractor(const Options& options);
    RandomFeatureExtractor(const Options& options, Eigen::MatrixXd projection, Eigen::VectorXd phase);

    std::string kind() const override { return "random_fourier"; }
    std::size_t dim() const override { return options_.dim; }
    int input_size() const override { return options_.input_size; }
    double flops_per_example() const override;
    Eigen::VectorXd extract(const GrayImage& crop) const override;
    nlohmann::json config() const override;
    ParamMap params() const override;

private:
    Options options_;
    Eigen::MatrixXd projection_;  // D x P, already divided by the bandwidth
    Eigen::VectorXd phase_;
};

// One hidden layer, f = relu(W x + b), trainable through backward().
class MlpExtractor final : public FeatureExtractor {
public:
    struct Options {
        int input_size = 24;
        std::size_t dim = 256;
        double init_scale = 1.0;
        std::uint64_t seed = 23;
    };

    explicit MlpExtractor(const Options& options);
    MlpExtractor(const Options& options, Eigen::MatrixXd weights, Eigen::VectorXd bias);

    std::string kind() const override { return "mlp"; }
    std::size_t dim() const override { return options_.dim; }
    int input_size() const override { return options_.input_size; }
    double flops_per_example() const override;
    Eigen::VectorXd extract(const GrayImage& crop) const override;
    bool trainable() const override { return true; }
    nlohmann::json config() const override;
    ParamMap params() const override;

    // Batched forward on contrast-normalized inputs (B x P); returns B x D.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
    // Given dLoss/dFeatures (B x D) and the forward inputs, accumulates parameter gradients.
    void backward(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& features, const Eigen::MatrixXd& grad_features,
                  Eigen::MatrixXd& grad_weights, Eigen::VectorXd& grad_bias) const;

    Eigen::MatrixXd& weights() { return weights_; }
    Eigen::VectorXd& bias() { return bias_; }
    const Eigen::MatrixXd& weights() const { return weights_; }
    const Eigen::VectorXd& bias() const { return bias_; }

private:
    Options options_;
    Eigen::MatrixXd weights_;  // D x P
    Eigen::VectorXd bias_;
};

// Stack of random 3x3 convolutions + ReLU, global average pooling and a random linear map to D.
// Used to emulate a backbone whose cost dominates the classifier head.
class ConvStackExtractor final : public FeatureExtractor {
public:
    struct Options {
        int input_size = 32;
        int channels = 16;
        int layers = 4;
        std::size_t dim = 64;
        std::uint64_t seed = 29;
    };

    explicit ConvStackExtractor(const Options& options);

    // Picks the channel count so the extractor needs at least the requested FLOPs.
    static Options for_flops(double flops, int input_size, int layers, std::size_t dim, std::uint64_t seed);

    std::string kind() const override { return "conv_stack"; }
    std::size_t dim() const override { return options_.dim; }
    int input_size() const override { return options_.input_size; }
    double flops_per_example() const override;
    Eigen::VectorXd extract(const GrayImage& crop) const override;
    nlohmann::json config() const override;
    ParamMap params() const override;

private:
    Options options_;
    std::vector<Eigen::MatrixXf> filters_;  // per layer: C_out x (9 * C_in)
    Eigen::MatrixXf head_;                  // D x C
};

std::unique_ptr<FeatureExtractor> make_extractor(const nlohmann::json& config, const ParamMap& params = {});

// M x D features of every record, cropped at its annotation bbox or at windows[i] when given.
Eigen::MatrixXd extract_dataset(const FeatureExtractor& extractor, const Dataset& dataset,
                                const std::vector<BBox>* windows = nullptr);

}  // namespace kalign
