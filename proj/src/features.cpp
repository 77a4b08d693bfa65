#include "kalign/features.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "kalign/error.hpp"

namespace kalign {

Eigen::VectorXd FeatureExtractor::extract_window(const GrayImage& image, const BBox& window) const {
    return extract(crop_window(image, window, input_size()));
}

Eigen::VectorXd contrast_normalize(const GrayImage& crop) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(crop.pixels.size()));
    for (std::size_t i = 0; i < crop.pixels.size(); ++i) x[static_cast<Eigen::Index>(i)] = crop.pixels[i];
    x.array() -= x.mean();
    const double n = x.norm();
    if (n > 1e-12) x /= n;
    else x.setZero();
    return x;
}

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * n(rng);
    return m;
}

void check_crop(const GrayImage& crop, int size) {
    if (crop.width != size || crop.height != size)
        fail(ErrorKind::Schema, "extractor expects a " + std::to_string(size) + "x" + std::to_string(size) + " crop");
}

}  // namespace

// ---- RandomFeatureExtractor ----

RandomFeatureExtractor::RandomFeatureExtractor(const Options& options) : options_(options) {
    if (options.dim == 0 || options.input_size <= 0 || !(options.bandwidth > 0.0))
        fail(ErrorKind::Config, "invalid random feature extractor options");
    std::mt19937_64 rng(options.seed);
    const auto p = static_cast<Eigen::Index>(options.input_size) * options.input_size;
    projection_ = gaussian_matrix(static_cast<Eigen::Index>(options.dim), p, 1.0 / options.bandwidth, rng);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    phase_.resize(static_cast<Eigen::Index>(options.dim));
    for (Eigen::Index i = 0; i < phase_.size(); ++i) phase_[i] = u(rng);
}

RandomFeatureExtractor::RandomFeatureExtractor(const Options& options, Eigen::MatrixXd projection, Eigen::VectorXd phase)
    : options_(options), projection_(std::move(projection)), phase_(std::move(phase)) {
    const auto p = static_cast<Eigen::Index>(options.input_size) * options.input_size;
    if (projection_.rows() != static_cast<Eigen::Index>(options.dim) || projection_.cols() != p ||
        phase_.size() != projection_.rows())
        fail(ErrorKind::Schema, "random feature parameters do not match their declared shape");
}

double RandomFeatureExtractor::flops_per_example() const {
    return 2.0 * static_cast<double>(projection_.rows()) * static_cast<double>(projection_.cols());
}

Eigen::VectorXd RandomFeatureExtractor::extract(const GrayImage& crop) const {
    check_crop(crop, options_.input_size);
    const Eigen::VectorXd x = contrast_normalize(crop);
    const double scale = std::sqrt(2.0 / static_cast<double>(options_.dim));
    return ((projection_ * x + phase_).array().cos() * scale).matrix();
}

nlohmann::json RandomFeatureExtractor::config() const {
    return {{"kind", kind()},
            {"input_size", options_.input_size},
            {"dim", options_.dim},
            {"bandwidth", options_.bandwidth},
            {"seed", options_.seed}};
}

ParamMap RandomFeatureExtractor::params() const { return {{"projection", projection_}, {"phase", phase_}}; }

// ---- MlpExtractor ----

MlpExtractor::MlpExtractor(const Options& options) : options_(options) {
    if (options.dim == 0 || options.input_size <= 0) fail(ErrorKind::Config, "invalid MLP extractor options");
    std::mt19937_64 rng(options.seed);
    const auto p = static_cast<Eigen::Index>(options.input_size) * options.input_size;
    // Inputs are unit norm, so unit-variance rows give O(1) pre-activations.
    weights_ = gaussian_matrix(static_cast<Eigen::Index>(options.dim), p, options.init_scale, rng);
    bias_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(options.dim));
}

MlpExtractor::MlpExtractor(const Options& options, Eigen::MatrixXd weights, Eigen::VectorXd bias)
    : options_(options), weights_(std::move(weights)), bias_(std::move(bias)) {
    const auto p = static_cast<Eigen::Index>(options.input_size) * options.input_size;
    if (weights_.rows() != static_cast<Eigen::Index>(options.dim) || weights_.cols() != p ||
        bias_.size() != weights_.rows())
        fail(ErrorKind::Schema, "MLP parameters do not match their declared shape");
}

double MlpExtractor::flops_per_example() const {
    return 2.0 * static_cast<double>(weights_.rows()) * static_cast<double>(weights_.cols());
}

Eigen::VectorXd MlpExtractor::extract(const GrayImage& crop) const {
    check_crop(crop, options_.input_size);
    return (weights_ * contrast_normalize(crop) + bias_).cwiseMax(0.0);
}

Eigen::MatrixXd MlpExtractor::forward(const Eigen::MatrixXd& inputs) const {
    Eigen::MatrixXd z = inputs * weights_.transpose();
    z.rowwise() += bias_.transpose();
    return z.cwiseMax(0.0);
}

void MlpExtractor::backward(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& features,
                            const Eigen::MatrixXd& grad_features, Eigen::MatrixXd& grad_weights,
                            Eigen::VectorXd& grad_bias) const {
    const Eigen::MatrixXd gated = (features.array() > 0.0).cast<double>() * grad_features.array();
    grad_weights += gated.transpose() * inputs;
    grad_bias += gated.colwise().sum().transpose();
}

nlohmann::json MlpExtractor::config() const {
    return {{"kind", kind()},
            {"input_size", options_.input_size},
            {"dim", options_.dim},
            {"init_scale", options_.init_scale},
            {"seed", options_.seed}};
}

ParamMap MlpExtractor::params() const { return {{"weights", weights_}, {"bias", bias_}}; }

// ---- ConvStackExtractor ----

ConvStackExtractor::ConvStackExtractor(const Options& options) : options_(options) {
    if (options.channels < 1 || options.layers < 1 || options.dim == 0 || options.input_size < 3)
        fail(ErrorKind::Config, "invalid conv stack options");
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    int c_in = 1;
    for (int l = 0; l < options.layers; ++l) {
        Eigen::MatrixXf f(options.channels, 9 * c_in);
        const float scale = std::sqrt(2.0f / (9.0f * static_cast<float>(c_in)));
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = scale * n(rng);
        filters_.push_back(std::move(f));
        c_in = options.channels;
    }
    head_.resize(static_cast<Eigen::Index>(options.dim), options.channels);
    for (Eigen::Index i = 0; i < head_.size(); ++i) head_.data()[i] = n(rng) / std::sqrt(static_cast<float>(options.channels));
}

ConvStackExtractor::Options ConvStackExtractor::for_flops(double flops, int input_size, int layers, std::size_t dim,
                                                          std::uint64_t seed) {
    Options o;
    o.input_size = input_size;
    o.layers = layers;
    o.dim = dim;
    o.seed = seed;
    const double hw = static_cast<double>(input_size) * input_size;
    for (o.channels = 1;; ++o.channels) {
        const double c = o.channels;
        const double total = 2.0 * hw * 9.0 * c + (layers - 1) * 2.0 * hw * 9.0 * c * c + 2.0 * c * static_cast<double>(dim);
        if (total >= flops) break;
    }
    return o;
}

double ConvStackExtractor::flops_per_example() const {
    const double hw = static_cast<double>(options_.input_size) * options_.input_size;
    double total = 0.0;
    for (const auto& f : filters_) total += 2.0 * hw * static_cast<double>(f.rows()) * static_cast<double>(f.cols());
    return total + 2.0 * static_cast<double>(head_.rows()) * static_cast<double>(head_.cols());
}

Eigen::VectorXd ConvStackExtractor::extract(const GrayImage& crop) const {
    check_crop(crop, options_.input_size);
    const int s = options_.input_size;
    const Eigen::Index hw = static_cast<Eigen::Index>(s) * s;
    // Activations: C x HW.
    Eigen::MatrixXf act(1, hw);
    for (Eigen::Index i = 0; i < hw; ++i) act(0, i) = crop.pixels[static_cast<std::size_t>(i)] - 0.5f;
    Eigen::MatrixXf cols;
    for (const auto& f : filters_) {
        const Eigen::Index c_in = act.rows();
        cols.setZero(9 * c_in, hw);
        for (int r = 0; r < s; ++r)
            for (int c = 0; c < s; ++c) {
                const Eigen::Index out = static_cast<Eigen::Index>(r) * s + c;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= s || cc < 0 || cc >= s) continue;
                        const Eigen::Index tap = (dr + 1) * 3 + (dc + 1);
                        cols.block(tap * c_in, out, c_in, 1) = act.col(static_cast<Eigen::Index>(rr) * s + cc);
                    }
            }
        act = (f * cols).cwiseMax(0.0f);
    }
    const Eigen::VectorXf pooled = act.rowwise().mean();
    return (head_ * pooled).cast<double>();
}

nlohmann::json ConvStackExtractor::config() const {
    return {{"kind", kind()},         {"input_size", options_.input_size}, {"channels", options_.channels},
            {"layers", options_.layers}, {"dim", options_.dim},               {"seed", options_.seed}};
}

// Fully determined by its seed.
ParamMap ConvStackExtractor::params() const { return {}; }

// ---- factory ----

std::unique_ptr<FeatureExtractor> make_extractor(const nlohmann::json& cfg, const ParamMap& params) {
    const std::string kind = cfg.at("kind").get<std::string>();
    auto param = [&](const std::string& name) -> const Eigen::MatrixXd* {
        auto it = params.find(name);
        return it == params.end() ? nullptr : &it->second;
    };
    if (kind == "random_fourier") {
        RandomFeatureExtractor::Options o;
        o.input_size = cfg.at("input_size").get<int>();
        o.dim = cfg.at("dim").get<std::size_t>();
        o.bandwidth = cfg.at("bandwidth").get<double>();
        o.seed = cfg.at("seed").get<std::uint64_t>();
        if (param("projection") && param("phase"))
            return std::make_unique<RandomFeatureExtractor>(o, *param("projection"), Eigen::VectorXd(*param("phase")));
        return std::make_unique<RandomFeatureExtractor>(o);
    }
    if (kind == "mlp") {
        MlpExtractor::Options o;
        o.input_size = cfg.at("input_size").get<int>();
        o.dim = cfg.at("dim").get<std::size_t>();
        o.init_scale = cfg.value("init_scale", 1.0);
        o.seed = cfg.at("seed").get<std::uint64_t>();
        if (param("weights") && param("bias"))
            return std::make_unique<MlpExtractor>(o, *param("weights"), Eigen::VectorXd(*param("bias")));
        return std::make_unique<MlpExtractor>(o);
    }
    if (kind == "conv_stack") {
        ConvStackExtractor::Options o;
        o.input_size = cfg.at("input_size").get<int>();
        o.channels = cfg.at("channels").get<int>();
        o.layers = cfg.at("layers").get<int>();
        o.dim = cfg.at("dim").get<std::size_t>();
        o.seed = cfg.at("seed").get<std::uint64_t>();
        return std::make_unique<ConvStackExtractor>(o);
    }
    fail(ErrorKind::Config, "unknown extractor kind '" + kind + "'");
}

Eigen::MatrixXd extract_dataset(const FeatureExtractor& extractor, const Dataset& dataset,
                                const std::vector<BBox>* windows) {
    if (windows && windows->size() != dataset.size()) fail(ErrorKind::Contract, "one window per record required");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(dataset.size()), static_cast<Eigen::Index>(extractor.dim()));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& rec = dataset.records[i];
        const BBox& w = windows ? (*windows)[i] : rec.annotation.bbox;
        out.row(static_cast<Eigen::Index>(i)) = extractor.extract_window(rec.image, w).transpose();
    }
    return out;
}

}  // namespace kalign
