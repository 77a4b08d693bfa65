#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "kalign/clustering.hpp"
#include "kalign/pipeline.hpp"
#include "kalign/shape.hpp"
#include "kalign/synthetic.hpp"

namespace kalign::testing {

// Fresh per-process scratch directory; removed and recreated on every call.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("kalign-test-" + std::to_string(::getpid()) + "-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Shape random_shape(std::mt19937_64& rng, std::size_t n, double scale = 0.3) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Shape s(n);
    for (std::size_t i = 0; i < n; ++i) s.set_point(i, {u(rng), u(rng)});
    return s;
}

// Shapes with one landmark at (x, 0).
inline std::vector<Shape> line_shapes(const std::vector<double>& xs) {
    std::vector<Shape> out;
    for (double x : xs) out.emplace_back(std::vector<Point2>{{x, 0.0}});
    return out;
}

inline PoseClassSet line_classes(const std::vector<double>& xs, double sigma = 0.1) {
    PoseClassSet c;
    c.centers = line_shapes(xs);
    c.bandwidths.assign(xs.size(), sigma);
    return c;
}

inline SyntheticConfig small_config(std::size_t stills, std::size_t videos = 0, std::size_t frames = 0,
                                    std::uint64_t seed = 1) {
    SyntheticConfig cfg;
    cfg.n_stills = stills;
    cfg.n_videos = videos;
    cfg.frames_per_video = frames;
    cfg.seed = seed;
    return cfg;
}

// Small but complete pipeline: exemplar classes, bbox regressor and a short cascade.
inline PipelineConfig tiny_pipeline() {
    PipelineConfig cfg;
    cfg.train.epochs = 10;
    cfg.bbox_lambdas = {1.0};
    cfg.cascade_options.groups = 8;
    cfg.cascade_options.levels = 2;
    cfg.cascade_lambdas = {1.0};
    return cfg;
}

inline Model tiny_model(const Dataset& train, const PipelineConfig& cfg = tiny_pipeline()) {
    return train_model(train, nullptr, cfg);
}

}  // namespace kalign::testing
