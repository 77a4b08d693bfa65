#pragma once

#include <cstdint>
#include <vector>

#include "kalign/dataset.hpp"

namespace kalign {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct SyntheticConfig {
    std::size_t n_landmarks = 21;
    std::size_t n_stills = 600;
    std::size_t n_videos = 20;
    std::size_t frames_per_video = 100;
    int image_size = 64;

    Range yaw_deg{-60.0, 60.0};
    // Stills draw yaw from a normal with this spread about the range midpoint, truncated to the range,
    // so frontal faces dominate as in collected face data. Zero gives a uniform draw.
    double yaw_spread_deg = 25.0;
    Range roll_deg{-20.0, 20.0};
    Range mouth_open{0.0, 1.0};
    Range smile{-1.0, 1.0};
    Range brow{-1.0, 1.0};
    Range identity_width{0.88, 1.12};
    // Pixels per face unit; normalized away by the detection window.
    Range face_scale{13.0, 16.0};
    double center_jitter = 2.0;
    double pixel_noise = 0.12;
    double blob_sigma = 1.6;
    // Scales per-image variation of background, skin tone, illumination ramp and feature contrast.
    double appearance_jitter = 1.0;
    // Distractor blobs placed uniformly over the image.
    std::size_t clutter_blobs = 4;

    double occlusion_prob = 0.0;
    Range occlusion_extent{0.45, 0.7};

    std::uint64_t seed = 1;
};

struct FaceParams {
    double yaw_deg = 0.0;
    double roll_deg = 0.0;
    double mouth_open = 0.0;
    double smile = 0.0;
    double brow = 0.0;
    double identity_width = 1.0;
};

// Frontal 3-D point layout in face units (x right, y down, z toward the camera).
struct FaceTemplate {
    struct Point3 {
        double x, y, z;
    };
    std::vector<Point3> points;
    FlipPermutation flip;
    std::size_t left_eye = 0;
    std::size_t right_eye = 1;
    std::size_t nose = 2;
    std::size_t upper_lip = SIZE_MAX;
    std::size_t lower_lip = SIZE_MAX;
    std::size_t mouth_left = 3;
    std::size_t mouth_right = 4;
    std::vector<std::size_t> brows;
    std::vector<std::size_t> jaw;
};

inline constexpr std::size_t kMinTemplateLandmarks = 5;

FaceTemplate face_template(std::size_t n_landmarks);

// 2-D landmark positions in face units after expression, identity, yaw and roll.
std::vector<Point2> deform_face(const FaceTemplate& tmpl, const FaceParams& params);

DatasetSchema synthetic_schema(std::size_t n_landmarks);

// Deterministic in the config (including seed). Stills come first, then videos in order.
Dataset generate_synthetic(const SyntheticConfig& config);

}  // namespace kalign
