#include "kalign/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "kalign/error.hpp"

namespace kalign {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
// Half-extent of the square detection window, in face units.
constexpr double kWindowHalf = 1.3;

double uniform(std::mt19937_64& rng, Range r) {
    if (r.hi <= r.lo) return r.lo;
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

}  // namespace

FaceTemplate face_template(std::size_t n_landmarks) {
    if (n_landmarks < kMinTemplateLandmarks)
        fail(ErrorKind::Config, "synthetic faces need at least " + std::to_string(kMinTemplateLandmarks) +
                                    " landmarks, got " + std::to_string(n_landmarks));
    FaceTemplate t;
    t.points = {
        {-0.40, -0.25, 0.35},  // left eye
        {0.40, -0.25, 0.35},   // right eye
        {0.00, 0.10, 0.75},    // nose tip
        {-0.28, 0.45, 0.40},   // mouth left
        {0.28, 0.45, 0.40},    // mouth right
    };
    std::vector<std::size_t> perm = {1, 0, 2, 4, 3};

    std::size_t extra = n_landmarks - kMinTemplateLandmarks;
    if (extra > 0) {
        t.upper_lip = t.points.size();
        t.points.push_back({0.0, 0.38, 0.50});
        perm.push_back(t.upper_lip);
        --extra;
    }
    if (extra > 0) {
        t.lower_lip = t.points.size();
        t.points.push_back({0.0, 0.55, 0.45});
        perm.push_back(t.lower_lip);
        --extra;
    }
    if (extra >= 8) {
        const std::size_t b = t.points.size();
        t.points.push_back({-0.62, -0.50, 0.22});
        t.points.push_back({-0.20, -0.52, 0.40});
        t.points.push_back({0.20, -0.52, 0.40});
        t.points.push_back({0.62, -0.50, 0.22});
        for (std::size_t i = 0; i < 4; ++i) {
            t.brows.push_back(b + i);
            perm.push_back(b + 3 - i);
        }
        extra -= 4;
    }
    // Remaining points subdivide the jaw contour from the left ear through the chin.
    const std::size_t j0 = t.points.size();
    for (std::size_t i = 0; i < extra; ++i) {
        const double u = extra == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(extra - 1);
        const double phi = u * 100.0 * kDeg;
        t.points.push_back({0.95 * std::sin(phi), 0.10 + 0.85 * std::cos(phi), 0.5 * std::cos(phi) - 0.1});
        t.jaw.push_back(j0 + i);
        perm.push_back(j0 + extra - 1 - i);
    }
    t.flip = FlipPermutation(std::move(perm));
    return t;
}

std::vector<Point2> deform_face(const FaceTemplate& tmpl, const FaceParams& p) {
    auto pts = tmpl.points;
    // Expression.
    auto shift = [&](std::size_t i, double dx, double dy) {
        if (i < pts.size()) {
            pts[i].x += dx;
            pts[i].y += dy;
        }
    };
    shift(tmpl.lower_lip, 0.0, 0.15 * p.mouth_open);
    shift(tmpl.upper_lip, 0.0, -0.02 * p.mouth_open);
    shift(tmpl.mouth_left, -0.06 * p.smile, 0.03 * p.mouth_open - 0.06 * p.smile);
    shift(tmpl.mouth_right, 0.06 * p.smile, 0.03 * p.mouth_open - 0.06 * p.smile);
    for (auto b : tmpl.brows) shift(b, 0.0, -0.08 * p.brow);
    for (auto j : tmpl.jaw) {
        const double c = std::max(0.0, pts[j].y - 0.1) / 0.95;
        shift(j, 0.0, 0.10 * p.mouth_open * c * c);
    }
    const double cy = std::cos(p.yaw_deg * kDeg), sy = std::sin(p.yaw_deg * kDeg);
    const double cr = std::cos(p.roll_deg * kDeg), sr = std::sin(p.roll_deg * kDeg);
    std::vector<Point2> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double x = pts[i].x * p.identity_width;
        const double xr = x * cy + pts[i].z * sy;
        const double yr = pts[i].y;
        out[i] = {xr * cr - yr * sr, xr * sr + yr * cr};
    }
    return out;
}

DatasetSchema synthetic_schema(std::size_t n_landmarks) {
    const auto t = face_template(n_landmarks);
    DatasetSchema s;
    s.n_points = n_landmarks;
    s.flip = t.flip;
    s.nose_index = t.nose;
    s.left_eye_index = t.left_eye;
    s.right_eye_index = t.right_eye;
    return s;
}

namespace {

struct Placement {
    double cx, cy, scale;
};

DatasetRecord render_record(const SyntheticConfig& cfg, const FaceTemplate& tmpl, const FaceParams& params,
                            const Placement& place, std::mt19937_64& rng) {
    const int size = cfg.image_size;
    const auto face = deform_face(tmpl, params);
    DatasetRecord rec;
    rec.annotation.points.resize(face.size());
    for (std::size_t i = 0; i < face.size(); ++i)
        rec.annotation.points[i] = {place.cx + place.scale * face[i].x, place.cy + place.scale * face[i].y};
    const double half = kWindowHalf * place.scale;
    rec.annotation.bbox = {place.cx - half, place.cy - half, 2.0 * half, 2.0 * half};

    const double yaw = params.yaw_deg * kDeg;
    const double roll = params.roll_deg * kDeg;
    const double cr = std::cos(roll), sr = std::sin(roll);
    const double rx = 1.05 * place.scale * params.identity_width;
    const double ry = 1.25 * place.scale;
    const double blob = cfg.blob_sigma * place.scale / 15.0;
    const double inv2s2 = 1.0 / (2.0 * blob * blob);
    const double reach = 3.5 * blob;

    // Nuisance appearance: background level, skin tone, a linear illumination ramp and per-feature contrast.
    const double j = cfg.appearance_jitter;
    const double background = 0.08 + j * uniform(rng, {-0.06, 0.12});
    const double skin = 0.25 + j * uniform(rng, {-0.1, 0.1});
    const double ramp_angle = uniform(rng, {0.0, 2.0 * std::numbers::pi});
    const double ramp = j * uniform(rng, {0.0, 0.15}) / (0.5 * size);
    const double ramp_x = ramp * std::cos(ramp_angle), ramp_y = ramp * std::sin(ramp_angle);

    std::vector<double> canvas(static_cast<std::size_t>(size) * size, 0.0);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double dx = c + 0.5 - place.cx;
            const double dy = r + 0.5 - (place.cy + 0.1 * place.scale);
            const double u = dx * cr + dy * sr;
            const double v = -dx * sr + dy * cr;
            const double e = (u / rx) * (u / rx) + (v / ry) * (v / ry);
            double& px = canvas[static_cast<std::size_t>(r) * size + c];
            px = background + ramp_x * (c + 0.5 - 0.5 * size) + ramp_y * (r + 0.5 - 0.5 * size);
            if (e <= 1.0) px += skin + 0.15 * std::sin(yaw) * (u / rx);
        }
    }
    auto add_blob = [&](Point2 p, double amp) {
        const int c0 = std::max(0, static_cast<int>(std::floor(p.x - reach)));
        const int c1 = std::min(size - 1, static_cast<int>(std::ceil(p.x + reach)));
        const int r0 = std::max(0, static_cast<int>(std::floor(p.y - reach)));
        const int r1 = std::min(size - 1, static_cast<int>(std::ceil(p.y + reach)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                const double dx = c + 0.5 - p.x, dy = r + 0.5 - p.y;
                canvas[static_cast<std::size_t>(r) * size + c] += amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
    };
    for (std::size_t i = 0; i < face.size(); ++i) {
        const double amp = (i < kMinTemplateLandmarks ? 0.6 : 0.4) * (1.0 + j * uniform(rng, {-0.35, 0.35}));
        add_blob(rec.annotation.points[i], amp);
    }
    for (std::size_t i = 0; i < cfg.clutter_blobs; ++i)
        add_blob({uniform(rng, {0.0, double(size)}), uniform(rng, {0.0, double(size)})}, uniform(rng, {0.2, 0.5}));
    if (cfg.occlusion_prob > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.occlusion_prob) {
        const auto& b = rec.annotation.bbox;
        const double ow = uniform(rng, cfg.occlusion_extent) * b.w;
        const double oh = uniform(rng, cfg.occlusion_extent) * b.h;
        const double ocx = b.x + uniform(rng, {0.0, b.w});
        const double ocy = b.y + uniform(rng, {0.0, b.h});
        const double level = uniform(rng, {0.1, 0.6});
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c)
                if (std::abs(c + 0.5 - ocx) <= 0.5 * ow && std::abs(r + 0.5 - ocy) <= 0.5 * oh)
                    canvas[static_cast<std::size_t>(r) * size + c] = level;
        rec.meta["occluded"] = 1.0;
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    rec.image = GrayImage(size, size);
    for (std::size_t i = 0; i < canvas.size(); ++i) {
        const double v = std::clamp(canvas[i] + cfg.pixel_noise * noise(rng), 0.0, 1.0);
        rec.image.pixels[i] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    }
    rec.meta["yaw"] = params.yaw_deg;
    rec.meta["roll"] = params.roll_deg;
    rec.meta["mouth_open"] = params.mouth_open;
    rec.meta["smile"] = params.smile;
    rec.meta["brow"] = params.brow;
    rec.meta["identity_width"] = params.identity_width;
    return rec;
}

double sample_yaw(const SyntheticConfig& cfg, std::mt19937_64& rng) {
    const Range r = cfg.yaw_deg;
    if (r.hi <= r.lo || cfg.yaw_spread_deg <= 0.0) return uniform(rng, r);
    std::normal_distribution<double> g(0.5 * (r.lo + r.hi), cfg.yaw_spread_deg);
    for (;;) {
        const double y = g(rng);
        if (y >= r.lo && y <= r.hi) return y;
    }
}

FaceParams sample_params(const SyntheticConfig& cfg, std::mt19937_64& rng) {
    FaceParams p;
    p.yaw_deg = sample_yaw(cfg, rng);
    p.roll_deg = uniform(rng, cfg.roll_deg);
    p.mouth_open = uniform(rng, cfg.mouth_open);
    p.smile = uniform(rng, cfg.smile);
    p.brow = uniform(rng, cfg.brow);
    p.identity_width = uniform(rng, cfg.identity_width);
    return p;
}

Placement sample_placement(const SyntheticConfig& cfg, std::mt19937_64& rng) {
    const double mid = 0.5 * cfg.image_size;
    return {mid + uniform(rng, {-cfg.center_jitter, cfg.center_jitter}),
            mid + uniform(rng, {-cfg.center_jitter, cfg.center_jitter}), uniform(rng, cfg.face_scale)};
}

// Smooth periodic trajectory inside a range.
struct Trajectory {
    double center, amplitude, period, phase;

    static Trajectory sample(Range r, std::mt19937_64& rng) {
        const double width = r.hi - r.lo;
        Trajectory t{};
        t.amplitude = width > 0.0 ? uniform(rng, {0.1 * width, 0.4 * width}) : 0.0;
        t.center = uniform(rng, {r.lo + t.amplitude, r.hi - t.amplitude});
        if (width <= 0.0) t.center = r.lo;
        t.period = uniform(rng, {40.0, 160.0});
        t.phase = uniform(rng, {0.0, 2.0 * std::numbers::pi});
        return t;
    }
    double at(std::size_t frame) const {
        return center + amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(frame) / period + phase);
    }
};

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
    const auto tmpl = face_template(cfg.n_landmarks);
    if (cfg.image_size < 16) fail(ErrorKind::Config, "image_size must be at least 16");
    if (cfg.n_stills + cfg.n_videos * cfg.frames_per_video < 1) fail(ErrorKind::Config, "n_examples must be at least 1");
    if (cfg.face_scale.lo <= 0.0) fail(ErrorKind::Config, "face_scale must be positive");

    Dataset ds;
    ds.schema = synthetic_schema(cfg.n_landmarks);
    ds.records.reserve(cfg.n_stills + cfg.n_videos * cfg.frames_per_video);

    for (std::size_t i = 0; i < cfg.n_stills; ++i) {
        std::seed_seq seq{cfg.seed, std::uint64_t{1}, static_cast<std::uint64_t>(i)};
        std::mt19937_64 rng(seq);
        const FaceParams params = sample_params(cfg, rng);
        const Placement place = sample_placement(cfg, rng);
        auto rec = render_record(cfg, tmpl, params, place, rng);
        rec.annotation.image_ref = "still_" + std::to_string(i);
        ds.records.push_back(std::move(rec));
    }
    for (std::size_t v = 0; v < cfg.n_videos; ++v) {
        std::seed_seq seq{cfg.seed, std::uint64_t{2}, static_cast<std::uint64_t>(v)};
        std::mt19937_64 rng(seq);
        const auto yaw = Trajectory::sample(cfg.yaw_deg, rng);
        const auto roll = Trajectory::sample(cfg.roll_deg, rng);
        const auto mouth = Trajectory::sample(cfg.mouth_open, rng);
        const auto smile = Trajectory::sample(cfg.smile, rng);
        const auto brow = Trajectory::sample(cfg.brow, rng);
        const double width = uniform(rng, cfg.identity_width);
        const Placement place = sample_placement(cfg, rng);
        const std::string vid = "video_" + std::to_string(v);
        for (std::size_t f = 0; f < cfg.frames_per_video; ++f) {
            FaceParams p{yaw.at(f), roll.at(f), mouth.at(f), smile.at(f), brow.at(f), width};
            auto rec = render_record(cfg, tmpl, p, place, rng);
            rec.annotation.image_ref = vid + "/" + std::to_string(f);
            rec.video_id = vid;
            rec.frame_index = static_cast<int>(f);
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

}  // namespace kalign
