#include "kalign/refine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>

#include "kalign/error.hpp"

namespace kalign {

Eigen::MatrixXd RidgeModel::apply_batch(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
    Eigen::MatrixXd out = x * weights;
    out.rowwise() += bias;
    return out;
}

RidgeModel fit_ridge(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::MatrixXd>& y,
                     double lambda) {
    if (x.rows() != y.rows()) fail(ErrorKind::Contract, "ridge: feature and target row counts differ");
    if (x.rows() == 0) fail(ErrorKind::Contract, "ridge: no samples");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorKind::Config, "ridge: lambda must be finite and >= 0");

    const Eigen::RowVectorXd x_mean = x.colwise().mean();
    const Eigen::RowVectorXd y_mean = y.colwise().mean();
    const Eigen::MatrixXd xc = x.rowwise() - x_mean;
    const Eigen::MatrixXd yc = y.rowwise() - y_mean;

    RidgeModel model;
    if (lambda > 0.0 && xc.rows() < xc.cols()) {
        // Dual form: W = Xc^T (Xc Xc^T + lambda I)^-1 Yc.
        Eigen::MatrixXd gram = xc * xc.transpose();
        gram.diagonal().array() += lambda;
        model.weights = xc.transpose() * gram.ldlt().solve(yc);
    } else {
        Eigen::MatrixXd normal = xc.transpose() * xc;
        normal.diagonal().array() += lambda;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
        const Eigen::VectorXd d = ldlt.vectorD();
        const double scale = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
        if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * scale)
            fail(ErrorKind::Contract, "ridge: normal matrix is singular; use a nonzero lambda");
        model.weights = ldlt.solve(xc.transpose() * yc);
    }
    model.bias = y_mean - x_mean * model.weights;
    return model;
}

BBoxDelta bbox_delta(const BBox& from, const BBox& to) {
    const Point2 a = from.center();
    const Point2 b = to.center();
    return {(b.x - a.x) / from.w, (b.y - a.y) / from.h, std::log(to.w / from.w), std::log(to.h / from.h)};
}

BBox apply_delta(const BBox& box, const BBoxDelta& delta, double clamp) {
    const Point2 c = box.center();
    const double cx = c.x + delta.dx * box.w;
    const double cy = c.y + delta.dy * box.h;
    const double w = box.w * std::exp(std::clamp(delta.dw, -clamp, clamp));
    const double h = box.h * std::exp(std::clamp(delta.dh, -clamp, clamp));
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
}

BBoxDelta BBoxRegressor::predict(const Eigen::Ref<const Eigen::VectorXd>& feature) const {
    if (model.empty()) return {};
    const Eigen::RowVectorXd d = model.apply(feature.transpose());
    return {d[0], d[1], d[2], d[3]};
}

std::vector<BBox> perturb_windows(const Dataset& dataset, const PerturbOptions& options) {
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<BBox> out;
    out.reserve(dataset.size());
    for (const auto& record : dataset.records) {
        const BBox& gt = record.annotation.bbox;
        const double sx = unit(rng) * options.shift;
        const double sy = unit(rng) * options.shift;
        const double s = std::exp(unit(rng) * options.log_scale);
        const Point2 c = gt.center();
        const double w = gt.w * s;
        const double h = gt.h * s;
        out.push_back({c.x + sx * gt.w - 0.5 * w, c.y + sy * gt.h - 0.5 * h, w, h});
    }
    return out;
}

BBoxRegressor train_bbox_regressor(const Dataset& dataset, const FeatureExtractor& extractor,
                                   const std::vector<BBox>& detections, double lambda) {
    if (detections.size() != dataset.size())
        fail(ErrorKind::Contract, "bbox regressor: one detection per record required");
    const Eigen::MatrixXd features = extract_dataset(extractor, dataset, &detections);
    Eigen::MatrixXd targets(static_cast<Eigen::Index>(dataset.size()), 4);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const BBoxDelta d = bbox_delta(detections[i], dataset.records[i].annotation.bbox);
        targets.row(static_cast<Eigen::Index>(i)) << d.dx, d.dy, d.dw, d.dh;
    }
    BBoxRegressor reg;
    reg.lambda = lambda;
    reg.model = fit_ridge(features, targets, lambda);
    if (!reg.model.weights.allFinite() || !reg.model.bias.allFinite())
        fail(ErrorKind::Divergence, "bbox regressor: non-finite weights");
    return reg;
}

BBox refine_bbox(const BBoxRegressor& regressor, const FeatureExtractor& extractor, const GrayImage& image,
                 const BBox& detection) {
    if (!detection.valid()) fail(ErrorKind::Contract, "refine_bbox: invalid detection window");
    if (regressor.model.empty()) return detection;
    return apply_delta(detection, regressor.predict(extractor.extract_window(image, detection)));
}

Eigen::VectorXd patch_features(const GrayImage& image, const BBox& bbox, const Shape& shape, const PatchSpec& spec) {
    const std::size_t n = shape.n_points();
    const int g = spec.grid;
    const auto per = static_cast<Eigen::Index>(g * g);
    Eigen::VectorXd out(static_cast<Eigen::Index>(spec.dim(n)));
    const double step = spec.spacing * bbox.diagonal();
    const double half = 0.5 * (g - 1);
    for (std::size_t j = 0; j < n; ++j) {
        const Point2 p = to_pixel(shape.point(j), bbox);
        auto patch = out.segment(static_cast<Eigen::Index>(j) * per, per);
        Eigen::Index idx = 0;
        for (int r = 0; r < g; ++r)
            for (int c = 0; c < g; ++c)
                patch[idx++] = sample_bilinear(image, p.x + (c - half) * step, p.y + (r - half) * step);
        patch.array() -= patch.mean();
    }
    return out;
}

std::vector<std::size_t> group_classes(const PoseClassSet& classes, std::size_t groups, std::uint64_t seed) {
    const std::size_t k = classes.size();
    if (groups == 0) fail(ErrorKind::Config, "cascade: at least one group required");
    if (groups >= k) {
        std::vector<std::size_t> id(k);
        std::iota(id.begin(), id.end(), 0);
        return id;
    }
    KMeansOptions opts;
    opts.seed = seed;
    return kmeans_rows(classes.center_matrix(), groups, opts).assignments;
}

std::vector<std::vector<std::size_t>> group_training_sets(const std::vector<std::size_t>& group_of_class,
                                                          std::size_t n_groups, const MembershipSets& memberships) {
    std::vector<std::vector<std::size_t>> sets(n_groups);
    for (std::size_t i = 0; i < memberships.n_examples(); ++i) {
        std::vector<std::size_t> gs;
        for (std::size_t k : memberships.sets[i]) gs.push_back(group_of_class.at(k));
        std::sort(gs.begin(), gs.end());
        gs.erase(std::unique(gs.begin(), gs.end()), gs.end());
        for (std::size_t g : gs) sets[g].push_back(i);
    }
    return sets;
}

namespace {

struct CascadeSample {
    std::size_t example;
    Eigen::VectorXd current;
};

double rms_point_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).norm() / std::sqrt(0.5 * static_cast<double>(a.size()));
}

}  // namespace

CascadedRegressor train_pose_regressors(const Dataset& dataset, const PoseClassSet& classes,
                                        const MembershipSets& memberships, const CascadeOptions& options,
                                        CascadeTrainLog* log) {
    if (options.levels == 0) fail(ErrorKind::Config, "cascade: at least one level required");
    if (options.groups == 0) fail(ErrorKind::Config, "cascade: at least one group required");
    if (options.max_inits == 0) fail(ErrorKind::Config, "cascade: max_inits must be positive");
    if (memberships.n_examples() != dataset.size() || memberships.n_classes() != classes.size())
        fail(ErrorKind::Schema, "cascade: memberships do not match dataset and classes");

    const std::size_t n_groups = std::min(options.groups, classes.size());
    std::vector<std::size_t> group_of_class;
    std::vector<std::vector<std::size_t>> sets;
    constexpr int kMaxReseeds = 8;
    for (int attempt = 0;; ++attempt) {
        group_of_class = group_classes(classes, n_groups, options.seed + static_cast<std::uint64_t>(attempt));
        sets = group_training_sets(group_of_class, n_groups, memberships);
        const bool all_nonempty = std::none_of(sets.begin(), sets.end(), [](const auto& s) { return s.empty(); });
        if (all_nonempty) break;
        if (attempt + 1 == kMaxReseeds)
            fail(ErrorKind::Contract, "cascade: a class group has no member examples after re-seeding");
    }

    const std::vector<Shape> truth = normalized_shapes(dataset);
    const auto dim = static_cast<Eigen::Index>(2 * classes.n_points());
    const auto fdim = static_cast<Eigen::Index>(options.patch.dim(classes.n_points()));

    CascadedRegressor cascade;
    cascade.patch = options.patch;
    cascade.levels = options.levels;
    cascade.group_of_class = group_of_class;
    cascade.groups.assign(n_groups, {});

    // Initializations: up to max_inits classes of M_i inside the group, sampled without replacement.
    std::vector<std::vector<CascadeSample>> samples(n_groups);
    std::mt19937_64 rng(options.seed);
    for (std::size_t g = 0; g < n_groups; ++g) {
        for (std::size_t i : sets[g]) {
            std::vector<std::size_t> inits;
            for (std::size_t k : memberships.sets[i])
                if (group_of_class[k] == g) inits.push_back(k);
            if (inits.size() > options.max_inits) {
                std::shuffle(inits.begin(), inits.end(), rng);
                inits.resize(options.max_inits);
                std::sort(inits.begin(), inits.end());
            }
            for (std::size_t k : inits) samples[g].push_back({i, classes.centers[k].stacked()});
        }
    }

    auto measure = [&](double& mean_error, double& sum_squares) {
        double err = 0.0, ss = 0.0;
        std::size_t count = 0;
        for (const auto& group : samples)
            for (const auto& s : group) {
                const Eigen::VectorXd& y = truth[s.example].stacked();
                err += rms_point_error(s.current, y);
                ss += (s.current - y).squaredNorm();
                ++count;
            }
        mean_error = count ? err / static_cast<double>(count) : 0.0;
        sum_squares = ss;
    };

    if (log) {
        *log = {};
        log->group_examples = sets;
        double e, ss;
        measure(e, ss);
        log->level_mean_error.push_back(e);
        log->level_sum_squares.push_back(ss);
    }

    for (std::size_t level = 0; level < options.levels; ++level) {
        for (std::size_t g = 0; g < n_groups; ++g) {
            auto& group = samples[g];
            const auto n = static_cast<Eigen::Index>(group.size());
            Eigen::MatrixXd x(n, fdim);
            Eigen::MatrixXd residual(n, dim);
            for (Eigen::Index r = 0; r < n; ++r) {
                const auto& s = group[static_cast<std::size_t>(r)];
                const auto& rec = dataset.records[s.example];
                x.row(r) = patch_features(rec.image, rec.annotation.bbox, Shape(s.current), options.patch).transpose();
                residual.row(r) = (truth[s.example].stacked() - s.current).transpose();
            }
            RidgeModel model = fit_ridge(x, residual, options.lambda);
            const Eigen::MatrixXd update = model.apply_batch(x);
            for (Eigen::Index r = 0; r < n; ++r) group[static_cast<std::size_t>(r)].current += update.row(r).transpose();
            cascade.groups[g].push_back(std::move(model));
        }
        if (log) {
            double e, ss;
            measure(e, ss);
            log->level_mean_error.push_back(e);
            log->level_sum_squares.push_back(ss);
        }
    }
    return cascade;
}

Shape apply_regressor(const CascadedRegressor& cascade, const PoseClassSet& classes, const GrayImage& image,
                      std::size_t cls, const BBox& bbox) {
    if (cls >= classes.size()) fail(ErrorKind::Contract, "apply_regressor: class index out of range");
    Shape current = classes.centers[cls];
    if (cascade.groups.empty()) return current;
    if (cls >= cascade.group_of_class.size()) fail(ErrorKind::Schema, "apply_regressor: cascade does not cover class");
    for (const RidgeModel& model : cascade.groups[cascade.group_of_class[cls]]) {
        const Eigen::VectorXd f = patch_features(image, bbox, current, cascade.patch);
        current.stacked() += model.apply(f.transpose()).transpose();
    }
    return current;
}

}  // namespace kalign
