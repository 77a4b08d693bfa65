#include "kalign/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include <Eigen/Core>

#include "kalign/argmax.hpp"
#include "kalign/error.hpp"

namespace kalign {

using nlohmann::json;

double pt_pt_error(std::span<const Point2> predicted, const RawAnnotation& truth) {
    if (predicted.size() != truth.points.size())
        fail(ErrorKind::Schema, "pt_pt_error: prediction has " + std::to_string(predicted.size()) +
                                    " landmarks, ground truth has " + std::to_string(truth.points.size()));
    if (predicted.empty()) fail(ErrorKind::Schema, "pt_pt_error: no landmarks");
    const double diag = truth.bbox.diagonal();
    if (!(diag > 0.0)) fail(ErrorKind::InvalidAnnotation, "pt_pt_error: ground-truth bbox has zero diagonal");
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double dx = predicted[i].x - truth.points[i].x;
        const double dy = predicted[i].y - truth.points[i].y;
        sum += dx * dx + dy * dy;
    }
    return std::sqrt(sum / static_cast<double>(predicted.size())) / diag;
}

double canonical_error(const Shape& predicted, const Shape& truth) {
    return shape_distance(predicted, truth) / std::sqrt(static_cast<double>(truth.n_points()));
}

CedCurve ced_stats(std::span<const double> errors, double threshold, std::size_t grid_points) {
    if (errors.empty()) fail(ErrorKind::Contract, "ced_stats: no errors");
    if (!(threshold > 0.0) || grid_points < 2) fail(ErrorKind::Config, "ced_stats: invalid threshold or grid");
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());

    CedCurve out;
    out.threshold = threshold;
    out.grid.resize(grid_points);
    out.fractions.resize(grid_points);
    double total = 0.0;
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double t = threshold * static_cast<double>(i) / static_cast<double>(grid_points - 1);
        const auto below = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
        out.grid[i] = t;
        out.fractions[i] = static_cast<double>(below) / n;
        total += out.fractions[i];
    }
    out.auc = total / static_cast<double>(grid_points);
    const auto failures = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), threshold);
    out.failure_rate = 100.0 * static_cast<double>(failures) / n;
    return out;
}

std::vector<std::size_t> hard_subset_indices(const Dataset& dataset, const Shape& mean, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorKind::Config, "hard_subset: fraction must be in (0, 1]");
    const auto shapes = normalized_shapes(dataset);
    std::vector<double> dist(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) dist[i] = shape_distance(shapes[i], mean);
    std::vector<std::size_t> order(shapes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
    const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(shapes.size()) - 1e-9));
    order.resize(std::min(count, order.size()));
    return order;
}

Dataset hard_subset(const Dataset& dataset, const Shape& mean, double fraction) {
    return subset(dataset, hard_subset_indices(dataset, mean, fraction));
}

// ---- loss vs number of classes ----

namespace {

struct SplitScore {
    double landmark = 0.0;
    double multilabel = 0.0;
    double exact = 0.0;
};

SplitScore score_split(const ClassifierHead& head, const Eigen::MatrixXd& features, const PoseClassSet& classes,
                       std::span<const Shape> shapes, const MembershipSets& memberships) {
    const Eigen::MatrixXd s = scores_batch(head, features);
    SplitScore out;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const std::size_t k = argmax(s.row(i));
        const auto idx = static_cast<std::size_t>(i);
        out.landmark += canonical_error(classes.centers[k], shapes[idx]);
        out.multilabel += memberships.contains(idx, k) ? 0.0 : 1.0;
        out.exact += nearest_class(classes, shapes[idx]) == k ? 0.0 : 1.0;
    }
    const auto n = static_cast<double>(s.rows());
    out.landmark /= n;
    out.multilabel /= n;
    out.exact /= n;
    return out;
}

}  // namespace

std::vector<LossScalingRow> loss_scaling_experiment(const Dataset& train, const Eigen::MatrixXd& train_features,
                                                    const Dataset& val, const Eigen::MatrixXd& val_features,
                                                    const LossScalingConfig& config) {
    if (static_cast<std::size_t>(train_features.rows()) != train.size() ||
        static_cast<std::size_t>(val_features.rows()) != val.size())
        fail(ErrorKind::Contract, "loss_scaling_experiment: feature rows do not match datasets");
    const auto train_shapes = normalized_shapes(train);
    const auto val_shapes = normalized_shapes(val);
    for (std::size_t k : config.k_grid)
        if (k < 1 || k > train.size())
            fail(ErrorKind::Config, "loss_scaling_experiment: K=" + std::to_string(k) + " outside [1, " +
                                        std::to_string(train.size()) + "]");

    std::vector<LossScalingRow> rows;
    for (std::size_t k : config.k_grid) {
        const PoseClassSet classes = build_pose_classes(train_shapes, k, config.cluster_seed);
        const MembershipSets train_members = membership_sets(classes, train_shapes, config.tau);
        const MembershipSets val_members = membership_sets(classes, val_shapes, config.tau);
        const TrainTargets targets = make_targets(classes, train_shapes, train_members);
        for (LossKind loss : config.losses) {
            TrainConfig tc = config.train;
            tc.loss = loss;
            TrainLog log;
            const ClassifierHead head = train_head(train_features, targets, k, tc, &log);
            const SplitScore tr = score_split(head, train_features, classes, train_shapes, train_members);
            const SplitScore va = score_split(head, val_features, classes, val_shapes, val_members);
            rows.push_back({k, loss, tr.landmark, va.landmark, tr.multilabel, va.multilabel, tr.exact, va.exact,
                            log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()});
        }
    }
    return rows;
}

// ---- head scaling bench ----

json machine_fingerprint() {
    std::string cpu = "unknown";
    std::ifstream info("/proc/cpuinfo");
    for (std::string line; std::getline(info, line);) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) cpu = line.substr(colon + 2);
            break;
        }
    }
    return {{"cpu", cpu},
            {"hardware_threads", std::thread::hardware_concurrency()},
            {"compiler", __VERSION__},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
#ifdef NDEBUG
            {"assertions", false},
#else
            {"assertions", true},
#endif
    };
}

BenchResult bench_head_scaling(const BenchConfig& config) {
    if (config.k_grid.empty()) fail(ErrorKind::Config, "bench: empty K grid");
    if (!std::is_sorted(config.k_grid.begin(), config.k_grid.end()))
        fail(ErrorKind::Config, "bench: K grid must be ascending");
    if (config.repetitions < 1 || config.warmup < 0) fail(ErrorKind::Config, "bench: invalid repetition counts");
    const std::size_t d = config.feature_dim;
    const double max_head_flops = 2.0 * static_cast<double>(config.k_grid.back()) * static_cast<double>(d);
    const ConvStackExtractor extractor(
        ConvStackExtractor::for_flops(config.extractor_ratio * max_head_flops, 32, 4, d, config.seed));

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    GrayImage crop(extractor.input_size(), extractor.input_size());
    for (auto& p : crop.pixels) p = unit(rng);

    std::vector<ClassifierHead> heads;
    for (std::size_t k : config.k_grid) {
        ClassifierHead h(k, d);
        h.weights = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
        heads.push_back(std::move(h));
    }

    using Clock = std::chrono::steady_clock;
    volatile double sink = 0.0;
    auto run_total = [&](const ClassifierHead& h) {
        const auto t0 = Clock::now();
        const Eigen::VectorXd f = extractor.extract(crop);
        const Eigen::VectorXd s = scores(h, f);
        sink = sink + s[0];
        return std::chrono::duration<double>(Clock::now() - t0).count();
    };
    const Eigen::VectorXd feature = extractor.extract(crop);
    auto run_head = [&](const ClassifierHead& h) {
        const auto t0 = Clock::now();
        const Eigen::VectorXd s = scores(h, feature);
        sink = sink + s[0];
        return std::chrono::duration<double>(Clock::now() - t0).count();
    };

    for (int w = 0; w < config.warmup; ++w)
        for (const auto& h : heads) {
            run_total(h);
            run_head(h);
        }
    // Interleave the K values inside each repetition so slow drift affects all of them alike.
    std::vector<std::vector<double>> total(heads.size()), head(heads.size());
    for (int r = 0; r < config.repetitions; ++r)
        for (std::size_t i = 0; i < heads.size(); ++i) {
            total[i].push_back(run_total(heads[i]));
            head[i].push_back(run_head(heads[i]));
        }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };

    BenchResult out;
    out.extractor_flops = extractor.flops_per_example();
    out.extractor_config = extractor.config();
    out.machine = machine_fingerprint();
    for (std::size_t i = 0; i < heads.size(); ++i) {
        BenchRow row;
        row.k = config.k_grid[i];
        row.parameters = heads[i].parameter_count();
        row.bytes = row.parameters * sizeof(double);
        row.head_flops = 2.0 * static_cast<double>(row.k) * static_cast<double>(d);
        row.median_total_seconds = median(total[i]);
        row.median_head_seconds = median(head[i]);
        row.head_share = row.median_total_seconds > 0.0 ? row.median_head_seconds / row.median_total_seconds : 0.0;
        out.rows.push_back(row);
    }
    return out;
}

// ---- interactive annotation ----

std::string to_string(ClickPolicy policy) {
    switch (policy) {
        case ClickPolicy::None: return "none";
        case ClickPolicy::FixedPoint: return "fixed_point";
        case ClickPolicy::BestPoint: return "best_point";
    }
    return "unknown";
}

std::vector<InteractiveRow> interactive_eval(const Dataset& dataset, const Model& model,
                                             const InteractiveConfig& config) {
    if (dataset.schema.n_points != model.n_points())
        fail(ErrorKind::Schema, "interactive_eval: dataset and model landmark counts differ");
    const std::size_t fixed = config.landmark.value_or(model.schema.nose_index);
    if (fixed >= model.n_points()) fail(ErrorKind::Config, "interactive_eval: landmark index out of range");
    const double tol = config.tolerance.value_or(model.tau_evidence);

    std::vector<InteractiveRow> rows;
    for (ClickPolicy policy : config.policies) rows.push_back({policy, 0.0, 0.0, 0, {}});

    for (const auto& rec : dataset.records) {
        const BBox& box = rec.annotation.bbox;
        const Shape truth = normalize_shape(rec.annotation);
        const PosePosterior base = window_posterior(model, rec.image, box);
        auto error_of = [&](const PosePosterior& p) {
            return pt_pt_error(predict_from_posterior(model, p, rec.image, box, config.refine).pixels, rec.annotation);
        };
        const double plain = error_of(base);
        // Error after clicking landmark j at its true position; nullopt when no class is consistent.
        auto clicked = [&](std::size_t j) -> std::optional<double> {
            const Evidence e{j, truth.point(j), tol};
            const auto support = consistent_classes(model.classes, e);
            if (support.empty()) return std::nullopt;
            return error_of(restrict_to(base, support));
        };

        for (auto& row : rows) {
            double err = plain;
            switch (row.policy) {
                case ClickPolicy::None: break;
                case ClickPolicy::FixedPoint: {
                    const auto e = clicked(fixed);
                    if (e) err = *e;
                    else ++row.fallbacks;
                    break;
                }
                case ClickPolicy::BestPoint: {
                    // A click that admits no class leaves the prediction unconditioned.
                    bool any = false;
                    for (std::size_t j = 0; j < model.n_points(); ++j) {
                        const auto e = clicked(j);
                        err = std::min(err, e.value_or(plain));
                        any = any || e.has_value();
                    }
                    if (!any) ++row.fallbacks;
                    break;
                }
            }
            row.errors.push_back(err);
        }
    }
    for (auto& row : rows) {
        if (row.errors.empty()) continue;
        row.failure_rate = ced_stats(row.errors).failure_rate;
        row.mean_error = std::accumulate(row.errors.begin(), row.errors.end(), 0.0) / static_cast<double>(row.errors.size());
    }
    return rows;
}

// ---- predictor comparison ----

std::vector<PredictorRow> compare_predictors(const Dataset& dataset, const Model& model, const Shape& mean_shape) {
    if (dataset.size() == 0) fail(ErrorKind::Contract, "compare_predictors: empty dataset");
    std::vector<PredictorRow> rows{{"mean_shape", {}, 0.0, {}}, {"classification", {}, 0.0, {}}};
    const bool cascade = !model.cascade.groups.empty();
    if (cascade) rows.push_back({"classification+regressor", {}, 0.0, {}});
    const auto mean_pixels_of = [&](const BBox& box) { return denormalize_shape(mean_shape, box); };
    for (const auto& rec : dataset.records) {
        const BBox& box = rec.annotation.bbox;
        rows[0].errors.push_back(pt_pt_error(mean_pixels_of(box), rec.annotation));
        const PosePosterior p = window_posterior(model, rec.image, box);
        rows[1].errors.push_back(
            pt_pt_error(predict_from_posterior(model, p, rec.image, box, false).pixels, rec.annotation));
        if (cascade)
            rows[2].errors.push_back(
                pt_pt_error(predict_from_posterior(model, p, rec.image, box, true).pixels, rec.annotation));
    }
    for (auto& row : rows) {
        row.mean_error = std::accumulate(row.errors.begin(), row.errors.end(), 0.0) / static_cast<double>(row.errors.size());
        row.ced = ced_stats(row.errors);
    }
    return rows;
}

EmbeddingComparison compare_embeddings(const ClassifierHead& head, const PoseClassSet& classes,
                                       const Eigen::MatrixXd& train_features, std::span<const Shape> train_shapes,
                                       const Eigen::MatrixXd& val_features, std::span<const Shape> val_shapes) {
    if (static_cast<std::size_t>(val_features.rows()) != val_shapes.size() ||
        static_cast<std::size_t>(train_features.rows()) != train_shapes.size())
        fail(ErrorKind::Contract, "compare_embeddings: feature rows do not match shapes");
    if (val_shapes.empty()) fail(ErrorKind::Contract, "compare_embeddings: empty validation set");
    const Eigen::MatrixXd s = scores_batch(head, val_features);
    const auto by_weights = nn_classify_batch(head.weights, val_features);
    const auto by_features = nn_classify_batch(train_features, val_features);
    EmbeddingComparison out;
    for (std::size_t i = 0; i < val_shapes.size(); ++i) {
        out.head_error += canonical_error(classes.centers[argmax(s.row(static_cast<Eigen::Index>(i)))], val_shapes[i]);
        out.nn_weights_error += canonical_error(classes.centers[by_weights[i]], val_shapes[i]);
        out.nn_features_error += canonical_error(train_shapes[by_features[i]], val_shapes[i]);
    }
    const auto n = static_cast<double>(val_shapes.size());
    out.head_error /= n;
    out.nn_weights_error /= n;
    out.nn_features_error /= n;
    return out;
}

// ---- result tables ----

namespace {

std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, r.ptr};
}

std::string num(std::size_t v) { return std::to_string(v); }

}  // namespace

Table to_table(const std::vector<LossScalingRow>& rows) {
    Table t{{"k", "loss", "train_landmark_error", "val_landmark_error", "train_multilabel_error",
             "val_multilabel_error", "train_exact_error", "val_exact_error", "final_train_loss"},
            {}};
    for (const auto& r : rows)
        t.rows.push_back({num(r.k), to_string(r.loss), num(r.train_landmark_error), num(r.val_landmark_error),
                          num(r.train_multilabel_error), num(r.val_multilabel_error), num(r.train_exact_error),
                          num(r.val_exact_error), num(r.final_train_loss)});
    return t;
}

Table to_table(const BenchResult& result) {
    Table t{{"k", "parameters", "bytes", "head_flops", "extractor_flops", "median_total_seconds",
             "median_head_seconds", "head_share"},
            {}};
    for (const auto& r : result.rows)
        t.rows.push_back({num(r.k), num(r.parameters), num(r.bytes), num(r.head_flops), num(result.extractor_flops),
                          num(r.median_total_seconds), num(r.median_head_seconds), num(r.head_share)});
    return t;
}

Table to_table(const std::vector<InteractiveRow>& rows) {
    Table t{{"policy", "failure_rate_percent", "mean_error", "fallbacks", "frames"}, {}};
    for (const auto& r : rows)
        t.rows.push_back({to_string(r.policy), num(r.failure_rate), num(r.mean_error), num(r.fallbacks),
                          num(r.errors.size())});
    return t;
}

Table to_table(const std::vector<PredictorRow>& rows) {
    Table t{{"predictor", "mean_error", "auc", "failure_rate_percent", "frames"}, {}};
    for (const auto& r : rows)
        t.rows.push_back({r.predictor, num(r.mean_error), num(r.ced.auc), num(r.ced.failure_rate),
                          num(r.errors.size())});
    return t;
}

void write_csv(std::ostream& os, const Table& table) {
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
        os << '\n';
    };
    line(table.columns);
    for (const auto& row : table.rows) line(row);
}

json to_json(const Table& table) {
    json out = json::array();
    for (const auto& row : table.rows) {
        json obj = json::object();
        for (std::size_t i = 0; i < table.columns.size() && i < row.size(); ++i) {
            const std::string& cell = row[i];
            double v = 0.0;
            const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (r.ec == std::errc() && r.ptr == cell.data() + cell.size()) obj[table.columns[i]] = v;
            else obj[table.columns[i]] = cell;
        }
        out.push_back(std::move(obj));
    }
    return out;
}

}  // namespace kalign
