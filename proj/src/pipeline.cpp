#include "kalign/pipeline.hpp"

#include <cmath>
#include <numeric>

#include "kalign/argmax.hpp"
#include "kalign/error.hpp"
#include "kalign/eval.hpp"

namespace kalign {

namespace {

double center_error(const BBox& a, const BBox& truth) {
    const Point2 p = a.center(), q = truth.center();
    return std::hypot(p.x - q.x, p.y - q.y) / truth.diagonal();
}

std::size_t pick(const std::vector<double>& errors) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < errors.size(); ++i)
        if (errors[i] < errors[best]) best = i;
    return best;
}

}  // namespace

Model train_model(const Dataset& train, const Dataset* val, const PipelineConfig& config, PipelineReport* report) {
    train.validate();
    if (train.size() == 0) fail(ErrorKind::Contract, "training set is empty");
    if (val && val->schema.n_points != train.schema.n_points)
        fail(ErrorKind::Schema, "validation and training landmark counts differ");
    if (config.bbox_regressor && config.bbox_lambdas.empty()) fail(ErrorKind::Config, "bbox_lambdas is empty");
    if (config.cascade && config.cascade_lambdas.empty()) fail(ErrorKind::Config, "cascade_lambdas is empty");

    const Dataset data = config.flip ? flip_augment(train) : train;
    const auto shapes = normalized_shapes(data);
    const std::size_t k = config.k == 0 ? data.size() : config.k;
    if (k > data.size())
        fail(ErrorKind::Config, "K=" + std::to_string(k) + " exceeds the " + std::to_string(data.size()) +
                                    " training examples");

    PipelineReport local;
    PipelineReport& rep = report ? *report : local;
    rep = {};
    rep.n_train = data.size();

    Model model;
    model.schema = data.schema;
    model.classes = build_pose_classes(shapes, k, config.cluster_seed);

    double tau = config.tau;
    const bool select_tau = !config.tau_grid.empty() && val && val->size() > 0;
    if (select_tau) {
        // Heads on fixed features are cheap enough to train once per candidate.
        std::unique_ptr<FeatureExtractor> probe = make_extractor(config.extractor);
        if (probe->trainable()) fail(ErrorKind::Config, "tau_grid needs a fixed feature extractor");
        const Eigen::MatrixXd train_features = extract_dataset(*probe, data);
        const Eigen::MatrixXd val_features = extract_dataset(*probe, *val);
        const auto val_shapes = normalized_shapes(*val);
        for (double t : config.tau_grid) {
            const MembershipSets ms = membership_sets(model.classes, shapes, t);
            const ClassifierHead head =
                train_head(train_features, make_targets(model.classes, shapes, ms), k, config.train);
            const Eigen::MatrixXd s = scores_batch(head, val_features);
            double err = 0.0;
            for (Eigen::Index i = 0; i < s.rows(); ++i)
                err += canonical_error(model.classes.centers[argmax(s.row(i))], val_shapes[static_cast<std::size_t>(i)]);
            rep.tau_errors.push_back(err / static_cast<double>(s.rows()));
        }
        tau = config.tau_grid[pick(rep.tau_errors)];
    }
    rep.tau = tau;
    model.tau = tau;
    model.tau_evidence = config.tau_evidence.value_or(0.5 * tau);
    model.temporal = config.temporal;
    model.temporal.tau_hmm = config.tau_hmm.value_or(tau);

    const MembershipSets memberships = membership_sets(model.classes, shapes, tau);
    rep.membership_histogram = membership_histogram(memberships);

    std::unique_ptr<FeatureExtractor> extractor = make_extractor(config.extractor);
    model.head = kalign::train(data, *extractor, model.classes, memberships, config.train, &rep.train_log);
    model.extractor = std::move(extractor);

    if (config.bbox_regressor) {
        const auto windows = perturb_windows(data, config.perturb);
        std::vector<BBoxRegressor> candidates;
        for (double lambda : config.bbox_lambdas) {
            candidates.push_back(train_bbox_regressor(data, *model.extractor, windows, lambda));
            if (!val || val->size() == 0) break;
            PerturbOptions held = config.perturb;
            held.seed += 1;
            const auto val_windows = perturb_windows(*val, held);
            double err = 0.0;
            for (std::size_t i = 0; i < val->size(); ++i) {
                const auto& rec = val->records[i];
                err += center_error(refine_bbox(candidates.back(), *model.extractor, rec.image, val_windows[i]),
                                    rec.annotation.bbox);
            }
            rep.bbox_lambda_errors.push_back(err / static_cast<double>(val->size()));
        }
        const std::size_t best = rep.bbox_lambda_errors.empty() ? 0 : pick(rep.bbox_lambda_errors);
        model.bbox = candidates[best];
        rep.bbox_lambda = model.bbox.lambda;
    }

    if (config.cascade) {
        std::vector<CascadedRegressor> candidates;
        std::vector<CascadeTrainLog> logs;
        std::vector<PosePosterior> val_posteriors;
        if (val)
            for (const auto& rec : val->records)
                val_posteriors.push_back(window_posterior(model, rec.image, rec.annotation.bbox));
        for (double lambda : config.cascade_lambdas) {
            CascadeOptions opts = config.cascade_options;
            opts.lambda = lambda;
            logs.emplace_back();
            candidates.push_back(train_pose_regressors(data, model.classes, memberships, opts, &logs.back()));
            if (!val || val->size() == 0) break;
            model.cascade = candidates.back();
            double err = 0.0;
            for (std::size_t i = 0; i < val->size(); ++i) {
                const auto& rec = val->records[i];
                err += pt_pt_error(
                    predict_from_posterior(model, val_posteriors[i], rec.image, rec.annotation.bbox).pixels,
                    rec.annotation);
            }
            rep.cascade_lambda_errors.push_back(err / static_cast<double>(val->size()));
        }
        const std::size_t best = rep.cascade_lambda_errors.empty() ? 0 : pick(rep.cascade_lambda_errors);
        model.cascade = std::move(candidates[best]);
        rep.cascade_log = std::move(logs[best]);
        rep.cascade_lambda = config.cascade_lambdas[best];
    }

    model.train_fingerprint = fingerprint(config.train) + " k=" + std::to_string(k) + " tau=" +
                              std::to_string(tau) + " flip=" + (config.flip ? "1" : "0") +
                              " cluster_seed=" + std::to_string(config.cluster_seed) + " extractor=" +
                              config.extractor.dump();
    model.validate();
    return model;
}

}  // namespace kalign
