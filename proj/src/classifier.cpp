#include "kalign/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "kalign/argmax.hpp"
#include "kalign/error.hpp"

namespace kalign {

ClassifierHead::ClassifierHead(std::size_t k, std::size_t d)
    : weights(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d))),
      bias(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k))) {}

Eigen::VectorXd scores(const ClassifierHead& head, const Eigen::Ref<const Eigen::VectorXd>& feature) {
    if (feature.size() != head.weights.cols())
        fail(ErrorKind::Schema, "feature dimension " + std::to_string(feature.size()) + " does not match head dimension " +
                                    std::to_string(head.weights.cols()));
    return head.weights * feature + head.bias;
}

Eigen::MatrixXd scores_batch(const ClassifierHead& head, const Eigen::Ref<const Eigen::MatrixXd>& features) {
    if (features.cols() != head.weights.cols()) fail(ErrorKind::Schema, "feature dimension does not match head");
    Eigen::MatrixXd s = features * head.weights.transpose();
    s.rowwise() += head.bias.transpose();
    return s;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& s) {
    const double m = s.maxCoeff();
    return m + std::log((s.array() - m).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& s) {
    Eigen::VectorXd e = (s.array() - s.maxCoeff()).exp();
    return e / e.sum();
}

namespace {

void check_members(std::span<const std::size_t> members, Eigen::Index k) {
    if (members.empty()) fail(ErrorKind::Contract, "membership set must not be empty");
    for (auto m : members)
        if (static_cast<Eigen::Index>(m) >= k) fail(ErrorKind::Contract, "member class out of range");
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

LossValue softmax_loss(const Eigen::Ref<const Eigen::VectorXd>& s, std::size_t c) {
    if (static_cast<Eigen::Index>(c) >= s.size()) fail(ErrorKind::Contract, "class index out of range");
    const double lse = log_sum_exp(s);
    LossValue out;
    out.loss = lse - s[static_cast<Eigen::Index>(c)];
    out.grad = (s.array() - lse).exp().matrix();
    out.grad[static_cast<Eigen::Index>(c)] -= 1.0;
    return out;
}

LossValue soft_target_loss(const Eigen::Ref<const Eigen::VectorXd>& s, std::span<const std::size_t> members) {
    check_members(members, s.size());
    const double lse = log_sum_exp(s);
    const double q = 1.0 / static_cast<double>(members.size());
    LossValue out;
    out.grad = (s.array() - lse).exp().matrix();
    double mean_member_score = 0.0;
    for (auto m : members) {
        mean_member_score += s[static_cast<Eigen::Index>(m)];
        out.grad[static_cast<Eigen::Index>(m)] -= q;
    }
    out.loss = lse - q * mean_member_score;
    return out;
}

LossValue multi_label_loss(const Eigen::Ref<const Eigen::VectorXd>& s, std::span<const std::size_t> members) {
    check_members(members, s.size());
    LossValue out;
    out.grad.resize(s.size());
    double loss = 0.0;
    for (Eigen::Index k = 0; k < s.size(); ++k) {
        loss += softplus(s[k]);
        out.grad[k] = sigmoid(s[k]);
    }
    // softplus(-s) = softplus(s) - s on the positives.
    for (auto m : members) {
        loss -= s[static_cast<Eigen::Index>(m)];
        out.grad[static_cast<Eigen::Index>(m)] -= 1.0;
    }
    out.loss = loss;
    return out;
}

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::Softmax: return "softmax";
        case LossKind::SoftTarget: return "soft_target";
        case LossKind::MultiLabel: return "multi_label";
    }
    return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "softmax") return LossKind::Softmax;
    if (name == "soft_target" || name == "soft-target") return LossKind::SoftTarget;
    if (name == "multi_label" || name == "multi-label") return LossKind::MultiLabel;
    fail(ErrorKind::Config, "unknown loss '" + name + "'");
}

std::string fingerprint(const TrainConfig& c) {
    std::ostringstream os;
    os << to_string(c.loss) << ";lr=" << c.learning_rate << ";decay=" << c.lr_decay << ";mom=" << c.momentum
       << ";epochs=" << c.epochs << ";batch=" << c.batch_size << ";wd=" << c.weight_decay
       << ";bias=" << c.train_bias << ";xlr=" << c.extractor_lr_scale << ";seed=" << c.seed;
    return os.str();
}

TrainTargets make_targets(const PoseClassSet& classes, std::span<const Shape> shapes, const MembershipSets& memberships) {
    if (memberships.n_examples() != shapes.size() || memberships.n_classes() != classes.size())
        fail(ErrorKind::Contract, "memberships were computed against a different class set or example list");
    TrainTargets t;
    t.hard_class = assign_nearest(classes, shapes);
    t.memberships = &memberships;
    return t;
}

namespace {

void validate(const TrainConfig& c) {
    if (!(c.learning_rate > 0.0) || c.epochs < 1 || c.batch_size < 1 || c.weight_decay < 0.0 || c.momentum < 0.0 ||
        c.momentum >= 1.0 || !(c.lr_decay > 0.0))
        fail(ErrorKind::Config, "invalid training configuration: " + fingerprint(c));
}

// Loss and score-gradient rows for one batch; returns the summed loss and the count of
// examples whose argmax falls outside their membership set.
struct BatchEval {
    double loss = 0.0;
    std::size_t ml_errors = 0;
};

BatchEval evaluate_batch(const Eigen::MatrixXd& s, std::span<const std::size_t> rows, const TrainTargets& t,
                         LossKind kind, Eigen::MatrixXd& grad) {
    BatchEval ev;
    grad.resize(s.rows(), s.cols());
    for (Eigen::Index b = 0; b < s.rows(); ++b) {
        const std::size_t i = rows[static_cast<std::size_t>(b)];
        const Eigen::VectorXd row = s.row(b).transpose();
        const auto& members = t.memberships->sets[i];
        LossValue lv;
        switch (kind) {
            case LossKind::Softmax: lv = softmax_loss(row, t.hard_class[i]); break;
            case LossKind::SoftTarget: lv = soft_target_loss(row, members); break;
            case LossKind::MultiLabel: lv = multi_label_loss(row, members); break;
        }
        ev.loss += lv.loss;
        grad.row(b) = lv.grad.transpose();
        if (!std::binary_search(members.begin(), members.end(), argmax(row))) ++ev.ml_errors;
    }
    return ev;
}

template <typename StepFn>
void run_epochs(std::size_t m, const TrainConfig& config, TrainLog* log, StepFn&& step) {
    validate(config);
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    double lr = config.learning_rate;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t errors = 0;
        for (std::size_t start = 0, batch = 0; start < m; start += bs, ++batch) {
            const std::span<const std::size_t> rows(order.data() + start, std::min(bs, m - start));
            const BatchEval ev = step(rows, lr);
            if (!std::isfinite(ev.loss))
                fail(ErrorKind::Divergence,
                     "training diverged at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch));
            total += ev.loss;
            errors += ev.ml_errors;
        }
        if (log) {
            log->epoch_loss.push_back(total / static_cast<double>(m));
            log->epoch_multilabel_error.push_back(static_cast<double>(errors) / static_cast<double>(m));
        }
        lr *= config.lr_decay;
    }
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t b = 0; b < rows.size(); ++b) out.row(static_cast<Eigen::Index>(b)) = x.row(static_cast<Eigen::Index>(rows[b]));
    return out;
}

void check_targets(const TrainTargets& t, std::size_t m, std::size_t k) {
    if (!t.memberships || t.memberships->n_examples() != m || t.hard_class.size() != m)
        fail(ErrorKind::Contract, "training targets do not cover every example");
    if (t.memberships->n_classes() != k) fail(ErrorKind::Contract, "memberships disagree with the class count");
}

}  // namespace

ClassifierHead train_head(const Eigen::MatrixXd& features, const TrainTargets& targets, std::size_t n_classes,
                          const TrainConfig& config, TrainLog* log) {
    const auto m = static_cast<std::size_t>(features.rows());
    check_targets(targets, m, n_classes);
    ClassifierHead head(n_classes, static_cast<std::size_t>(features.cols()));
    Eigen::MatrixXd vel_w = Eigen::MatrixXd::Zero(head.weights.rows(), head.weights.cols());
    Eigen::VectorXd vel_b = Eigen::VectorXd::Zero(head.bias.size());
    Eigen::MatrixXd grad;

    run_epochs(m, config, log, [&](std::span<const std::size_t> rows, double lr) {
        const Eigen::MatrixXd xb = gather_rows(features, rows);
        const Eigen::MatrixXd s = scores_batch(head, xb);
        const BatchEval ev = evaluate_batch(s, rows, targets, config.loss, grad);
        const double inv_b = 1.0 / static_cast<double>(rows.size());
        vel_w = config.momentum * vel_w - lr * (inv_b * grad.transpose() * xb + config.weight_decay * head.weights);
        head.weights += vel_w;
        if (config.train_bias) {
            vel_b = config.momentum * vel_b - lr * inv_b * grad.colwise().sum().transpose();
            head.bias += vel_b;
        }
        return ev;
    });
    return head;
}

ClassifierHead train_joint(const Eigen::MatrixXd& inputs, MlpExtractor& extractor, const TrainTargets& targets,
                           std::size_t n_classes, const TrainConfig& config, TrainLog* log) {
    const auto m = static_cast<std::size_t>(inputs.rows());
    check_targets(targets, m, n_classes);
    if (inputs.cols() != extractor.weights().cols()) fail(ErrorKind::Schema, "input width does not match extractor");
    ClassifierHead head(n_classes, extractor.dim());
    Eigen::MatrixXd vel_w = Eigen::MatrixXd::Zero(head.weights.rows(), head.weights.cols());
    Eigen::VectorXd vel_b = Eigen::VectorXd::Zero(head.bias.size());
    Eigen::MatrixXd vel_xw = Eigen::MatrixXd::Zero(extractor.weights().rows(), extractor.weights().cols());
    Eigen::VectorXd vel_xb = Eigen::VectorXd::Zero(extractor.bias().size());
    Eigen::MatrixXd grad;

    run_epochs(m, config, log, [&](std::span<const std::size_t> rows, double lr) {
        const Eigen::MatrixXd xb = gather_rows(inputs, rows);
        const Eigen::MatrixXd fb = extractor.forward(xb);
        const Eigen::MatrixXd s = scores_batch(head, fb);
        const BatchEval ev = evaluate_batch(s, rows, targets, config.loss, grad);
        const double inv_b = 1.0 / static_cast<double>(rows.size());

        const Eigen::MatrixXd grad_f = inv_b * grad * head.weights;
        Eigen::MatrixXd gxw = Eigen::MatrixXd::Zero(vel_xw.rows(), vel_xw.cols());
        Eigen::VectorXd gxb = Eigen::VectorXd::Zero(vel_xb.size());
        extractor.backward(xb, fb, grad_f, gxw, gxb);

        vel_w = config.momentum * vel_w - lr * (inv_b * grad.transpose() * fb + config.weight_decay * head.weights);
        head.weights += vel_w;
        if (config.train_bias) {
            vel_b = config.momentum * vel_b - lr * inv_b * grad.colwise().sum().transpose();
            head.bias += vel_b;
        }
        const double xlr = lr * config.extractor_lr_scale;
        vel_xw = config.momentum * vel_xw - xlr * (gxw + config.weight_decay * extractor.weights());
        vel_xb = config.momentum * vel_xb - xlr * gxb;
        extractor.weights() += vel_xw;
        extractor.bias() += vel_xb;
        return ev;
    });
    return head;
}

ClassifierHead train(const Dataset& dataset, FeatureExtractor& extractor, const PoseClassSet& classes,
                     const MembershipSets& memberships, const TrainConfig& config, TrainLog* log) {
    const auto shapes = normalized_shapes(dataset);
    const TrainTargets targets = make_targets(classes, shapes, memberships);
    if (extractor.trainable()) {
        auto* mlp = dynamic_cast<MlpExtractor*>(&extractor);
        if (!mlp) fail(ErrorKind::Config, "trainable extractor kind '" + extractor.kind() + "' has no training path");
        const int s = extractor.input_size();
        Eigen::MatrixXd inputs(static_cast<Eigen::Index>(dataset.size()), static_cast<Eigen::Index>(s) * s);
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const auto& r = dataset.records[i];
            inputs.row(static_cast<Eigen::Index>(i)) =
                contrast_normalize(crop_window(r.image, r.annotation.bbox, s)).transpose();
        }
        return train_joint(inputs, *mlp, targets, classes.size(), config, log);
    }
    return train_head(extract_dataset(extractor, dataset), targets, classes.size(), config, log);
}

Eigen::VectorXd embed_class(const ClassifierHead& head, std::size_t cls) {
    if (cls >= head.n_classes())
        fail(ErrorKind::Contract, "class index " + std::to_string(cls) + " out of range for K = " +
                                      std::to_string(head.n_classes()));
    return head.weights.row(static_cast<Eigen::Index>(cls)).transpose();
}

Eigen::VectorXd embed_image(const FeatureExtractor& extractor, const GrayImage& image, const BBox& window) {
    return extractor.extract_window(image, window);
}

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) fail(ErrorKind::Contract, "cosine similarity of a zero vector is undefined");
    return a.dot(b) / (na * nb);
}

namespace {

Eigen::MatrixXd normalized_rows(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* what) {
    if (m.rows() == 0) fail(ErrorKind::Contract, std::string(what) + " is empty");
    const Eigen::VectorXd norms = m.rowwise().norm();
    if ((norms.array() == 0.0).any())
        fail(ErrorKind::Contract, std::string(what) + " contains a zero vector; cosine similarity is undefined");
    return norms.cwiseInverse().asDiagonal() * m;
}

}  // namespace

std::size_t nn_classify(const Eigen::Ref<const Eigen::MatrixXd>& bank, const Eigen::Ref<const Eigen::VectorXd>& query) {
    Eigen::MatrixXd q(1, query.size());
    q.row(0) = query.transpose();
    return nn_classify_batch(bank, q).front();
}

std::vector<std::size_t> nn_classify_batch(const Eigen::Ref<const Eigen::MatrixXd>& bank,
                                           const Eigen::Ref<const Eigen::MatrixXd>& queries) {
    if (bank.cols() != queries.cols()) fail(ErrorKind::Schema, "query and bank dimensions differ");
    const Eigen::MatrixXd b = normalized_rows(bank, "nearest-neighbor bank");
    const Eigen::MatrixXd q = normalized_rows(queries, "query set");
    const Eigen::MatrixXd sim = q * b.transpose();
    std::vector<std::size_t> out(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = argmax(sim.row(i));
    }
    return out;
}

}  // namespace kalign
