#include "kalign/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "kalign/error.hpp"

namespace kalign {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

TransitionStructure::TransitionStructure(std::vector<std::vector<std::size_t>> allowed, double self_weight,
                                         double neighbor_weight)
    : allowed_(std::move(allowed)) {
    if (!(self_weight > 0.0) || !(neighbor_weight > 0.0)) fail(ErrorKind::Config, "transition weights must be positive");
    log_self_.resize(allowed_.size());
    log_neighbor_.resize(allowed_.size());
    for (std::size_t k = 0; k < allowed_.size(); ++k) {
        auto& row = allowed_[k];
        std::sort(row.begin(), row.end());
        row.erase(std::unique(row.begin(), row.end()), row.end());
        if (!std::binary_search(row.begin(), row.end(), k)) row.insert(std::lower_bound(row.begin(), row.end(), k), k);
        const double z = self_weight + neighbor_weight * static_cast<double>(row.size() - 1);
        log_self_[k] = std::log(self_weight / z);
        log_neighbor_[k] = std::log(neighbor_weight / z);
    }
}

bool TransitionStructure::allows(std::size_t from, std::size_t to) const {
    const auto& row = allowed_.at(from);
    return std::binary_search(row.begin(), row.end(), to);
}

double TransitionStructure::log_weight(std::size_t from, std::size_t to) const {
    if (!allows(from, to)) return kNegInf;
    return from == to ? log_self_[from] : log_neighbor_[from];
}

std::size_t TransitionStructure::edge_count() const {
    std::size_t n = 0;
    for (const auto& r : allowed_) n += r.size();
    return n;
}

TransitionStructure build_transitions(const PoseClassSet& classes, double tau_hmm, double self_weight,
                                      double neighbor_weight) {
    if (!(tau_hmm >= 0.0)) fail(ErrorKind::Config, "tau_hmm must be non-negative");
    const Eigen::MatrixXd c = classes.center_matrix();
    const auto k = static_cast<Eigen::Index>(classes.size());
    std::vector<std::vector<std::size_t>> allowed(classes.size());
    const double t2 = tau_hmm * tau_hmm;
    for (Eigen::Index a = 0; a < k; ++a) {
        allowed[static_cast<std::size_t>(a)].push_back(static_cast<std::size_t>(a));
        for (Eigen::Index b = a + 1; b < k; ++b) {
            if ((c.row(a) - c.row(b)).squaredNorm() <= t2) {
                allowed[static_cast<std::size_t>(a)].push_back(static_cast<std::size_t>(b));
                allowed[static_cast<std::size_t>(b)].push_back(static_cast<std::size_t>(a));
            }
        }
    }
    return TransitionStructure(std::move(allowed), self_weight, neighbor_weight);
}

DecodedPath viterbi(const FrameSequence& seq, const TransitionStructure& trans) {
    if (seq.frames.empty()) fail(ErrorKind::Contract, "cannot decode an empty sequence");
    const std::size_t k = trans.size();
    const std::size_t t_len = seq.frames.size();
    for (const auto& f : seq.frames)
        if (f.size() != k) fail(ErrorKind::Schema, "frame posterior size does not match the transition structure");
    auto frame_name = [&](std::size_t t) {
        return seq.frame_indices.size() == t_len ? std::to_string(seq.frame_indices[t]) : std::to_string(t);
    };
    auto log_p = [&](std::size_t t, std::size_t c) {
        const double v = seq.frames[t][c];
        return v > 0.0 ? std::log(v) : kNegInf;
    };

    std::vector<double> delta(k), next(k);
    std::vector<std::vector<std::uint32_t>> back(t_len, std::vector<std::uint32_t>(k, 0));
    bool any = false;
    for (std::size_t c = 0; c < k; ++c) {
        delta[c] = log_p(0, c);
        any = any || delta[c] > kNegInf;
    }
    if (!any) fail(ErrorKind::Infeasible, "no feasible path: dead end at frame " + frame_name(0));

    for (std::size_t t = 1; t < t_len; ++t) {
        any = false;
        for (std::size_t c = 0; c < k; ++c) {
            double best = kNegInf;
            std::size_t arg = c;
            // Support is symmetric, so the predecessors of c are exactly allowed(c).
            for (std::size_t prev : trans.allowed(c)) {
                if (delta[prev] == kNegInf) continue;
                const double v = delta[prev] + trans.log_weight(prev, c);
                if (v > best) {
                    best = v;
                    arg = prev;
                }
            }
            const double lp = log_p(t, c);
            next[c] = (best == kNegInf || lp == kNegInf) ? kNegInf : best + lp;
            back[t][c] = static_cast<std::uint32_t>(arg);
            any = any || next[c] > kNegInf;
        }
        if (!any) fail(ErrorKind::Infeasible, "no feasible path: dead end at frame " + frame_name(t));
        delta.swap(next);
    }

    std::size_t last = 0;
    for (std::size_t c = 1; c < k; ++c)
        if (delta[c] > delta[last]) last = c;
    DecodedPath out;
    out.log_score = delta[last];
    out.classes.resize(t_len);
    out.classes[t_len - 1] = last;
    for (std::size_t t = t_len - 1; t > 0; --t) out.classes[t - 1] = back[t][out.classes[t]];
    return out;
}

std::vector<Shape> lowpass_smooth(std::span<const Shape> sequence, int window) {
    if (sequence.empty()) fail(ErrorKind::Contract, "cannot smooth an empty sequence");
    if (window < 1 || window % 2 == 0) fail(ErrorKind::Config, "smoothing window must be odd and positive");
    const auto n = static_cast<long>(sequence.size());
    const long half = window / 2;
    std::vector<Shape> out;
    out.reserve(sequence.size());
    for (long t = 0; t < n; ++t) {
        const long lo = std::max(0L, t - half), hi = std::min(n - 1, t + half);
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(sequence[0].stacked().size());
        for (long u = lo; u <= hi; ++u) {
            if (sequence[static_cast<std::size_t>(u)].n_points() != sequence[0].n_points())
                fail(ErrorKind::Schema, "shapes in a sequence must share landmark count");
            acc += sequence[static_cast<std::size_t>(u)].stacked();
        }
        out.emplace_back(Eigen::VectorXd(acc / static_cast<double>(hi - lo + 1)));
    }
    return out;
}

}  // namespace kalign
