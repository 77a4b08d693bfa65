#pragma once

#include <span>
#include <vector>

#include "kalign/clustering.hpp"
#include "kalign/inference.hpp"

namespace kalign {

// Sparse HMM transition support between pose classes. Row k allows k itself and every class
// within tau of mu_k; weights follow a self/neighbor two-parameter model normalized per row.
class TransitionStructure {
public:
    TransitionStructure() = default;
    TransitionStructure(std::vector<std::vector<std::size_t>> allowed, double self_weight, double neighbor_weight);

    std::size_t size() const { return allowed_.size(); }
    const std::vector<std::size_t>& allowed(std::size_t from) const { return allowed_[from]; }
    bool allows(std::size_t from, std::size_t to) const;
    // log w(from -> to); -inf when the transition is not allowed.
    double log_weight(std::size_t from, std::size_t to) const;
    std::size_t edge_count() const;

private:
    std::vector<std::vector<std::size_t>> allowed_;  // ascending
    std::vector<double> log_self_;
    std::vector<double> log_neighbor_;
};

TransitionStructure build_transitions(const PoseClassSet& classes, double tau_hmm, double self_weight = 4.0,
                                      double neighbor_weight = 1.0);

struct FrameSequence {
    std::vector<PosePosterior> frames;
    std::vector<int> frame_indices;  // optional; used in error messages
};

struct DecodedPath {
    std::vector<std::size_t> classes;
    double log_score = 0.0;
};

// Max-product decoding of sum_t log p_t(k_t) + sum_t log w(k_{t-1} -> k_t).
// Among equally scored paths the one whose reversed class sequence is lexicographically
// smallest is returned (lower class index at the last frame first, and so on backward).
DecodedPath viterbi(const FrameSequence& sequence, const TransitionStructure& transitions);

// Centered moving average per coordinate; frames near the ends average what is available.
std::vector<Shape> lowpass_smooth(std::span<const Shape> sequence, int window = 3);

}  // namespace kalign
