#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "kalign/classifier.hpp"
#include "kalign/dataset.hpp"
#include "kalign/model.hpp"
#include "kalign/refine.hpp"

namespace kalign {

struct PipelineConfig {
    // Number of pose classes; 0 selects exemplar classes (K = number of training examples).
    std::size_t k = 0;
    double tau = 0.1;
    // When non-empty and validation data is given, tau is picked from this grid by validation landmark error.
    std::vector<double> tau_grid;
    // Click tolerance; defaults to tau / 2.
    std::optional<double> tau_evidence;
    // Transition radius of the decoding HMM; defaults to tau.
    std::optional<double> tau_hmm;
    bool flip = true;
    std::uint64_t cluster_seed = 3;
    nlohmann::json extractor = {{"kind", "random_fourier"}, {"input_size", 24}, {"dim", 384},
                                {"bandwidth", 0.6}, {"seed", 17}};
    TrainConfig train;

    bool bbox_regressor = true;
    std::vector<double> bbox_lambdas{0.1, 1.0, 10.0};
    PerturbOptions perturb;

    bool cascade = true;
    CascadeOptions cascade_options;
    // Candidate ridge parameters; chosen on validation data when it is provided, else the first is used.
    std::vector<double> cascade_lambdas{0.1, 1.0, 10.0};

    TemporalOptions temporal;
};

struct PipelineReport {
    std::size_t n_train = 0;
    double tau = 0.0;
    std::vector<double> tau_errors;
    TrainLog train_log;
    std::map<std::size_t, std::size_t> membership_histogram;
    double bbox_lambda = 0.0;
    double cascade_lambda = 0.0;
    CascadeTrainLog cascade_log;
    // Validation error for each candidate lambda, in candidate order.
    std::vector<double> bbox_lambda_errors;
    std::vector<double> cascade_lambda_errors;
};

// Cluster, build memberships, train the head and the optional refinement stages.
Model train_model(const Dataset& train, const Dataset* val, const PipelineConfig& config,
                  PipelineReport* report = nullptr);

}  // namespace kalign
