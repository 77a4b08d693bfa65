#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "kalign/classifier.hpp"
#include "kalign/clustering.hpp"
#include "kalign/dataset.hpp"
#include "kalign/features.hpp"
#include "kalign/inference.hpp"
#include "kalign/refine.hpp"
#include "kalign/temporal.hpp"

namespace kalign {

struct TemporalOptions {
    double tau_hmm = 0.1;  // classes within this distance may follow each other
    double self_weight = 4.0;
    double neighbor_weight = 1.0;
};

// Everything needed to go from an image window to landmarks.
struct Model {
    DatasetSchema schema;
    PoseClassSet classes;
    double tau = 0.0;
    // Default tolerance for click evidence, canonical units.
    double tau_evidence = 0.05;
    double temperature = 1.0;
    ClassifierHead head;
    std::shared_ptr<const FeatureExtractor> extractor;
    BBoxRegressor bbox;
    CascadedRegressor cascade;
    TemporalOptions temporal;
    std::string train_fingerprint;

    std::size_t n_classes() const { return classes.size(); }
    std::size_t n_points() const { return schema.n_points; }
    std::size_t feature_dim() const { return head.feature_dim(); }
    void validate() const;
};

PosePosterior window_posterior(const Model& model, const GrayImage& image, const BBox& window);

struct Prediction {
    std::size_t map_class = 0;
    Shape canonical;
    std::vector<Point2> pixels;
};

// Class mean of the MAP class, refined by the cascade when the model has one and `refine` is set.
Prediction predict_from_posterior(const Model& model, const PosePosterior& posterior, const GrayImage& image,
                                  const BBox& window, bool refine = true);

// File layout: a magic line, one line of JSON describing the model and its arrays, then the
// arrays as little-endian float64 in the order listed.
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace kalign
