#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kalign/image.hpp"
#include "kalign/shape.hpp"

namespace kalign {

struct DatasetSchema {
    std::size_t n_points = 0;
    FlipPermutation flip;
    // Landmark used for single-click conditioning.
    std::size_t nose_index = 0;
    // Landmarks defining the yaw/roll proxies.
    std::size_t left_eye_index = 0;
    std::size_t right_eye_index = 1;
};

struct DatasetRecord {
    GrayImage image;
    RawAnnotation annotation;
    std::optional<std::string> video_id;
    std::optional<int> frame_index;
    // Generator parameters (yaw, roll, ...) when the record is synthetic.
    std::map<std::string, double> meta;
};

struct Dataset {
    DatasetSchema schema;
    std::vector<DatasetRecord> records;

    std::size_t size() const { return records.size(); }
    void validate() const;
};

std::vector<Shape> normalized_shapes(const Dataset& dataset);

// Distinct video ids in order of first appearance.
std::vector<std::string> video_ids(const Dataset& dataset);

// Frames of one video ordered by frame_index.
std::vector<std::size_t> video_frames(const Dataset& dataset, const std::string& video_id);

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices);

struct SplitResult {
    Dataset train;
    Dataset val;
};

// Whole videos are moved to validation; training videos keep every frame_stride-th frame;
// records without a video id always stay in training.
SplitResult split_and_subsample(const Dataset& dataset, double val_fraction, int frame_stride, std::uint64_t seed);

DatasetRecord flip_record(const DatasetRecord& record, const FlipPermutation& perm);

// Appends a mirrored copy of every record.
Dataset flip_augment(const Dataset& dataset);

nlohmann::json schema_to_json(const DatasetSchema& schema);
DatasetSchema schema_from_json(const nlohmann::json& j);

// On-disk layout: <dir>/schema.json, <dir>/manifest.jsonl (one record per line),
// <dir>/images/*.pgm, <dir>/pts/*.pts.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace kalign
