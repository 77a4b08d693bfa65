#include "kalign/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "kalign/error.hpp"
#include "kalign/pts.hpp"

namespace kalign {

using nlohmann::json;

void Dataset::validate() const {
    if (schema.flip.size() != schema.n_points)
        fail(ErrorKind::Schema, "flip permutation length does not match n_points");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.annotation.points.size() != schema.n_points)
            fail(ErrorKind::Schema, "record " + std::to_string(i) + " has " +
                                        std::to_string(r.annotation.points.size()) + " landmarks, schema says " +
                                        std::to_string(schema.n_points));
        if (!r.annotation.bbox.valid())
            fail(ErrorKind::InvalidAnnotation, "record " + std::to_string(i) + " has a degenerate bbox");
        if (r.image.empty()) fail(ErrorKind::Schema, "record " + std::to_string(i) + " has no image");
    }
}

std::vector<Shape> normalized_shapes(const Dataset& dataset) {
    std::vector<Shape> out;
    out.reserve(dataset.size());
    for (const auto& r : dataset.records) out.push_back(normalize_shape(r.annotation));
    return out;
}

std::vector<std::string> video_ids(const Dataset& dataset) {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& r : dataset.records)
        if (r.video_id && seen.insert(*r.video_id).second) ids.push_back(*r.video_id);
    return ids;
}

std::vector<std::size_t> video_frames(const Dataset& dataset, const std::string& video_id) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (dataset.records[i].video_id == video_id) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return dataset.records[a].frame_index.value_or(0) < dataset.records[b].frame_index.value_or(0);
    });
    return idx;
}

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.schema = dataset.schema;
    out.records.reserve(indices.size());
    for (auto i : indices) out.records.push_back(dataset.records.at(i));
    return out;
}

SplitResult split_and_subsample(const Dataset& dataset, double val_fraction, int frame_stride, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail(ErrorKind::Split, "val_fraction must lie in (0, 1)");
    if (frame_stride < 1) fail(ErrorKind::Split, "frame_stride must be at least 1");
    auto videos = video_ids(dataset);
    if (videos.size() < 2) fail(ErrorKind::Split, "need at least 2 videos to carve a validation split");

    std::mt19937_64 rng(seed);
    std::shuffle(videos.begin(), videos.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(videos.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, videos.size() - 1);
    const std::set<std::string> val_set(videos.begin(), videos.begin() + static_cast<std::ptrdiff_t>(n_val));

    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::set<std::size_t> kept_video_frames;
    for (const auto& vid : video_ids(dataset)) {
        const auto frames = video_frames(dataset, vid);
        if (val_set.count(vid)) {
            val_idx.insert(val_idx.end(), frames.begin(), frames.end());
            continue;
        }
        for (std::size_t pos = 0; pos < frames.size(); pos += static_cast<std::size_t>(frame_stride))
            kept_video_frames.insert(frames[pos]);
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& r = dataset.records[i];
        if (!r.video_id || kept_video_frames.count(i)) train_idx.push_back(i);
    }
    return {subset(dataset, train_idx), subset(dataset, val_idx)};
}

DatasetRecord flip_record(const DatasetRecord& record, const FlipPermutation& perm) {
    DatasetRecord out = record;
    out.image = mirror_horizontal(record.image);
    const double w = record.image.width;
    const auto& src = record.annotation.points;
    if (perm.size() != src.size()) fail(ErrorKind::Schema, "flip permutation length does not match annotation");
    for (std::size_t i = 0; i < src.size(); ++i) out.annotation.points[i] = {w - src[perm[i]].x, src[perm[i]].y};
    const BBox& b = record.annotation.bbox;
    out.annotation.bbox = {w - b.x - b.w, b.y, b.w, b.h};
    out.annotation.image_ref = record.annotation.image_ref + "#flip";
    if (out.video_id) out.video_id = *out.video_id + "#flip";
    for (const char* key : {"yaw", "roll"})
        if (auto it = out.meta.find(key); it != out.meta.end()) it->second = -it->second;
    if (out.meta.count("flipped")) out.meta["flipped"] = 1.0 - out.meta["flipped"];
    else out.meta["flipped"] = 1.0;
    return out;
}

Dataset flip_augment(const Dataset& dataset) {
    Dataset out;
    out.schema = dataset.schema;
    out.records.reserve(2 * dataset.size());
    out.records = dataset.records;
    for (const auto& r : dataset.records) out.records.push_back(flip_record(r, dataset.schema.flip));
    return out;
}

namespace {

std::string record_stem(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu", i);
    return buf;
}

}  // namespace

json schema_to_json(const DatasetSchema& s) {
    return {{"n_points", s.n_points},
            {"flip", s.flip.indices()},
            {"nose_index", s.nose_index},
            {"left_eye_index", s.left_eye_index},
            {"right_eye_index", s.right_eye_index}};
}

DatasetSchema schema_from_json(const json& j) {
    DatasetSchema s;
    s.n_points = j.at("n_points").get<std::size_t>();
    s.flip = FlipPermutation(j.at("flip").get<std::vector<std::size_t>>());
    s.nose_index = j.at("nose_index").get<std::size_t>();
    s.left_eye_index = j.value("left_eye_index", std::size_t{0});
    s.right_eye_index = j.value("right_eye_index", std::size_t{1});
    return s;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    fs::create_directories(dir / "pts", ec);
    if (ec) fail(ErrorKind::Io, "cannot create dataset directory '" + dir.string() + "'");
    {
        std::ofstream os(dir / "schema.json");
        if (!os) fail(ErrorKind::Io, "cannot write '" + (dir / "schema.json").string() + "'");
        os << schema_to_json(dataset.schema).dump(2) << "\n";
    }
    std::ofstream manifest(dir / "manifest.jsonl");
    if (!manifest) fail(ErrorKind::Io, "cannot write '" + (dir / "manifest.jsonl").string() + "'");
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& r = dataset.records[i];
        const std::string stem = record_stem(i);
        const std::string image_rel = "images/" + stem + ".pgm";
        const std::string pts_rel = "pts/" + stem + ".pts";
        write_pgm(dir / image_rel, r.image);
        write_pts(dir / pts_rel, r.annotation.points);
        const BBox& b = r.annotation.bbox;
        json line = {{"image", image_rel}, {"pts", pts_rel}, {"bbox", {b.x, b.y, b.w, b.h}},
                     {"ref", r.annotation.image_ref}};
        if (r.video_id) line["video_id"] = *r.video_id;
        if (r.frame_index) line["frame_index"] = *r.frame_index;
        if (!r.meta.empty()) line["meta"] = r.meta;
        manifest << line.dump() << "\n";
    }
    if (!manifest) fail(ErrorKind::Io, "write failed for manifest in '" + dir.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) fail(ErrorKind::Io, "dataset directory '" + dir.string() + "' does not exist");
    const auto schema_path = dir / "schema.json";
    const auto manifest_path = dir / "manifest.jsonl";
    std::ifstream schema_is(schema_path);
    if (!schema_is) fail(ErrorKind::Io, "cannot open '" + schema_path.string() + "'");
    std::ifstream manifest(manifest_path);
    if (!manifest) fail(ErrorKind::Io, "cannot open '" + manifest_path.string() + "'");

    Dataset out;
    try {
        out.schema = schema_from_json(json::parse(schema_is));
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, schema_path.string() + ": " + e.what());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        DatasetRecord rec;
        try {
            const json j = json::parse(line);
            const auto bbox = j.at("bbox").get<std::vector<double>>();
            if (bbox.size() != 4) fail(ErrorKind::Schema, "bbox must have 4 entries");
            rec.annotation.bbox = {bbox[0], bbox[1], bbox[2], bbox[3]};
            rec.annotation.image_ref = j.value("ref", j.at("image").get<std::string>());
            rec.image = read_pgm(dir / j.at("image").get<std::string>());
            rec.annotation.points = read_pts(dir / j.at("pts").get<std::string>());
            if (j.contains("video_id")) rec.video_id = j["video_id"].get<std::string>();
            if (j.contains("frame_index")) rec.frame_index = j["frame_index"].get<int>();
            if (j.contains("meta")) rec.meta = j["meta"].get<std::map<std::string, double>>();
        } catch (const json::exception& e) {
            fail(ErrorKind::Schema, manifest_path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
        out.records.push_back(std::move(rec));
    }
    out.validate();
    return out;
}

}  // namespace kalign
