#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "kalign/error.hpp"
#include "kalign/model.hpp"
#include "kalign/synthetic.hpp"
#include "support.hpp"

using namespace kalign;

namespace {

ErrorKind load_error(const std::filesystem::path& path, std::string* message = nullptr) {
    try {
        load_model(path);
    } catch (const Error& e) {
        if (message) *message = e.what();
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Contract;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary);
    os << bytes;
}

}  // namespace

TEST_CASE("model save and load") {
    const auto dir = kalign::testing::scratch_dir("model");
    const Dataset train = flip_augment(generate_synthetic(kalign::testing::small_config(50, 0, 0, 1)));
    const Dataset val = generate_synthetic(kalign::testing::small_config(15, 0, 0, 2));
    const Model model = kalign::testing::tiny_model(train);
    const auto path = dir / "m.kmodel";
    save_model(path, model);
    const Model back = load_model(path);

    SUBCASE("round trip preserves every component") {
        CHECK(back.n_classes() == model.n_classes());
        CHECK(back.tau == model.tau);
        CHECK(back.tau_evidence == model.tau_evidence);
        CHECK(back.temperature == model.temperature);
        CHECK(back.temporal.tau_hmm == model.temporal.tau_hmm);
        CHECK(back.train_fingerprint == model.train_fingerprint);
        CHECK(back.schema.nose_index == model.schema.nose_index);
        CHECK(back.head.weights == model.head.weights);
        CHECK(back.classes.bandwidths == model.classes.bandwidths);
        CHECK(back.bbox.model.weights == model.bbox.model.weights);
        CHECK(back.cascade.group_of_class == model.cascade.group_of_class);
        CHECK(back.extractor->config() == model.extractor->config());
        for (const auto& rec : val.records) {
            const BBox& box = rec.annotation.bbox;
            const PosePosterior a = window_posterior(model, rec.image, box);
            const PosePosterior b = window_posterior(back, rec.image, box);
            CHECK(a.probs() == b.probs());
            const Prediction pa = predict_from_posterior(model, a, rec.image, box);
            const Prediction pb = predict_from_posterior(back, b, rec.image, box);
            CHECK(pa.map_class == pb.map_class);
            CHECK(pa.canonical == pb.canonical);
            const BBox ra = refine_bbox(model.bbox, *model.extractor, rec.image, box);
            const BBox rb = refine_bbox(back.bbox, *back.extractor, rec.image, box);
            CHECK((ra.x == rb.x && ra.y == rb.y && ra.w == rb.w && ra.h == rb.h));
        }
        // Saving the loaded model reproduces the file byte for byte.
        save_model(dir / "again.kmodel", back);
        CHECK(slurp(dir / "again.kmodel") == slurp(path));
    }
    SUBCASE("predictions without refinement are the MAP class mean") {
        const auto& rec = val.records[0];
        const PosePosterior p = window_posterior(model, rec.image, rec.annotation.bbox);
        const Prediction pred = predict_from_posterior(model, p, rec.image, rec.annotation.bbox, false);
        CHECK(pred.canonical == model.classes.centers[map_class(p)]);
        CHECK(pred.pixels.size() == model.n_points());
    }
    SUBCASE("damaged files") {
        const std::string bytes = slurp(path);
        std::string msg;
        CHECK(load_error(dir / "missing.kmodel", &msg) == ErrorKind::Io);
        CHECK(msg.find("missing.kmodel") != std::string::npos);

        spit(dir / "magic.kmodel", "NOT-A-MODEL\n" + bytes.substr(bytes.find('\n') + 1));
        CHECK(load_error(dir / "magic.kmodel", &msg) == ErrorKind::Schema);
        CHECK(msg.find("magic") != std::string::npos);

        spit(dir / "short.kmodel", bytes.substr(0, bytes.size() - 100));
        CHECK(load_error(dir / "short.kmodel", &msg) == ErrorKind::Schema);
        CHECK(msg.find("truncated") != std::string::npos);

        spit(dir / "long.kmodel", bytes + "xxxxxxxx");
        CHECK(load_error(dir / "long.kmodel") == ErrorKind::Schema);

        const auto header_end = bytes.find('\n', bytes.find('\n') + 1);
        spit(dir / "header.kmodel", bytes.substr(0, bytes.find('\n') + 1) + "{not json" + bytes.substr(header_end));
        CHECK(load_error(dir / "header.kmodel") == ErrorKind::Schema);
    }
    SUBCASE("validation catches inconsistent models") {
        Model broken = model;
        broken.classes.bandwidths.pop_back();
        CHECK_THROWS_AS(broken.validate(), Error);
        broken = model;
        broken.extractor.reset();
        CHECK_THROWS_AS(broken.validate(), Error);
        broken = model;
        broken.head = ClassifierHead(model.n_classes(), model.feature_dim() + 1);
        CHECK_THROWS_AS(broken.validate(), Error);
        CHECK_NOTHROW(model.validate());
    }
    std::filesystem::remove_all(dir);
}
