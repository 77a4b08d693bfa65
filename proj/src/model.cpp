#include "kalign/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "kalign/error.hpp"

namespace kalign {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "KALIGN-MODEL 1";

class ArrayWriter {
public:
    void add(const std::string& name, Eigen::MatrixXd&&) = delete;
    void add(const std::string& name, const Eigen::MatrixXd& m) {
        table_.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
        arrays_.push_back(&m);
    }
    void add_owned(const std::string& name, Eigen::MatrixXd m) {
        owned_.push_back(std::make_unique<Eigen::MatrixXd>(std::move(m)));
        add(name, *owned_.back());
    }
    const json& table() const { return table_; }
    void write(std::ostream& os) const {
        for (const auto* m : arrays_) {
            // Column-major, as Eigen stores it.
            for (Eigen::Index i = 0; i < m->size(); ++i) {
                auto bits = std::bit_cast<std::uint64_t>(m->data()[i]);
                if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
                char buf[8];
                std::memcpy(buf, &bits, 8);
                os.write(buf, 8);
            }
        }
    }

private:
    static std::uint64_t byteswap(std::uint64_t v) {
        std::uint64_t out = 0;
        for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
        return out;
    }
    json table_ = json::array();
    std::vector<const Eigen::MatrixXd*> arrays_;
    std::vector<std::unique_ptr<Eigen::MatrixXd>> owned_;
};

std::map<std::string, Eigen::MatrixXd> read_arrays(std::istream& is, const json& table, const std::string& where) {
    std::map<std::string, Eigen::MatrixXd> out;
    for (const auto& entry : table) {
        const auto name = entry.at("name").get<std::string>();
        const auto rows = entry.at("rows").get<Eigen::Index>();
        const auto cols = entry.at("cols").get<Eigen::Index>();
        if (rows < 0 || cols < 0) fail(ErrorKind::Schema, where + ": negative array extent for '" + name + "'");
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            char buf[8];
            if (!is.read(buf, 8)) fail(ErrorKind::Schema, where + ": truncated payload in array '" + name + "'");
            std::uint64_t bits;
            std::memcpy(&bits, buf, 8);
            if constexpr (std::endian::native == std::endian::big) {
                std::uint64_t swapped = 0;
                for (int b = 0; b < 8; ++b) swapped |= ((bits >> (8 * b)) & 0xffu) << (8 * (7 - b));
                bits = swapped;
            }
            m.data()[i] = std::bit_cast<double>(bits);
        }
        out.emplace(name, std::move(m));
    }
    if (is.peek() != std::char_traits<char>::eof()) fail(ErrorKind::Schema, where + ": trailing bytes after payload");
    return out;
}

// Loads a saved ridge map and checks it maps `in` features to `out` values.
RidgeModel ridge_from(Eigen::MatrixXd weights, const Eigen::MatrixXd& bias, Eigen::Index in, Eigen::Index out,
                      const std::string& what) {
    if (weights.rows() != in || weights.cols() != out || bias.size() != out)
        fail(ErrorKind::Schema, what + ": array shapes do not match the model");
    RidgeModel r;
    r.weights = std::move(weights);
    r.bias = Eigen::Map<const Eigen::RowVectorXd>(bias.data(), out);
    return r;
}

Eigen::MatrixXd as_column(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void Model::validate() const {
    const std::size_t k = classes.size();
    if (k == 0) fail(ErrorKind::Schema, "model has no pose classes");
    if (classes.bandwidths.size() != k) fail(ErrorKind::Schema, "model bandwidth count does not match K");
    if (classes.n_points() != schema.n_points) fail(ErrorKind::Schema, "model class shapes do not match schema N");
    if (head.n_classes() != k) fail(ErrorKind::Schema, "model head rows do not match K");
    if (!extractor) fail(ErrorKind::Schema, "model has no feature extractor");
    if (extractor->dim() != head.feature_dim()) fail(ErrorKind::Schema, "model extractor dim does not match head");
    if (!cascade.groups.empty() && cascade.group_of_class.size() != k)
        fail(ErrorKind::Schema, "model cascade group map does not cover K classes");
}

PosePosterior window_posterior(const Model& model, const GrayImage& image, const BBox& window) {
    return posterior(model.head, model.extractor->extract_window(image, window), model.temperature);
}

Prediction predict_from_posterior(const Model& model, const PosePosterior& posterior, const GrayImage& image,
                                  const BBox& window, bool refine) {
    Prediction out;
    out.map_class = map_class(posterior);
    out.canonical = refine && !model.cascade.groups.empty()
                        ? apply_regressor(model.cascade, model.classes, image, out.map_class, window)
                        : model.classes.centers[out.map_class];
    out.pixels = denormalize_shape(out.canonical, window);
    return out;
}

void save_model(const std::filesystem::path& path, const Model& model) {
    model.validate();
    ArrayWriter arrays;
    arrays.add_owned("classes.centers", model.classes.center_matrix());
    arrays.add_owned("classes.bandwidths", as_column(model.classes.bandwidths));
    arrays.add("head.weights", model.head.weights);
    arrays.add_owned("head.bias", model.head.bias);
    const ParamMap extractor_params = model.extractor->params();
    for (const auto& [name, m] : extractor_params) arrays.add("extractor." + name, m);
    const bool has_bbox = !model.bbox.model.empty();
    if (has_bbox) {
        arrays.add("bbox.weights", model.bbox.model.weights);
        arrays.add_owned("bbox.bias", model.bbox.model.bias);
    }
    for (std::size_t g = 0; g < model.cascade.groups.size(); ++g)
        for (std::size_t l = 0; l < model.cascade.groups[g].size(); ++l) {
            const auto prefix = "cascade." + std::to_string(g) + "." + std::to_string(l);
            arrays.add(prefix + ".weights", model.cascade.groups[g][l].weights);
            arrays.add_owned(prefix + ".bias", model.cascade.groups[g][l].bias);
        }

    json header = {
        {"schema", schema_to_json(model.schema)},
        {"k", model.classes.size()},
        {"exemplar", model.classes.exemplar},
        {"tau", model.tau},
        {"tau_evidence", model.tau_evidence},
        {"temperature", model.temperature},
        {"extractor", model.extractor->config()},
        {"extractor_params", [&] {
             json names = json::array();
             for (const auto& [name, m] : extractor_params) names.push_back(name);
             return names;
         }()},
        {"bbox", {{"present", has_bbox}, {"lambda", model.bbox.lambda}}},
        {"cascade",
         {{"groups", model.cascade.groups.size()},
          {"levels", model.cascade.levels},
          {"grid", model.cascade.patch.grid},
          {"spacing", model.cascade.patch.spacing},
          {"group_of_class", model.cascade.group_of_class}}},
        {"temporal",
         {{"tau_hmm", model.temporal.tau_hmm},
          {"self_weight", model.temporal.self_weight},
          {"neighbor_weight", model.temporal.neighbor_weight}}},
        {"train_fingerprint", model.train_fingerprint},
        {"arrays", arrays.table()},
    };

    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::Io, "cannot write model '" + path.string() + "'");
    os << kMagic << '\n' << header.dump() << '\n';
    arrays.write(os);
    if (!os) fail(ErrorKind::Io, "failed writing model '" + path.string() + "'");
}

Model load_model(const std::filesystem::path& path) {
    const std::string where = "model '" + path.string() + "'";
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::Io, "cannot open " + where);
    std::string magic, header_line;
    std::getline(is, magic);
    if (magic != kMagic) fail(ErrorKind::Schema, where + ": not a model file (bad magic line)");
    std::getline(is, header_line);

    Model model;
    try {
        const json h = json::parse(header_line);
        auto arrays = read_arrays(is, h.at("arrays"), where);
        auto take = [&](const std::string& name) -> Eigen::MatrixXd {
            auto it = arrays.find(name);
            if (it == arrays.end()) fail(ErrorKind::Schema, where + ": missing array '" + name + "'");
            return std::move(it->second);
        };

        model.schema = schema_from_json(h.at("schema"));
        model.tau = h.at("tau").get<double>();
        model.tau_evidence = h.at("tau_evidence").get<double>();
        model.temperature = h.at("temperature").get<double>();
        model.train_fingerprint = h.at("train_fingerprint").get<std::string>();

        const auto k = h.at("k").get<std::size_t>();
        const Eigen::MatrixXd centers = take("classes.centers");
        const Eigen::MatrixXd bandwidths = take("classes.bandwidths");
        if (static_cast<std::size_t>(centers.rows()) != k || static_cast<std::size_t>(bandwidths.size()) != k)
            fail(ErrorKind::Schema, where + ": class arrays do not match K");
        model.classes.exemplar = h.at("exemplar").get<bool>();
        for (std::size_t i = 0; i < k; ++i) {
            model.classes.centers.emplace_back(Eigen::VectorXd(centers.row(static_cast<Eigen::Index>(i)).transpose()));
            model.classes.bandwidths.push_back(bandwidths.data()[i]);
        }

        model.head.weights = take("head.weights");
        const Eigen::MatrixXd head_bias = take("head.bias");
        if (head_bias.size() != model.head.weights.rows()) fail(ErrorKind::Schema, where + ": head bias size mismatch");
        model.head.bias = Eigen::Map<const Eigen::VectorXd>(head_bias.data(), head_bias.size());

        ParamMap params;
        for (const auto& name : h.at("extractor_params")) {
            const auto n = name.get<std::string>();
            params.emplace(n, take("extractor." + n));
        }
        model.extractor = make_extractor(h.at("extractor"), params);

        const json& bbox = h.at("bbox");
        model.bbox.lambda = bbox.at("lambda").get<double>();
        if (bbox.at("present").get<bool>()) {
            model.bbox.model = ridge_from(take("bbox.weights"), take("bbox.bias"),
                                          static_cast<Eigen::Index>(model.extractor->dim()), 4, where + " bbox");
        }

        const json& cascade = h.at("cascade");
        const auto groups = cascade.at("groups").get<std::size_t>();
        model.cascade.levels = cascade.at("levels").get<std::size_t>();
        model.cascade.patch.grid = cascade.at("grid").get<int>();
        model.cascade.patch.spacing = cascade.at("spacing").get<double>();
        model.cascade.group_of_class = cascade.at("group_of_class").get<std::vector<std::size_t>>();
        model.cascade.groups.resize(groups);
        for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t l = 0; l < model.cascade.levels; ++l) {
                const auto prefix = "cascade." + std::to_string(g) + "." + std::to_string(l);
                model.cascade.groups[g].push_back(ridge_from(
                    take(prefix + ".weights"), take(prefix + ".bias"),
                    static_cast<Eigen::Index>(model.cascade.patch.dim(model.schema.n_points)),
                    static_cast<Eigen::Index>(2 * model.schema.n_points), where + " " + prefix));
            }
        for (std::size_t g : model.cascade.group_of_class)
            if (g >= groups) fail(ErrorKind::Schema, where + ": cascade group index out of range");

        const json& temporal = h.at("temporal");
        model.temporal.tau_hmm = temporal.at("tau_hmm").get<double>();
        model.temporal.self_weight = temporal.at("self_weight").get<double>();
        model.temporal.neighbor_weight = temporal.at("neighbor_weight").get<double>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, where + ": malformed header: " + e.what());
    }
    model.validate();
    return model;
}

}  // namespace kalign
