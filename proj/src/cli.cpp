#include "kalign/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <ostream>

#include "kalign/error.hpp"
#include "kalign/eval.hpp"
#include "kalign/pipeline.hpp"
#include "kalign/pts.hpp"
#include "kalign/service.hpp"
#include "kalign/synthetic.hpp"
#include "kalign/temporal.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose macros break Eigen's product kernels.
#include <CLI11.hpp>
#include <httplib.h>

namespace kalign {

using nlohmann::json;

namespace {

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Divergence: return kExitDivergence;
        case ErrorKind::Config:
        case ErrorKind::Split:
        case ErrorKind::Contract: return kExitUsage;
        default: return kExitIo;
    }
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
    err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::Io, "cannot write '" + path + "'");
    os << text;
    if (!os) fail(ErrorKind::Io, "failed writing '" + path + "'");
}

void emit_table(std::ostream& out, const Table& table, const std::string& csv_path, const std::string& json_path,
                const json& extra = json::object()) {
    write_csv(out, table);
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) fail(ErrorKind::Io, "cannot write '" + csv_path + "'");
        write_csv(os, table);
    }
    if (!json_path.empty()) {
        json doc = extra;
        doc["rows"] = to_json(table);
        write_text(json_path, doc.dump(2) + "\n");
    }
}

std::size_t resolve_k(std::size_t k, std::size_t m) { return k == 0 ? m : k; }

// ---- gen-data ----

struct GenArgs {
    std::string out;
    SyntheticConfig cfg;
};

void add_gen(CLI::App& app, GenArgs& a) {
    app.add_option("--out", a.out, "Output dataset directory")->required();
    app.add_option("--seed", a.cfg.seed, "Generator seed")->capture_default_str();
    app.add_option("--stills", a.cfg.n_stills, "Number of still images")->capture_default_str();
    app.add_option("--videos", a.cfg.n_videos, "Number of videos")->capture_default_str();
    app.add_option("--frames", a.cfg.frames_per_video, "Frames per video")->capture_default_str();
    app.add_option("--landmarks", a.cfg.n_landmarks, "Landmarks per face (>= 5)")->capture_default_str();
    app.add_option("--image-size", a.cfg.image_size, "Square image side in pixels")->capture_default_str();
    app.add_option("--noise", a.cfg.pixel_noise, "Pixel noise standard deviation")->capture_default_str();
    app.add_option("--clutter", a.cfg.clutter_blobs, "Distractor blobs per image")->capture_default_str();
    app.add_option("--occlusion-prob", a.cfg.occlusion_prob, "Probability of an occluding rectangle")
        ->capture_default_str();
}

int run_gen(const GenArgs& a, std::ostream& out) {
    const Dataset ds = generate_synthetic(a.cfg);
    save_dataset(a.out, ds);
    out << json{{"records", ds.size()}, {"videos", video_ids(ds).size()}, {"out", a.out}}.dump() << "\n";
    return kExitOk;
}

// ---- cluster ----

struct ClusterArgs {
    std::string data, out;
    std::size_t k = 0;
    double tau = 0.1;
    std::uint64_t seed = 3;
    bool no_flip = false;
};

void add_cluster(CLI::App& app, ClusterArgs& a) {
    app.add_option("--data", a.data, "Dataset directory")->required();
    app.add_option("--out", a.out, "Output JSON file")->required();
    app.add_option("--k", a.k, "Number of pose classes (0: one per example)")->capture_default_str();
    app.add_option("--tau", a.tau, "Membership radius")->capture_default_str();
    app.add_option("--seed", a.seed, "k-means seed")->capture_default_str();
    app.add_flag("--no-flip", a.no_flip, "Skip mirror augmentation");
}

int run_cluster(const ClusterArgs& a, std::ostream& out) {
    const Dataset loaded = load_dataset(a.data);
    const Dataset ds = a.no_flip ? loaded : flip_augment(loaded);
    const auto shapes = normalized_shapes(ds);
    const std::size_t k = resolve_k(a.k, ds.size());
    if (k > ds.size()) fail(ErrorKind::Config, "K=" + std::to_string(k) + " exceeds " + std::to_string(ds.size()));
    KMeansOptions opts;
    opts.seed = a.seed;
    KMeansResult km = kmeans_shapes(shapes, k, opts);
    km.classes.bandwidths = fit_bandwidths(km.classes.centers, shapes, km.assignments);
    const MembershipSets ms = membership_sets(km.classes, shapes, a.tau);

    json centers = json::array();
    for (const auto& c : km.classes.centers)
        centers.push_back(std::vector<double>(c.stacked().data(), c.stacked().data() + c.stacked().size()));
    json hist = json::object();
    for (const auto& [size, count] : membership_histogram(ms)) hist[std::to_string(size)] = count;
    const json doc = {{"k", k},
                      {"tau", a.tau},
                      {"exemplar", km.classes.exemplar},
                      {"iterations", km.iterations},
                      {"sse_history", km.sse_history},
                      {"bandwidths", km.classes.bandwidths},
                      {"membership_histogram", hist},
                      {"centers", centers}};
    write_text(a.out, doc.dump() + "\n");
    out << json{{"k", k}, {"iterations", km.iterations}, {"membership_histogram", hist}}.dump() << "\n";
    return kExitOk;
}

// ---- train ----

struct TrainArgs {
    std::string data, val, out, report;
    double val_fraction = 0.0;
    int stride = 1;
    std::uint64_t split_seed = 1;
    PipelineConfig cfg;
    std::string loss = "multi_label";
    std::string extractor = "random_fourier";
    std::size_t feature_dim = 384;
    double bandwidth = 0.6;
    bool no_flip = false, no_cascade = false, no_bbox = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
    app.add_option("--data", a.data, "Training dataset directory")->required();
    app.add_option("--val", a.val, "Validation dataset directory");
    app.add_option("--val-fraction", a.val_fraction, "Hold out this fraction of videos when --val is absent")
        ->capture_default_str();
    app.add_option("--stride", a.stride, "Keep every n-th frame of training videos")->capture_default_str();
    app.add_option("--split-seed", a.split_seed, "Video split seed")->capture_default_str();
    app.add_option("--out", a.out, "Output model file")->required();
    app.add_option("--report", a.report, "Training report JSON file");
    app.add_option("--k", a.cfg.k, "Number of pose classes (0: one per example)")->capture_default_str();
    app.add_option("--tau", a.cfg.tau, "Membership radius")->capture_default_str();
    app.add_option("--tau-grid", a.cfg.tau_grid, "Candidate membership radii, picked on validation data");
    app.add_option("--tau-evidence", a.cfg.tau_evidence, "Default click tolerance (default: tau / 2)");
    app.add_option("--tau-hmm", a.cfg.tau_hmm, "Transition radius for decoding (default: tau)");
    app.add_option("--loss", a.loss, "softmax | soft_target | multi_label")->capture_default_str();
    app.add_option("--epochs", a.cfg.train.epochs, "Training epochs")->capture_default_str();
    app.add_option("--lr", a.cfg.train.learning_rate, "Learning rate")->capture_default_str();
    app.add_option("--batch", a.cfg.train.batch_size, "Batch size")->capture_default_str();
    app.add_option("--seed", a.cfg.train.seed, "Training seed")->capture_default_str();
    app.add_option("--cluster-seed", a.cfg.cluster_seed, "k-means seed")->capture_default_str();
    app.add_option("--extractor", a.extractor, "random_fourier | mlp")->capture_default_str();
    app.add_option("--feature-dim", a.feature_dim, "Feature dimension D")->capture_default_str();
    app.add_option("--bandwidth", a.bandwidth, "Random feature bandwidth")->capture_default_str();
    app.add_option("--groups", a.cfg.cascade_options.groups, "Cascade regressor groups")->capture_default_str();
    app.add_option("--levels", a.cfg.cascade_options.levels, "Cascade levels")->capture_default_str();
    app.add_flag("--no-flip", a.no_flip, "Skip mirror augmentation");
    app.add_flag("--no-cascade", a.no_cascade, "Skip cascaded regressors");
    app.add_flag("--no-bbox", a.no_bbox, "Skip the detection window regressor");
}

int run_train(TrainArgs& a, std::ostream& out) {
    Dataset train = load_dataset(a.data);
    std::optional<Dataset> val;
    if (!a.val.empty()) {
        val = load_dataset(a.val);
    } else if (a.val_fraction > 0.0) {
        SplitResult split = split_and_subsample(train, a.val_fraction, a.stride, a.split_seed);
        train = std::move(split.train);
        val = std::move(split.val);
    }
    PipelineConfig cfg = a.cfg;
    cfg.train.loss = parse_loss_kind(a.loss);
    cfg.flip = !a.no_flip;
    cfg.cascade = !a.no_cascade;
    cfg.bbox_regressor = !a.no_bbox;
    if (a.extractor == "random_fourier")
        cfg.extractor = {{"kind", "random_fourier"}, {"input_size", 24}, {"dim", a.feature_dim},
                         {"bandwidth", a.bandwidth}, {"seed", 17}};
    else if (a.extractor == "mlp")
        cfg.extractor = {{"kind", "mlp"}, {"input_size", 24}, {"dim", a.feature_dim}, {"init_scale", 1.0}, {"seed", 23}};
    else
        fail(ErrorKind::Config, "unknown extractor '" + a.extractor + "'");

    PipelineReport rep;
    const Model model = train_model(train, val ? &*val : nullptr, cfg, &rep);
    save_model(a.out, model);

    json hist = json::object();
    for (const auto& [size, count] : rep.membership_histogram) hist[std::to_string(size)] = count;
    const json doc = {{"n_train", rep.n_train},
                      {"k", model.n_classes()},
                      {"tau", rep.tau},
                      {"tau_grid", a.cfg.tau_grid},
                      {"tau_errors", rep.tau_errors},
                      {"fingerprint", model.train_fingerprint},
                      {"epoch_loss", rep.train_log.epoch_loss},
                      {"epoch_multilabel_error", rep.train_log.epoch_multilabel_error},
                      {"membership_histogram", hist},
                      {"bbox_lambda", rep.bbox_lambda},
                      {"bbox_lambda_errors", rep.bbox_lambda_errors},
                      {"cascade_lambda", rep.cascade_lambda},
                      {"cascade_lambda_errors", rep.cascade_lambda_errors},
                      {"cascade_level_error", rep.cascade_log.level_mean_error}};
    if (!a.report.empty()) write_text(a.report, doc.dump(2) + "\n");
    out << json{{"model", a.out},
                {"k", model.n_classes()},
                {"final_loss", rep.train_log.epoch_loss.empty() ? 0.0 : rep.train_log.epoch_loss.back()}}
               .dump()
        << "\n";
    return kExitOk;
}

// ---- eval ----

struct EvalArgs {
    std::string model, data, train_data, val;
    std::string experiment = "predictors";
    std::string policy;
    std::optional<std::size_t> landmark;
    std::optional<double> tolerance;
    double hard_fraction = 0.1;
    std::string csv, json_out;
    std::vector<std::size_t> k_grid{10, 100, 1000, 0};
    std::vector<std::string> losses{"softmax", "soft_target", "multi_label"};
    double tau = 0.1;
    int epochs = 30;
    bool refine = false;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    app.add_option("--model", a.model, "Model file")->envname("KALIGN_MODEL");
    app.add_option("--data", a.data, "Evaluation dataset directory (training set for loss-scaling)")->required();
    app.add_option("--val", a.val, "Validation dataset for loss-scaling");
    app.add_option("--train-data", a.train_data, "Training dataset, for the mean-shape baseline and hard subset");
    app.add_option("--experiment", a.experiment, "predictors | interactive | loss-scaling")->capture_default_str();
    app.add_option("--policy", a.policy, "1pt: report none / fixed 1-pt / best 1-pt failure rates");
    app.add_option("--landmark", a.landmark, "Landmark clicked by the fixed 1-pt policy (default: nose)");
    app.add_option("--tolerance", a.tolerance, "Click tolerance in canonical units (default: model tau_evidence)");
    app.add_flag("--refine", a.refine, "Apply cascaded regressors in the interactive study");
    app.add_option("--hard-fraction", a.hard_fraction, "Fraction of frames in the hard subset")->capture_default_str();
    app.add_option("--k-grid", a.k_grid, "K values for loss-scaling (0: one class per example)")->delimiter(',');
    app.add_option("--losses", a.losses, "Losses for loss-scaling")->delimiter(',');
    app.add_option("--tau", a.tau, "Membership radius for loss-scaling")->capture_default_str();
    app.add_option("--epochs", a.epochs, "Epochs for loss-scaling")->capture_default_str();
    app.add_option("--out-csv", a.csv, "Write the table as CSV");
    app.add_option("--out-json", a.json_out, "Write the table as JSON");
}

Model require_model(const std::string& path) {
    if (path.empty()) fail(ErrorKind::Config, "no model given: pass --model or set KALIGN_MODEL");
    return load_model(path);
}

int run_eval(const EvalArgs& a, std::ostream& out) {
    std::string experiment = a.experiment;
    if (!a.policy.empty()) {
        if (a.policy != "1pt") fail(ErrorKind::Config, "unknown policy '" + a.policy + "' (expected 1pt)");
        experiment = "interactive";
    }
    const Dataset data = load_dataset(a.data);

    if (experiment == "loss-scaling") {
        if (a.val.empty()) fail(ErrorKind::Config, "loss-scaling needs --val");
        const Dataset train = flip_augment(data);
        const Dataset val = load_dataset(a.val);
        const RandomFeatureExtractor extractor({});
        LossScalingConfig cfg;
        for (std::size_t k : a.k_grid) cfg.k_grid.push_back(resolve_k(k, train.size()));
        cfg.losses.clear();
        for (const auto& l : a.losses) cfg.losses.push_back(parse_loss_kind(l));
        cfg.tau = a.tau;
        cfg.train.epochs = a.epochs;
        const auto rows = loss_scaling_experiment(train, extract_dataset(extractor, train), val,
                                                  extract_dataset(extractor, val), cfg);
        emit_table(out, to_table(rows), a.csv, a.json_out, {{"experiment", "loss-scaling"}, {"m", train.size()}});
        return kExitOk;
    }

    const Model model = require_model(a.model);
    if (experiment == "interactive") {
        InteractiveConfig cfg;
        cfg.landmark = a.landmark;
        cfg.tolerance = a.tolerance;
        cfg.refine = a.refine;
        const auto rows = interactive_eval(data, model, cfg);
        emit_table(out, to_table(rows), a.csv, a.json_out, {{"experiment", "interactive"}});
        return kExitOk;
    }
    if (experiment == "predictors") {
        const Dataset reference = a.train_data.empty() ? data : load_dataset(a.train_data);
        const auto shapes = normalized_shapes(flip_augment(reference));
        const Shape mean = mean_shape(shapes);
        auto rows = compare_predictors(data, model, mean);
        const Dataset hard = hard_subset(data, mean, a.hard_fraction);
        for (auto& row : compare_predictors(hard, model, mean)) {
            row.predictor += "@hard";
            rows.push_back(std::move(row));
        }
        emit_table(out, to_table(rows), a.csv, a.json_out, {{"experiment", "predictors"}});
        return kExitOk;
    }
    fail(ErrorKind::Config, "unknown experiment '" + experiment + "'");
}

// ---- bench ----

struct BenchArgs {
    BenchConfig cfg;
    std::string csv, json_out;
};

void add_bench(CLI::App& app, BenchArgs& a) {
    app.add_option("--dim", a.cfg.feature_dim, "Feature dimension D")->capture_default_str();
    app.add_option("--k-grid", a.cfg.k_grid, "Ascending K values")->delimiter(',');
    app.add_option("--ratio", a.cfg.extractor_ratio, "Extractor FLOPs / head FLOPs at the largest K")
        ->capture_default_str();
    app.add_option("--reps", a.cfg.repetitions, "Timed repetitions")->capture_default_str();
    app.add_option("--warmup", a.cfg.warmup, "Untimed warmup repetitions")->capture_default_str();
    app.add_option("--seed", a.cfg.seed, "Seed for weights and input")->capture_default_str();
    app.add_option("--out-csv", a.csv, "Write the table as CSV");
    app.add_option("--out-json", a.json_out, "Write the table as JSON");
}

int run_bench(const BenchArgs& a, std::ostream& out) {
    const BenchResult r = bench_head_scaling(a.cfg);
    emit_table(out, to_table(r), a.csv, a.json_out,
               {{"experiment", "head-scaling"},
                {"feature_dim", a.cfg.feature_dim},
                {"extractor", r.extractor_config},
                {"machine", r.machine}});
    return kExitOk;
}

// ---- smooth ----

struct SmoothArgs {
    std::string model, data, video, out, csv;
    int window = 3;
};

void add_smooth(CLI::App& app, SmoothArgs& a) {
    app.add_option("--model", a.model, "Model file")->envname("KALIGN_MODEL");
    app.add_option("--data", a.data, "Dataset directory")->required();
    app.add_option("--video", a.video, "Video id")->required();
    app.add_option("--out", a.out, "Directory for decoded .pts files");
    app.add_option("--window", a.window, "Moving-average window of the low-pass baseline")->capture_default_str();
    app.add_option("--out-csv", a.csv, "Per-frame errors as CSV");
}

int run_smooth(const SmoothArgs& a, std::ostream& out) {
    const Model model = require_model(a.model);
    const Dataset data = load_dataset(a.data);
    const auto frames = video_frames(data, a.video);
    if (frames.empty()) fail(ErrorKind::NotFound, "unknown video id '" + a.video + "'");

    FrameSequence seq;
    std::vector<Shape> raw;
    for (std::size_t i : frames) {
        const auto& rec = data.records[i];
        seq.frames.push_back(window_posterior(model, rec.image, rec.annotation.bbox));
        seq.frame_indices.push_back(rec.frame_index.value_or(0));
        raw.push_back(model.classes.centers[map_class(seq.frames.back())]);
    }
    const TransitionStructure tr = build_transitions(model.classes, model.temporal.tau_hmm,
                                                     model.temporal.self_weight, model.temporal.neighbor_weight);
    const DecodedPath path = viterbi(seq, tr);

    // Decoded class, then that class's regressor, then the moving average over refined shapes.
    std::vector<Shape> decoded, refined;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& rec = data.records[frames[f]];
        decoded.push_back(model.classes.centers[path.classes[f]]);
        refined.push_back(model.cascade.levels == 0
                              ? decoded.back()
                              : apply_regressor(model.cascade, model.classes, rec.image, path.classes[f],
                                                rec.annotation.bbox));
    }
    const auto smoothed = lowpass_smooth(refined, a.window);

    Table t{{"frame_index", "map_class", "decoded_class", "error_map", "error_viterbi", "error_refined",
             "error_smoothed"},
            {}};
    double sums[4] = {0, 0, 0, 0};
    if (!a.out.empty()) std::filesystem::create_directories(a.out);
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& rec = data.records[frames[f]];
        const BBox& box = rec.annotation.bbox;
        const auto final_shape = denormalize_shape(smoothed[f], box);
        const double e[4] = {pt_pt_error(denormalize_shape(raw[f], box), rec.annotation),
                             pt_pt_error(denormalize_shape(decoded[f], box), rec.annotation),
                             pt_pt_error(denormalize_shape(refined[f], box), rec.annotation),
                             pt_pt_error(final_shape, rec.annotation)};
        for (int i = 0; i < 4; ++i) sums[i] += e[i];
        t.rows.push_back({std::to_string(seq.frame_indices[f]), std::to_string(map_class(seq.frames[f])),
                          std::to_string(path.classes[f]), std::to_string(e[0]), std::to_string(e[1]),
                          std::to_string(e[2]), std::to_string(e[3])});
        if (!a.out.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%04d.pts", seq.frame_indices[f]);
            write_pts(std::filesystem::path(a.out) / name, final_shape);
        }
    }
    if (!a.csv.empty()) {
        std::ofstream os(a.csv);
        if (!os) fail(ErrorKind::Io, "cannot write '" + a.csv + "'");
        write_csv(os, t);
    }
    const auto n = static_cast<double>(frames.size());
    out << json{{"video", a.video},
                {"frames", frames.size()},
                {"log_score", path.log_score},
                {"mean_error_map", sums[0] / n},
                {"mean_error_viterbi", sums[1] / n},
                {"mean_error_refined", sums[2] / n},
                {"mean_error_smoothed", sums[3] / n}}
               .dump()
        << "\n";
    return kExitOk;
}

// ---- serve ----

struct ServeArgs {
    std::string model, data, host = "127.0.0.1";
    int port = 8080;
};

void add_serve(CLI::App& app, ServeArgs& a) {
    app.add_option("--model", a.model, "Model file")->envname("KALIGN_MODEL");
    app.add_option("--data", a.data, "Dataset directory holding the frames")->required();
    app.add_option("--host", a.host, "Bind address")->capture_default_str();
    app.add_option("--port", a.port, "Port")->capture_default_str();
}

int run_serve(const ServeArgs& a, std::ostream& out) {
    auto model = std::make_shared<const Model>(require_model(a.model));
    auto frames = std::make_shared<const Dataset>(load_dataset(a.data));
    AnnotationService service(model, frames);
    httplib::Server server;
    mount_routes(server, service);
    if (!server.bind_to_port(a.host, a.port))
        fail(ErrorKind::Io, "cannot bind " + a.host + ":" + std::to_string(a.port));
    out << json{{"listening", a.host + ":" + std::to_string(a.port)}}.dump() << std::endl;
    server.listen_after_bind();
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Landmark alignment as extreme-K pose classification", "kalign"};
    app.set_config("--config", "", "TOML config file; keys mirror long option names, one table per subcommand");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    // Lets --config follow the subcommand name.
    app.fallthrough();

    GenArgs gen;
    ClusterArgs cluster;
    TrainArgs train;
    EvalArgs eval;
    BenchArgs bench;
    SmoothArgs smooth;
    ServeArgs serve;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    auto* cluster_cmd = app.add_subcommand("cluster", "Cluster training shapes into pose classes");
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model or run the loss-scaling study");
    auto* bench_cmd = app.add_subcommand("bench", "Benchmark classifier head scaling");
    auto* smooth_cmd = app.add_subcommand("smooth", "Decode a video with the pose-class HMM");
    auto* serve_cmd = app.add_subcommand("serve", "Run the annotation HTTP service");
    add_gen(*gen_cmd, gen);
    add_cluster(*cluster_cmd, cluster);
    add_train(*train_cmd, train);
    add_eval(*eval_cmd, eval);
    add_bench(*bench_cmd, bench);
    add_smooth(*smooth_cmd, smooth);
    add_serve(*serve_cmd, serve);
    for (auto* sub : app.get_subcommands({})) sub->allow_config_extras(CLI::config_extras_mode::error);

    std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rev.begin(), rev.end());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        report_error(err, "usage", msg);
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) return run_gen(gen, out);
        if (cluster_cmd->parsed()) return run_cluster(cluster, out);
        if (train_cmd->parsed()) return run_train(train, out);
        if (eval_cmd->parsed()) return run_eval(eval, out);
        if (bench_cmd->parsed()) return run_bench(bench, out);
        if (smooth_cmd->parsed()) return run_smooth(smooth, out);
        if (serve_cmd->parsed()) return run_serve(serve, out);
    } catch (const Error& e) {
        report_error(err, to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        report_error(err, "io", e.what());
        return kExitIo;
    }
    report_error(err, "usage", "no subcommand");
    return kExitUsage;
}

}  // namespace kalign
