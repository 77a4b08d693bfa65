#include "kalign/service.hpp"

#include <cmath>

#include <httplib.h>

#include "kalign/error.hpp"
#include "kalign/pts.hpp"

namespace kalign {

using nlohmann::json;

namespace {

int status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NotFound: return 404;
        case ErrorKind::Conflict: return 409;
        case ErrorKind::NoConsistentClass:
        case ErrorKind::Infeasible: return 422;
        case ErrorKind::Parse:
        case ErrorKind::Config:
        case ErrorKind::Contract:
        case ErrorKind::Schema:
        case ErrorKind::InvalidAnnotation: return 400;
        default: return 500;
    }
}

AnnotationService::Response error_response(const Error& e) {
    json body = {{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}};
    if (e.kind() == ErrorKind::NoConsistentClass)
        body["error"]["suggestion"] = "increase the evidence tolerance";
    return {status_of(e.kind()), std::move(body)};
}

template <class F>
AnnotationService::Response guarded(F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        return error_response(e);
    } catch (const json::exception& e) {
        return error_response(Error(ErrorKind::Parse, std::string("malformed request: ") + e.what()));
    }
}

json bbox_json(const BBox& b) { return {b.x, b.y, b.w, b.h}; }

json points_json(const std::vector<Point2>& pts) {
    json out = json::array();
    for (const auto& p : pts) out.push_back({p.x, p.y});
    return out;
}

}  // namespace

AnnotationService::AnnotationService(std::shared_ptr<const Model> model, std::shared_ptr<const Dataset> frames)
    : model_(std::move(model)), frames_(std::move(frames)) {
    if (!model_ || !frames_) fail(ErrorKind::Contract, "service needs a model and a frame store");
    model_->validate();
    if (frames_->schema.n_points != model_->n_points())
        fail(ErrorKind::Schema, "frame store and model landmark counts differ");
    transitions_ = build_transitions(model_->classes, model_->temporal.tau_hmm, model_->temporal.self_weight,
                                     model_->temporal.neighbor_weight);
}

std::shared_ptr<AnnotationSession> AnnotationService::find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorKind::NotFound, "unknown session '" + id + "'");
    return it->second;
}

std::shared_ptr<const AnnotationSession> AnnotationService::session(const std::string& id) const { return find(id); }

Shape AnnotationService::frame_shape(const SessionFrame& f) const {
    const auto& rec = frames_->records[f.record];
    if (f.decoded_class) {
        Eigen::VectorXd onehot = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model_->n_classes()));
        onehot[static_cast<Eigen::Index>(*f.decoded_class)] = 1.0;
        return predict_from_posterior(*model_, PosePosterior(std::move(onehot)), rec.image, rec.annotation.bbox)
            .canonical;
    }
    return predict_from_posterior(*model_, f.current, rec.image, rec.annotation.bbox).canonical;
}

json AnnotationService::frame_payload(const AnnotationSession& s, std::size_t t) const {
    const SessionFrame& f = s.frames[t];
    const auto& rec = frames_->records[f.record];
    json top = json::array();
    for (const auto& [k, p] : top_k(f.current, 5)) top.push_back({{"class", k}, {"prob", p}});
    json out = {{"index", t},
                {"image_ref", rec.annotation.image_ref},
                {"bbox", bbox_json(rec.annotation.bbox)},
                {"map_class", map_class(f.current)},
                {"landmarks", points_json(denormalize_shape(frame_shape(f), rec.annotation.bbox))},
                {"top_k", std::move(top)},
                {"evidence_count", f.evidence.size()},
                {"version", s.version}};
    if (rec.frame_index) out["frame_index"] = *rec.frame_index;
    if (f.decoded_class) out["decoded_class"] = *f.decoded_class;
    return out;
}

AnnotationService::Response AnnotationService::model_info() const {
    return {200,
            {{"K", model_->n_classes()},
             {"N", model_->n_points()},
             {"D", model_->feature_dim()},
             {"tau", model_->tau},
             {"tau_evidence", model_->tau_evidence},
             {"nose_index", model_->schema.nose_index},
             {"exemplar", model_->classes.exemplar},
             {"has_cascade", !model_->cascade.groups.empty()}}};
}

AnnotationService::Response AnnotationService::create_session(const json& request) {
    return guarded([&]() -> Response {
        std::vector<std::size_t> records;
        std::string source;
        if (request.contains("video_id")) {
            source = request.at("video_id").get<std::string>();
            records = video_frames(*frames_, source);
            if (records.empty()) fail(ErrorKind::NotFound, "unknown video id '" + source + "'");
        } else if (request.contains("image_refs")) {
            for (const auto& ref : request.at("image_refs")) {
                const auto name = ref.get<std::string>();
                std::size_t i = 0;
                while (i < frames_->size() && frames_->records[i].annotation.image_ref != name) ++i;
                if (i == frames_->size()) fail(ErrorKind::NotFound, "unknown image ref '" + name + "'");
                records.push_back(i);
            }
            if (records.empty()) fail(ErrorKind::Contract, "image_refs is empty");
            source = "frames";
        } else {
            fail(ErrorKind::Contract, "request needs video_id or image_refs");
        }

        auto s = std::make_shared<AnnotationSession>();
        s->source = source;
        for (std::size_t r : records) {
            const auto& rec = frames_->records[r];
            SessionFrame f;
            f.record = r;
            f.base = window_posterior(*model_, rec.image, rec.annotation.bbox);
            f.current = f.base;
            s->frames.push_back(std::move(f));
        }
        {
            std::unique_lock lock(sessions_mutex_);
            s->id = "s" + std::to_string(next_id_++);
            sessions_.emplace(s->id, s);
        }
        return get_session(s->id);
    });
}

AnnotationService::Response AnnotationService::get_session(const std::string& id) const {
    return guarded([&]() -> Response {
        auto s = find(id);
        std::shared_lock lock(s->mutex);
        json frames = json::array();
        for (std::size_t t = 0; t < s->frames.size(); ++t) frames.push_back(frame_payload(*s, t));
        return {200, {{"session_id", s->id}, {"source", s->source}, {"version", s->version}, {"frames", frames}}};
    });
}

AnnotationService::Response AnnotationService::heatmap(const std::string& id, std::size_t frame, std::size_t landmark,
                                                       int resolution) const {
    return guarded([&]() -> Response {
        auto s = find(id);
        if (resolution < 1 || resolution > 256) fail(ErrorKind::Contract, "res must be in [1, 256]");
        if (landmark >= model_->n_points()) fail(ErrorKind::Contract, "landmark index out of range");
        std::shared_lock lock(s->mutex);
        if (frame >= s->frames.size()) fail(ErrorKind::NotFound, "frame " + std::to_string(frame) + " not in session");
        const SessionFrame& f = s->frames[frame];
        const BBox& box = frames_->records[f.record].annotation.bbox;
        // The grid spans the frame's window.
        const double diag = box.diagonal();
        GridSpec grid;
        grid.x_min = -0.5 * box.w / diag;
        grid.x_max = 0.5 * box.w / diag;
        grid.y_min = -0.5 * box.h / diag;
        grid.y_max = 0.5 * box.h / diag;
        grid.nx = grid.ny = resolution;
        const Heatmap h = marginal_heatmap(mixture(f.current, model_->classes), landmark, grid);
        json rows = json::array();
        for (Eigen::Index r = 0; r < h.mass.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < h.mass.cols(); ++c) row.push_back(h.mass(r, c));
            rows.push_back(std::move(row));
        }
        return {200,
                {{"landmark", landmark},
                 {"res", resolution},
                 {"bbox", bbox_json(box)},
                 {"version", s->version},
                 {"grid", std::move(rows)}}};
    });
}

void AnnotationService::run_decode(AnnotationSession& s) const {
    FrameSequence seq;
    for (const auto& f : s.frames) {
        seq.frames.push_back(f.current);
        const auto& rec = frames_->records[f.record];
        seq.frame_indices.push_back(rec.frame_index.value_or(static_cast<int>(seq.frame_indices.size())));
    }
    const DecodedPath path = viterbi(seq, transitions_);
    for (std::size_t t = 0; t < s.frames.size(); ++t) s.frames[t].decoded_class = path.classes[t];
}

AnnotationService::Response AnnotationService::add_evidence(const std::string& id, std::size_t frame,
                                                            const json& request) {
    return guarded([&]() -> Response {
        auto s = find(id);
        std::unique_lock lock(s->mutex);
        if (request.contains("version") && request.at("version").get<std::uint64_t>() != s->version)
            fail(ErrorKind::Conflict, "stale version " + std::to_string(request.at("version").get<std::uint64_t>()) +
                                          "; session is at version " + std::to_string(s->version));
        if (frame >= s->frames.size()) fail(ErrorKind::NotFound, "frame " + std::to_string(frame) + " not in session");
        SessionFrame& f = s->frames[frame];
        const BBox& box = frames_->records[f.record].annotation.bbox;

        Evidence e;
        e.landmark = request.at("landmark").get<std::size_t>();
        if (e.landmark >= model_->n_points()) fail(ErrorKind::Contract, "landmark index out of range");
        const Point2 pixel{request.at("x").get<double>(), request.at("y").get<double>()};
        if (!std::isfinite(pixel.x) || !std::isfinite(pixel.y)) fail(ErrorKind::Contract, "non-finite click");
        e.position = to_canonical(pixel, box);
        // Tolerance is given in pixels like the click itself.
        e.tolerance = request.contains("tolerance") ? request.at("tolerance").get<double>() / box.diagonal()
                                                    : model_->tau_evidence;

        std::vector<Evidence> all = f.evidence;
        all.push_back(e);
        PosePosterior updated = condition_all(f.base, model_->classes, all);  // throws before any mutation
        f.evidence = std::move(all);
        f.current = std::move(updated);
        for (auto& other : s->frames) other.decoded_class.reset();
        if (request.value("decode", false)) run_decode(*s);
        ++s->version;
        return {200, frame_payload(*s, frame)};
    });
}

AnnotationService::Response AnnotationService::decode(const std::string& id) {
    return guarded([&]() -> Response {
        auto s = find(id);
        std::unique_lock lock(s->mutex);
        run_decode(*s);
        ++s->version;
        json frames = json::array();
        json path = json::array();
        for (std::size_t t = 0; t < s->frames.size(); ++t) {
            frames.push_back(frame_payload(*s, t));
            path.push_back(*s->frames[t].decoded_class);
        }
        return {200, {{"session_id", s->id}, {"version", s->version}, {"path", path}, {"frames", frames}}};
    });
}

AnnotationService::Response AnnotationService::export_annotations(const std::string& id) const {
    return guarded([&]() -> Response {
        auto s = find(id);
        std::shared_lock lock(s->mutex);
        json files = json::object();
        json manifest = json::array();
        for (std::size_t t = 0; t < s->frames.size(); ++t) {
            const SessionFrame& f = s->frames[t];
            const auto& rec = frames_->records[f.record];
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%04zu.pts", t);
            files[name] = serialize_pts(denormalize_shape(frame_shape(f), rec.annotation.bbox));
            json entry = {{"index", t},
                          {"file", name},
                          {"image_ref", rec.annotation.image_ref},
                          {"evidence_count", f.evidence.size()}};
            if (rec.frame_index) entry["frame_index"] = *rec.frame_index;
            manifest.push_back(std::move(entry));
        }
        return {200,
                {{"session_id", s->id},
                 {"version", s->version},
                 {"manifest", std::move(manifest)},
                 {"files", std::move(files)}}};
    });
}

void mount_routes(httplib::Server& server, AnnotationService& service) {
    auto reply = [](httplib::Response& res, const AnnotationService::Response& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto parse_body = [](const httplib::Request& req) {
        return req.body.empty() ? json::object() : json::parse(req.body);
    };
    auto bad_request = [reply](httplib::Response& res, const std::string& msg) {
        reply(res, error_response(Error(ErrorKind::Parse, msg)));
    };

    server.Get("/model/info", [&service, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, service.model_info());
    });
    server.Post("/sessions", [&service, reply, parse_body, bad_request](const httplib::Request& req,
                                                                          httplib::Response& res) {
        try {
            reply(res, service.create_session(parse_body(req)));
        } catch (const json::exception& e) {
            bad_request(res, std::string("malformed JSON body: ") + e.what());
        }
    });
    server.Get(R"(/sessions/([^/]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.get_session(req.matches[1]));
    });
    server.Get(R"(/sessions/([^/]+)/frames/(\d+)/heatmap)",
               [&service, reply, bad_request](const httplib::Request& req, httplib::Response& res) {
                   if (!req.has_param("landmark")) return bad_request(res, "missing query parameter 'landmark'");
                   try {
                       const auto landmark = std::stoul(req.get_param_value("landmark"));
                       const int r = req.has_param("res") ? std::stoi(req.get_param_value("res")) : 32;
                       reply(res, service.heatmap(req.matches[1], std::stoul(req.matches[2]), landmark, r));
                   } catch (const std::logic_error&) {
                       bad_request(res, "landmark and res must be integers");
                   }
               });
    server.Post(R"(/sessions/([^/]+)/frames/(\d+)/evidence)",
                [&service, reply, parse_body, bad_request](const httplib::Request& req, httplib::Response& res) {
                    try {
                        reply(res, service.add_evidence(req.matches[1], std::stoul(req.matches[2]), parse_body(req)));
                    } catch (const json::exception& e) {
                        bad_request(res, std::string("malformed JSON body: ") + e.what());
                    }
                });
    server.Post(R"(/sessions/([^/]+)/decode)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.decode(req.matches[1]));
    });
    server.Get(R"(/sessions/([^/]+)/export)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.export_annotations(req.matches[1]));
    });
}

}  // namespace kalign
