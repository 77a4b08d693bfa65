#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "kalign/dataset.hpp"
#include "kalign/inference.hpp"
#include "kalign/model.hpp"
#include "kalign/temporal.hpp"

namespace httplib {
class Server;
}

namespace kalign {

struct SessionFrame {
    std::size_t record = 0;
    PosePosterior base;
    PosePosterior current;
    std::vector<Evidence> evidence;  // append-only, canonical frame
    std::optional<std::size_t> decoded_class;
};

struct AnnotationSession {
    std::string id;
    std::string source;
    std::vector<SessionFrame> frames;
    std::uint64_t version = 1;
    mutable std::shared_mutex mutex;
};

// Session-based annotation over a frame store. Handlers return a status code and a JSON body;
// mount_routes() exposes them over HTTP.
class AnnotationService {
public:
    struct Response {
        int status = 200;
        nlohmann::json body;
    };

    AnnotationService(std::shared_ptr<const Model> model, std::shared_ptr<const Dataset> frames);

    Response model_info() const;
    Response create_session(const nlohmann::json& request);
    Response get_session(const std::string& id) const;
    Response heatmap(const std::string& id, std::size_t frame, std::size_t landmark, int resolution) const;
    Response add_evidence(const std::string& id, std::size_t frame, const nlohmann::json& request);
    Response decode(const std::string& id);
    Response export_annotations(const std::string& id) const;

    // Direct access for invariant checks; throws NotFound.
    std::shared_ptr<const AnnotationSession> session(const std::string& id) const;

    const Model& model() const { return *model_; }

private:
    std::shared_ptr<AnnotationSession> find(const std::string& id) const;
    nlohmann::json frame_payload(const AnnotationSession& s, std::size_t t) const;
    Shape frame_shape(const SessionFrame& f) const;
    void run_decode(AnnotationSession& s) const;

    std::shared_ptr<const Model> model_;
    std::shared_ptr<const Dataset> frames_;
    TransitionStructure transitions_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<AnnotationSession>> sessions_;
    std::uint64_t next_id_ = 1;
};

// Routes:
//   GET  /model/info
//   POST /sessions                                  {video_id} or {image_refs: [...]}
//   GET  /sessions/{id}
//   GET  /sessions/{id}/frames/{t}/heatmap?landmark=j&res=R
//   POST /sessions/{id}/frames/{t}/evidence         {landmark, x, y, tolerance?, version?, decode?}
//   POST /sessions/{id}/decode
//   GET  /sessions/{id}/export
void mount_routes(httplib::Server& server, AnnotationService& service);

}  // namespace kalign
