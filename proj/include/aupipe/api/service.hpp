#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "aupipe/analytics/pain.hpp"
#include "aupipe/data/store.hpp"
#include "aupipe/eval/evaluator.hpp"
#include "aupipe/image.hpp"

namespace aupipe {

struct ServiceOptions {
  std::vector<PainReport> reports;
  std::vector<int> association_aus = pain_icu_aus();
  AssociationOptions association;
  std::filesystem::path metrics_path;  // latest EvalReport JSON
  std::filesystem::path static_dir;    // console files, served at /
  bool cors = true;
  std::optional<std::uint64_t> shuffle_seed;  // set: random per-annotator frame order
  std::function<Timestamp()> clock = [] {
    return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
  };
};

/// HTTP adapter over an AnnotationStore. Every body is the JSON of a direct
/// datahub or analytics call.
class AnnotationService {
 public:
  AnnotationService(AnnotationStore& store, ServiceOptions opt) : store_(store), opt_(std::move(opt)) {}

  nlohmann::json au_schema() const {
    auto out = nlohmann::json::array();
    for (int au : pain_icu_aus()) out.push_back({{"au_id", au}, {"description", au_description(au)}});
    return out;
  }

  AssociationTable association() const {
    return association_table(labeled_frames(store_), opt_.reports, opt_.association_aus, opt_.association);
  }

  void install(httplib::Server& server) {
    server.Get("/api/frames/next", [this](const httplib::Request& req, httplib::Response& res) {
      const auto annotator = req.get_param_value("annotator");
      if (annotator.empty()) return error(res, 400, "missing annotator");
      auto next = store_.next_for(annotator, opt_.shuffle_seed);
      if (!next) {
        res.status = 204;
        return;
      }
      json(res, 200,
           {{"frame_id", next->frame_id},
            {"image_url", "/api/frames/" + next->frame_id + "/image"},
            {"au_schema", au_schema()}});
    });

    server.Post("/api/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        return error(res, 400, std::string("malformed JSON: ") + e.what());
      }
      if (!body.is_object()) return error(res, 400, "body must be a JSON object");
      if (!body.contains("submitted_at")) body["submitted_at"] = format_time(opt_.clock());
      AnnotationDoc doc;
      try {
        doc = body.get<AnnotationDoc>();
      } catch (const nlohmann::json::exception& e) {
        return error(res, 400, std::string("malformed annotation: ") + e.what());
      } catch (const ValidationError& e) {
        return error(res, 422, e.what());
      }
      if (!store_.has_frame(doc.frame_id)) return error(res, 404, "unknown frame '" + doc.frame_id + "'");
      try {
        auto r = store_.upsert(doc);
        json(res, r.created ? 201 : 200, r.doc);
      } catch (const ValidationError& e) {
        error(res, 422, e.what());
      }
    });

    server.Get(R"(/api/frames/([^/]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!store_.has_frame(id)) return error(res, 404, "unknown frame '" + id + "'");
      const auto& path = store_.frame(id).image_path;
      std::vector<std::uint8_t> bytes;
      try {
        bytes = detail::read_bytes(path);
      } catch (const Error&) {
        return error(res, 404, "image for frame '" + id + "' is unavailable");
      }
      res.status = 200;
      res.set_content(std::string(bytes.begin(), bytes.end()), image_content_type(path));
    });

    server.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
      json(res, 200, store_.progress());
    });

    server.Get("/api/analysis/association", [this](const httplib::Request&, httplib::Response& res) {
      json(res, 200, association());
    });

    server.Get("/api/metrics/latest", [this](const httplib::Request&, httplib::Response& res) {
      if (opt_.metrics_path.empty() || !std::filesystem::exists(opt_.metrics_path))
        return error(res, 404, "no evaluation has run");
      try {
        std::ifstream in(opt_.metrics_path);
        json(res, 200, nlohmann::json::parse(in).get<EvalReport>());
      } catch (const nlohmann::json::exception& e) {
        error(res, 500, std::string("unreadable metrics: ") + e.what());
      }
    });

    if (opt_.cors) {
      server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      });
      server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    }
    if (!opt_.static_dir.empty() && !server.set_mount_point("/", opt_.static_dir.string()))
      throw NotFoundError("static directory " + opt_.static_dir.string() + " does not exist");
  }

 private:
  static void json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& message) {
    json(res, status, {{"error", message}});
  }

  AnnotationStore& store_;
  ServiceOptions opt_;
};

}  // namespace aupipe
