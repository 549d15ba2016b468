#pragma once

#include <mutex>
#include <shared_mutex>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "pointbrush/error.hpp"
#include "pointbrush/frameset_io.hpp"
#include "pointbrush/session.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen
// headers parsed later.
#include <httplib.h>

namespace pointbrush {

/// HTTP front end for one Session.
///
///   GET  /api/sequence          {frame_count, fps, point_counts}
///   GET  /api/frame/{i}         .pcb bytes (application/octet-stream)
///   GET  /api/mask/{i}          .lbl bytes (application/octet-stream)
///   POST /api/brush             {frame, center: [x, y, z], radius, label} -> {changed}
///   POST /api/undo              -> {frame}
///   POST /api/propagate         {from, to, mode?} -> [PropagationReport]
///   GET|PUT /api/palette        [{id, name, color: [r, g, b]}]
///   GET|PUT /api/params         propagation parameters (PUT merges fields)
///
/// Mutations take an exclusive lock and run one at a time; reads share a lock
/// and only see fully applied mutations. With autosave on, every successful
/// mutation is flushed to the .lbl sidecars and session.json.
class SessionService {
 public:
  struct Response {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
  };

  explicit SessionService(Session session, bool autosave = true)
      : session_(std::move(session)), autosave_(autosave && session_.sequence().has_value()) {}

  Response sequence_info() {
    return guarded_read([&] {
      nlohmann::ordered_json j;
      j["frame_count"] = session_.frame_count();
      j["fps"] = session_.fps();
      nlohmann::ordered_json counts = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < session_.frame_count(); ++i) counts.push_back(session_.point_count(i));
      j["point_counts"] = std::move(counts);
      return json_response(j);
    });
  }

  Response frame(std::size_t i) {
    return guarded_read([&] {
      Response r;
      r.content_type = "application/octet-stream";
      if (const auto& seq = session_.sequence()) {
        if (i >= seq->size()) throw Error("frame index out of range: " + std::to_string(i));
        const Bytes data = read_file(seq->frame_path(i));
        r.body.assign(data.begin(), data.end());
      } else {
        const Bytes data = write_frame(*session_.frames().cloud(i), synthesized_timestamp(i, session_.fps()));
        r.body.assign(data.begin(), data.end());
      }
      return r;
    });
  }

  Response mask(std::size_t i) {
    return guarded_read([&] {
      Response r;
      r.content_type = "application/octet-stream";
      const Bytes data = write_mask(session_.mask(i));
      r.body.assign(data.begin(), data.end());
      return r;
    });
  }

  Response brush(const std::string& body) {
    return guarded_write([&] {
      const auto j = parse_object(body);
      const auto c = j.at("center").get<std::vector<double>>();
      if (c.size() != 3) throw Error("center must have 3 elements");
      const int label = j.at("label").get<int>();
      if (label < 0 || label > 65535) throw Error("label not in palette");
      const std::size_t changed = session_.apply_brush(j.at("frame").get<std::size_t>(), Vec3(c[0], c[1], c[2]),
                                                       j.at("radius").get<double>(), static_cast<LabelId>(label));
      nlohmann::ordered_json out;
      out["changed"] = changed;
      return json_response(out);
    });
  }

  Response undo() {
    return guarded_write([&] {
      nlohmann::ordered_json out;
      out["frame"] = session_.undo();
      return json_response(out);
    });
  }

  Response propagate(const std::string& body) {
    return guarded_write([&] {
      const auto j = parse_object(body);
      PropagationParams params = session_.params();
      if (j.contains("mode")) params.icp.mode = parse_match_mode(j.at("mode").get<std::string>());
      const auto reports =
          session_.run_propagation(j.at("from").get<std::size_t>(), j.at("to").get<std::size_t>(), params);
      return json_response(to_json(reports));
    });
  }

  Response palette() {
    return guarded_read([&] { return json_response(to_json(session_.palette())); });
  }

  Response put_palette(const std::string& body) {
    return guarded_write([&] {
      session_.set_palette(palette_from_json(parse(body)));
      return json_response(to_json(session_.palette()));
    });
  }

  Response params() {
    return guarded_read([&] { return json_response(to_json(session_.params())); });
  }

  Response put_params(const std::string& body) {
    return guarded_write([&] {
      session_.set_params(merge_params(session_.params(), parse_object(body)));
      return json_response(to_json(session_.params()));
    });
  }

  void mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server.Get("/api/sequence", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, sequence_info());
    });
    server.Get(R"(/api/frame/(\d+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, with_index(req, [this](std::size_t i) { return frame(i); }));
    });
    server.Get(R"(/api/mask/(\d+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, with_index(req, [this](std::size_t i) { return mask(i); }));
    });
    server.Post("/api/brush", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, brush(req.body));
    });
    server.Post("/api/undo", [this, send](const httplib::Request&, httplib::Response& res) { send(res, undo()); });
    server.Post("/api/propagate", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, propagate(req.body));
    });
    server.Get("/api/palette", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, palette());
    });
    server.Put("/api/palette", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, put_palette(req.body));
    });
    server.Get("/api/params", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, params());
    });
    server.Put("/api/params", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, put_params(req.body));
    });
  }

  /// Direct access for embedding and tests; not synchronized.
  Session& session() noexcept { return session_; }

 private:
  static nlohmann::json parse(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw Error("request body is not valid JSON");
    return j;
  }

  static nlohmann::json parse_object(const std::string& body) {
    auto j = parse(body);
    if (!j.is_object()) throw Error("request body must be a JSON object");
    return j;
  }

  static Response json_response(const nlohmann::ordered_json& j, int status = 200) {
    return {status, j.dump(), "application/json"};
  }

  static Response error_response(const std::string& message) {
    const int status = message.starts_with("frame index out of range") ? 404 : 400;
    nlohmann::ordered_json j;
    j["error"] = message;
    return json_response(j, status);
  }

  template <typename F>
  static Response with_index(const httplib::Request& req, F&& f) {
    try {
      return f(static_cast<std::size_t>(std::stoull(req.matches[1].str())));
    } catch (const std::out_of_range&) {
      return error_response("frame index out of range: " + req.matches[1].str());
    }
  }

  template <typename F>
  Response guarded_read(F&& f) {
    std::shared_lock lock(mutex_);
    return run(std::forward<F>(f));
  }

  template <typename F>
  Response guarded_write(F&& f) {
    std::unique_lock lock(mutex_);
    Response r = run(std::forward<F>(f));
    if (r.status == 200 && autosave_) {
      try {
        session_.save();
      } catch (const std::exception& e) {
        return error_response(std::string("save failed: ") + e.what());
      }
    }
    return r;
  }

  template <typename F>
  static Response run(F&& f) {
    try {
      return f();
    } catch (const nlohmann::json::exception& e) {
      return error_response(std::string("bad request: ") + e.what());
    } catch (const std::exception& e) {
      return error_response(e.what());
    }
  }

  Session session_;
  bool autosave_;
  std::shared_mutex mutex_;
};

}  // namespace pointbrush
