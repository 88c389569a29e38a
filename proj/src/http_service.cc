#include "vector/service.h"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <httplib.h>

#include "vector/errors.h"
#include "vector/json_convert.h"

namespace vec {
namespace {

using httplib::Request;
using httplib::Response;

struct HttpError : std::runtime_error {
  HttpError(int status, const std::string& message)
      : std::runtime_error(message), status(status) {}
  int status;
};

// Immutable read model, rebuilt after every mutation.
struct View {
  Dataset dataset;  // effective dataset with the latest run's finals
  std::optional<int> run_id;
  std::vector<ResidualRecord> initial;
  std::vector<ResidualRecord> final;
  std::unordered_map<std::string, size_t> camera_index;
  std::unordered_map<std::string, size_t> track_index;
};

bool Present(const View& view, const ResidualRecord& r) {
  return view.camera_index.count(r.camera_id) && view.track_index.count(r.track_id);
}

std::shared_ptr<const View> BuildView(const Session& session) {
  auto view = std::make_shared<View>();
  view->dataset = session.CurrentView();
  for (size_t i = 0; i < view->dataset.cameras.size(); ++i) {
    view->camera_index.emplace(view->dataset.cameras[i].id, i);
  }
  for (size_t i = 0; i < view->dataset.tracks.size(); ++i) {
    view->track_index.emplace(view->dataset.tracks[i].id, i);
  }
  if (const RunRecord* run = session.LatestRun()) {
    view->run_id = run->id;
    for (const auto& r : run->result.residuals_initial) {
      if (Present(*view, r)) view->initial.push_back(r);
    }
    for (const auto& r : run->result.residuals_final) {
      if (Present(*view, r)) view->final.push_back(r);
    }
  } else {
    const CameraLookup lookup(view->dataset.cameras);
    for (const auto& track : view->dataset.tracks) {
      for (const auto& obs : track.observations) {
        const Camera& camera = lookup.At(obs.camera_id);
        try {
          view->initial.push_back(ComputeResidual(camera, camera.pose_initial,
                                                  track.point_initial, obs, track.id,
                                                  ResidualKind::kInitial));
        } catch (const CheiralityViolation&) {
          // No residual for a point behind the camera.
        }
      }
    }
  }
  return view;
}

void Reply(Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void WarnUnknownParams(const Request& req, Response& res,
                       std::initializer_list<std::string_view> known) {
  std::set<std::string> unknown;
  for (const auto& [name, value] : req.params) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      unknown.insert(name);
    }
  }
  if (unknown.empty()) return;
  std::string text = "ignored unknown query parameter(s):";
  for (const auto& name : unknown) text += " " + name;
  res.set_header("X-Vector-Warning", text);
}

Json ParseBody(const Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::exception& e) {
    throw HttpError(400, std::string("malformed JSON body: ") + e.what());
  }
}

FilterState FilterParam(const Request& req) {
  if (!req.has_param("filter")) return {};
  try {
    return FilterStateFromJson(Json::parse(req.get_param_value("filter")));
  } catch (const Json::exception& e) {
    throw HttpError(400, std::string("malformed filter: ") + e.what());
  } catch (const ValueError& e) {
    throw HttpError(400, std::string("invalid filter: ") + e.what());
  }
}

int IntParam(const Request& req, const std::string& name) {
  if (!req.has_param(name)) throw HttpError(400, "missing parameter '" + name + "'");
  const std::string text = req.get_param_value(name);
  int value = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw HttpError(400, "parameter '" + name + "' is not an integer");
  }
  return value;
}

std::vector<ResidualRecord> Filtered(const View& view, const FilterState& filter) {
  std::vector<ResidualRecord> all = ApplyFilter(view.initial, filter);
  const auto final = ApplyFilter(view.final, filter);
  all.insert(all.end(), final.begin(), final.end());
  return all;
}

Json PointArray(const Eigen::Vector3d& p) { return Json::array({p.x(), p.y(), p.z()}); }

Json CameraJson(const Camera& camera) {
  return {{"id", camera.id},
          {"image_ref", camera.image_ref},
          {"intrinsics", camera.intrinsics},
          {"initial", camera.pose_initial},
          {"final", camera.pose_final ? Json(*camera.pose_final) : Json()}};
}

Json ConcentrationOrNull(std::span<const ResidualRecord> records) {
  try {
    return AngularConcentration(records);
  } catch (const EmptyInput&) {
    return nullptr;
  }
}

Json StatusJson(const JobStatus& s) {
  return {{"job_id", s.job_id},
          {"state", std::string(ToString(s.state))},
          {"progress", {{"iteration", s.iteration}, {"cost", s.cost}}},
          {"result_ref", s.result_ref ? Json(*s.result_ref) : Json()},
          {"error", s.error.empty() ? Json() : Json(s.error)}};
}

std::string ContentType(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  if (ext == ".gif") return "image/gif";
  return "application/octet-stream";
}

}  // namespace

struct Service::Impl {
  Session session;
  std::string session_path;
  std::filesystem::path image_root;

  std::shared_mutex session_mutex;  // guards session
  std::mutex writer_mutex;          // one edit or BA submission at a time
  std::mutex view_mutex;
  std::shared_ptr<const View> view;

  JobManager jobs;
  httplib::Server server;
  std::thread listener;

  Impl(Session s, std::string path)
      : session(std::move(s)), session_path(std::move(path)) {
    std::filesystem::path cameras = session.base_ref().cameras_path;
    if (cameras.is_relative() && !session_path.empty()) {
      cameras = std::filesystem::path(session_path).parent_path() / cameras;
    }
    image_root = cameras.parent_path();
    view = BuildView(session);
    Routes();
  }

  std::shared_ptr<const View> CurrentView() {
    std::lock_guard lock(view_mutex);
    return view;
  }

  // Caller holds session_mutex exclusively.
  void Commit() {
    if (!session_path.empty()) session.Save(session_path);
    auto next = BuildView(session);
    std::lock_guard lock(view_mutex);
    view = std::move(next);
  }

  std::unique_lock<std::mutex> AcquireWriter() {
    std::unique_lock lock(writer_mutex, std::try_to_lock);
    if (!lock.owns_lock()) throw HttpError(409, "another edit is in progress");
    if (jobs.Active()) throw HttpError(409, "a bundle adjustment job is running");
    return lock;
  }

  template <typename Fn>
  static httplib::Server::Handler Wrap(Fn fn) {
    return [fn](const Request& req, Response& res) {
      try {
        fn(req, res);
      } catch (const HttpError& e) {
        Reply(res, e.status, {{"error", e.what()}});
      } catch (const UnknownId& e) {
        Reply(res, 404, {{"error", e.what()}});
      } catch (const UnknownRun& e) {
        Reply(res, 404, {{"error", e.what()}});
      } catch (const UnknownCameraRef& e) {
        Reply(res, 404, {{"error", e.what()}});
      } catch (const DataError& e) {
        Reply(res, 422, {{"error", e.what()}});
      } catch (const NumericalError& e) {
        Reply(res, 500, {{"error", e.what()}});
      } catch (const std::exception& e) {
        Reply(res, 500, {{"error", e.what()}});
      }
    };
  }

  EditOutcome Edit(EditKind kind, const std::string& target) {
    auto writer = AcquireWriter();
    std::unique_lock lock(session_mutex);
    EditOutcome outcome = session.Apply(kind, target);
    Commit();
    return outcome;
  }

  void Routes() {
    server.Get("/api/scene", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      auto v = CurrentView();
      Json cameras = Json::array();
      for (const auto& camera : v->dataset.cameras) cameras.push_back(CameraJson(camera));
      const CameraLookup lookup(v->dataset.cameras);
      Json points = Json::array();
      for (const auto& track : v->dataset.tracks) {
        const double angle = TriangulationAngle(track, lookup);
        points.push_back(
            {{"track_id", track.id},
             {"initial", PointArray(track.point_initial)},
             {"final", track.point_final ? PointArray(*track.point_final) : Json()},
             {"num_observations", track.observations.size()},
             {"ill_posed", angle < kLowTriangulationAngleDeg}});
      }
      Reply(res, 200, {{"run", v->run_id ? Json(*v->run_id) : Json()},
                       {"cameras", cameras},
                       {"points", points}});
    }));

    server.Get("/api/images", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {"filter"});
      const FilterState filter = FilterParam(req);
      auto v = CurrentView();
      const auto residuals = Filtered(*v, filter);
      std::unordered_map<std::string, std::vector<ResidualRecord>> by_camera;
      for (const auto& r : residuals) by_camera[r.camera_id].push_back(r);
      std::unordered_map<std::string, size_t> observations;
      for (const auto& track : v->dataset.tracks) {
        for (const auto& obs : track.observations) ++observations[obs.camera_id];
      }
      Json images = Json::array();
      for (const auto& camera : v->dataset.cameras) {
        images.push_back({{"camera_id", camera.id},
                          {"image_ref", camera.image_ref},
                          {"width", camera.intrinsics.width},
                          {"height", camera.intrinsics.height},
                          {"num_observations", observations[camera.id]},
                          {"summary", SummarizeImage(camera.id, by_camera[camera.id])}});
      }
      Reply(res, 200, {{"run", v->run_id ? Json(*v->run_id) : Json()},
                       {"images", images}});
    }));

    server.Get(R"(/api/images/([^/]+))", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {"filter"});
      const FilterState filter = FilterParam(req);
      const std::string id = req.matches[1];
      auto v = CurrentView();
      auto it = v->camera_index.find(id);
      if (it == v->camera_index.end()) throw UnknownId("unknown camera '" + id + "'");
      std::vector<ResidualRecord> residuals;
      for (auto& r : Filtered(*v, filter)) {
        if (r.camera_id == id) residuals.push_back(std::move(r));
      }
      std::set<std::string> track_ids;
      for (const auto& track : v->dataset.tracks) {
        for (const auto& obs : track.observations) {
          if (obs.camera_id == id) track_ids.insert(track.id);
        }
      }
      Reply(res, 200, {{"camera", CameraJson(v->dataset.cameras[it->second])},
                       {"track_ids", track_ids},
                       {"residuals", residuals},
                       {"summary", SummarizeImage(id, residuals)}});
    }));

    server.Get(R"(/api/tracks/([^/]+))", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {"filter"});
      const FilterState filter = FilterParam(req);
      const std::string id = req.matches[1];
      auto v = CurrentView();
      auto it = v->track_index.find(id);
      if (it == v->track_index.end()) throw UnknownId("unknown track '" + id + "'");
      const Track& track = v->dataset.tracks[it->second];
      Json observations = Json::array();
      for (const auto& obs : track.observations) {
        observations.push_back({{"camera_id", obs.camera_id},
                                {"pixel", {obs.pixel.x(), obs.pixel.y()}}});
      }
      std::vector<ResidualRecord> residuals, initial, final;
      for (auto& r : Filtered(*v, filter)) {
        if (r.track_id != id) continue;
        (r.kind == ResidualKind::kInitial ? initial : final).push_back(r);
        residuals.push_back(std::move(r));
      }
      const double angle = TriangulationAngle(track, CameraLookup(v->dataset.cameras));
      Reply(res, 200,
            {{"track_id", track.id},
             {"observations", observations},
             {"point",
              {{"initial", PointArray(track.point_initial)},
               {"final", track.point_final ? PointArray(*track.point_final) : Json()}}},
             {"residuals", residuals},
             {"slopes", MakeSlopePairs(initial, final)},
             {"triangulation_angle_deg", angle},
             {"ill_posed", angle < kLowTriangulationAngleDeg}});
    }));

    server.Get("/api/stats", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {"filter", "camera_id", "track_id"});
      const FilterState filter = FilterParam(req);
      auto v = CurrentView();
      std::vector<ResidualRecord> initial, final, all;
      for (auto& r : Filtered(*v, filter)) {
        if (req.has_param("camera_id") && r.camera_id != req.get_param_value("camera_id")) continue;
        if (req.has_param("track_id") && r.track_id != req.get_param_value("track_id")) continue;
        (r.kind == ResidualKind::kInitial ? initial : final).push_back(r);
        all.push_back(std::move(r));
      }
      Reply(res, 200,
            {{"run", v->run_id ? Json(*v->run_id) : Json()},
             {"filter", filter},
             {"count", all.size()},
             {"counts", {{"initial", initial.size()}, {"final", final.size()}}},
             {"histogram", DefaultHistogram(all)},
             {"radial", Radial(all)},
             {"concentration",
              {{"initial", ConcentrationOrNull(initial)},
               {"final", ConcentrationOrNull(final)}}}});
    }));

    auto rank = [this](bool tracks) {
      return Wrap([this, tracks](const Request& req, Response& res) {
        WarnUnknownParams(req, res, {"key", "limit"});
        const RankKey key = req.has_param("key")
                                ? ParseKey(req.get_param_value("key"))
                                : RankKey::kMaxFinalLength;
        const size_t limit = req.has_param("limit")
                                 ? static_cast<size_t>(std::max(0, IntParam(req, "limit")))
                                 : std::numeric_limits<size_t>::max();
        auto v = CurrentView();
        if (!v->run_id) throw MissingFinalState("no bundle adjustment run recorded yet");
        Json items;
        if (tracks) {
          auto scores = RankTracks(v->initial, v->final, key);
          if (scores.size() > limit) scores.resize(limit);
          items = scores;
        } else {
          auto scores = RankImages(v->initial, v->final, key);
          if (scores.size() > limit) scores.resize(limit);
          items = scores;
        }
        Reply(res, 200, {{"run", *v->run_id},
                         {"key", std::string(ToString(key))},
                         {tracks ? "tracks" : "images", items}});
      });
    };
    server.Get("/api/rank/tracks", rank(true));
    server.Get("/api/rank/images", rank(false));

    server.Post("/api/edits", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      const Json body = ParseBody(req);
      EditKind kind;
      std::string target;
      try {
        kind = EditKindFromString(body.at("kind").get<std::string>());
        target = body.at("target_id").get<std::string>();
      } catch (const Json::exception& e) {
        throw HttpError(400, std::string("edit needs {kind, target_id}: ") + e.what());
      } catch (const ValueError& e) {
        throw HttpError(400, e.what());
      }
      Reply(res, 200, Edit(kind, target));
    }));

    server.Delete(R"(/api/tracks/([^/]+))", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      Reply(res, 200, Edit(EditKind::kDeleteTrack, req.matches[1]));
    }));

    server.Delete(R"(/api/cameras/([^/]+))", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      Reply(res, 200, Edit(EditKind::kDeleteCamera, req.matches[1]));
    }));

    server.Post("/api/ba/run", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      const Json body = ParseBody(req);
      BAConfig config;
      try {
        config = BAConfigFromJson(body.contains("config") ? body.at("config") : Json());
      } catch (const ValueError& e) {
        throw HttpError(400, std::string("invalid BA config: ") + e.what());
      }
      auto writer = AcquireWriter();
      RunSnapshot snapshot;
      {
        std::shared_lock lock(session_mutex);
        snapshot = session.Snapshot();
      }
      const std::string job_id = jobs.Submit(
          [this, snapshot = std::move(snapshot), config](const JobManager::Progress& progress) {
            RunRecord run = ExecuteRun(snapshot, config, progress);
            std::unique_lock lock(session_mutex);
            const int id = session.Record(std::move(run)).id;
            Commit();
            return id;
          });
      Reply(res, 202, StatusJson(*jobs.Status(job_id)));
    }));

    server.Get(R"(/api/jobs/([^/]+))", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      auto status = jobs.Status(req.matches[1]);
      if (!status) throw UnknownId("unknown job '" + std::string(req.matches[1]) + "'");
      Reply(res, 200, StatusJson(*status));
    }));

    server.Post(R"(/api/jobs/([^/]+)/cancel)", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      const std::string id = req.matches[1];
      if (!jobs.Status(id)) throw UnknownId("unknown job '" + id + "'");
      if (!jobs.Cancel(id)) throw HttpError(409, "job '" + id + "' already finished");
      Reply(res, 200, StatusJson(*jobs.Status(id)));
    }));

    server.Get("/api/runs", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      std::shared_lock lock(session_mutex);
      Json runs = Json::array();
      for (const auto& run : session.runs()) {
        Json summary = BAResultSummary(run.result);
        summary["id"] = run.id;
        summary["edit_count"] = run.edit_count;
        summary["digest"] = run.digest;
        runs.push_back(std::move(summary));
      }
      Reply(res, 200, {{"edit_count", session.edit_log().size()}, {"runs", runs}});
    }));

    server.Get(R"(/api/runs/(\d+))", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {});
      std::shared_lock lock(session_mutex);
      const RunRecord& run = session.FindRun(std::stoi(req.matches[1]));
      Json summary = BAResultSummary(run.result);
      summary["id"] = run.id;
      summary["edit_count"] = run.edit_count;
      summary["digest"] = run.digest;
      summary["config"] = run.config;
      Reply(res, 200, summary);
    }));

    server.Get("/api/compare", Wrap([this](const Request& req, Response& res) {
      WarnUnknownParams(req, res, {"a", "b"});
      const int a = IntParam(req, "a");
      const int b = IntParam(req, "b");
      std::shared_lock lock(session_mutex);
      Reply(res, 200, session.Compare(a, b));
    }));

    server.Get(R"(/static/images/(.+))", Wrap([this](const Request& req, Response& res) {
      const std::string ref = req.matches[1];
      auto v = CurrentView();
      bool referenced = false;
      for (const auto& camera : v->dataset.cameras) referenced |= camera.image_ref == ref;
      if (!referenced) throw HttpError(404, "image '" + ref + "' is not referenced");
      const std::filesystem::path path = image_root / ref;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw HttpError(404, "image file '" + ref + "' not found");
      std::ostringstream bytes;
      bytes << in.rdbuf();
      res.status = 200;
      res.set_content(bytes.str(), ContentType(path));
    }));
  }

  static RankKey ParseKey(const std::string& text) {
    try {
      return RankKeyFromString(text);
    } catch (const ValueError& e) {
      throw HttpError(400, e.what());
    }
  }
};

Service::Service(Session session, std::string session_path)
    : impl_(std::make_unique<Impl>(std::move(session), std::move(session_path))) {}

Service::~Service() { Stop(); }

int Service::Start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::Listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }
}

void Service::Stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
}

JobManager& Service::jobs() { return impl_->jobs; }

}  // namespace vec
