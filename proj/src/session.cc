#include "vector/session.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "vector/digest.h"
#include "vector/errors.h"
#include "vector/json_convert.h"

namespace vec {
namespace {

const Track* FindTrack(const Dataset& dataset, const std::string& id) {
  auto it = std::find_if(dataset.tracks.begin(), dataset.tracks.end(),
                         [&](const Track& t) { return t.id == id; });
  return it == dataset.tracks.end() ? nullptr : &*it;
}

// Observations of `track` that survive the deleted cameras.
size_t SurvivingObservations(const Track& track, const DeletionSet& deleted) {
  return std::count_if(track.observations.begin(), track.observations.end(),
                       [&](const Observation& o) {
                         return !deleted.cameras.contains(o.camera_id);
                       });
}

bool HasCamera(const Dataset& dataset, const std::string& id) {
  return std::any_of(dataset.cameras.begin(), dataset.cameras.end(),
                     [&](const Camera& c) { return c.id == id; });
}

std::vector<std::string> TrackIds(const Dataset& dataset) {
  std::vector<std::string> ids;
  for (const auto& track : dataset.tracks) ids.push_back(track.id);
  return ids;
}

// Ids in `a` but not in `b`, in `a`'s order.
std::vector<std::string> Missing(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
  const std::unordered_set<std::string> in_b(b.begin(), b.end());
  std::vector<std::string> out;
  for (const auto& id : a) {
    if (!in_b.contains(id)) out.push_back(id);
  }
  return out;
}

std::vector<Warning> UnreferencedCameraWarnings(const Dataset& dataset) {
  std::unordered_set<std::string_view> referenced;
  for (const auto& track : dataset.tracks) {
    for (const auto& obs : track.observations) referenced.insert(obs.camera_id);
  }
  std::vector<Warning> warnings;
  for (const auto& camera : dataset.cameras) {
    if (!referenced.contains(camera.id)) {
      warnings.push_back({camera.id, "camera is not referenced by any track"});
    }
  }
  return warnings;
}

double Rms(double sum_sq, size_t n) {
  return n == 0 ? 0.0 : std::sqrt(sum_sq / static_cast<double>(n));
}

std::filesystem::path Resolve(const std::filesystem::path& session_dir,
                              const std::string& path) {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : session_dir / p;
}

Json SessionBody(const BaseRef& base, const std::vector<EditOp>& edits,
                 const std::vector<RunRecord>& runs) {
  Json body;
  body["base"] = {{"cameras_path", base.cameras_path},
                  {"tracks_path", base.tracks_path},
                  {"digest", base.digest}};
  body["edits"] = Json::array();
  for (const auto& op : edits) body["edits"].push_back(op);
  body["runs"] = Json::array();
  for (const auto& run : runs) body["runs"].push_back(RunRecordJson(run));
  return body;
}

std::string Checksum(const Json& body) {
  return Sha256Hex(body.dump());
}

RunRecord RunFromJson(const Json& j, const Dataset& effective) {
  RunRecord run;
  run.id = j.at("id").get<int>();
  run.digest = j.at("digest").get<std::string>();
  run.edit_count = j.at("edit_count").get<size_t>();
  run.config = BAConfigFromJson(j.at("config"));
  BAResult& result = run.result;
  result.cost_trace = j.at("cost_trace").get<std::vector<double>>();
  result.iterations = j.at("iterations").get<int>();
  result.converged = j.at("converged").get<bool>();
  result.termination_reason =
      TerminationFromString(j.at("termination_reason").get<std::string>());
  for (const auto& pose : j.at("poses_final")) {
    result.camera_ids.push_back(pose.at("camera_id").get<std::string>());
    result.poses_final.push_back(pose.get<Pose>());
  }
  for (const auto& point : j.at("points_final")) {
    result.track_ids.push_back(point.at("track_id").get<std::string>());
    result.points_final.push_back(PointFromJson(point));
  }
  if (result.cost_trace.empty()) throw CorruptSessionFile("run has no cost trace");

  result.residuals_initial = ComputeResiduals(effective.cameras, effective.tracks,
                                              ResidualKind::kInitial);
  Dataset final_state = effective;
  ApplyResult(result, &final_state);
  result.residuals_final = ComputeResiduals(
      final_state.cameras, final_state.tracks, ResidualKind::kFinal);
  return run;
}

}  // namespace

std::string_view ToString(EditKind kind) {
  switch (kind) {
    case EditKind::kDeleteTrack: return "delete_track";
    case EditKind::kDeleteCamera: return "delete_camera";
    case EditKind::kRestore: return "restore";
  }
  return "delete_track";
}

EditKind EditKindFromString(std::string_view text) {
  if (text == "delete_track") return EditKind::kDeleteTrack;
  if (text == "delete_camera") return EditKind::kDeleteCamera;
  if (text == "restore") return EditKind::kRestore;
  throw ValueError("unknown edit kind '" + std::string(text) + "'");
}

DeletionSet ReplayEdits(const Dataset& base, std::span<const EditOp> log) {
  DeletionSet deleted;
  for (const auto& op : log) {
    const Track* track = FindTrack(base, op.target_id);
    const bool is_track = track != nullptr;
    const bool is_camera = HasCamera(base, op.target_id);
    switch (op.kind) {
      case EditKind::kDeleteTrack: {
        if (!is_track) throw UnknownId("unknown track '" + op.target_id + "'");
        if (deleted.tracks.contains(op.target_id)) {
          throw AlreadyDeleted("track '" + op.target_id + "' is already deleted");
        }
        if (SurvivingObservations(*track, deleted) < 2) {
          throw AlreadyDeleted("track '" + op.target_id +
                               "' was removed with a deleted camera");
        }
        deleted.tracks.insert(op.target_id);
        break;
      }
      case EditKind::kDeleteCamera: {
        if (!is_camera) throw UnknownId("unknown camera '" + op.target_id + "'");
        if (deleted.cameras.contains(op.target_id)) {
          throw AlreadyDeleted("camera '" + op.target_id + "' is already deleted");
        }
        if (base.cameras.size() - deleted.cameras.size() - 1 < 2) {
          throw TooFewCamerasRemaining("deleting camera '" + op.target_id +
                                       "' would leave fewer than 2 cameras");
        }
        deleted.cameras.insert(op.target_id);
        break;
      }
      case EditKind::kRestore: {
        if (!is_track && !is_camera) {
          throw UnknownId("unknown id '" + op.target_id + "'");
        }
        if (deleted.tracks.erase(op.target_id) == 0 &&
            deleted.cameras.erase(op.target_id) == 0) {
          throw ValueError("'" + op.target_id + "' is not deleted");
        }
        break;
      }
    }
  }
  return deleted;
}

Dataset MakeEffective(const Dataset& base, const DeletionSet& deleted) {
  Dataset effective;
  effective.name = base.name;
  for (const auto& camera : base.cameras) {
    if (deleted.cameras.contains(camera.id)) continue;
    Camera copy = camera;
    copy.pose_final.reset();
    effective.cameras.push_back(std::move(copy));
  }
  for (const auto& track : base.tracks) {
    if (deleted.tracks.contains(track.id)) continue;
    Track copy;
    copy.id = track.id;
    copy.point_initial = track.point_initial;
    for (const auto& obs : track.observations) {
      if (!deleted.cameras.contains(obs.camera_id)) copy.observations.push_back(obs);
    }
    if (copy.observations.size() < 2) continue;
    effective.tracks.push_back(std::move(copy));
  }
  return effective;
}

std::string ProblemDigest(const Dataset& dataset) {
  Dataset initial_only;
  initial_only.cameras = dataset.cameras;
  initial_only.tracks = dataset.tracks;
  for (auto& camera : initial_only.cameras) camera.pose_final.reset();
  for (auto& track : initial_only.tracks) track.point_final.reset();
  const auto [cameras, tracks] = Serialize(initial_only);
  return FileDigest(cameras, tracks);
}

std::string FileDigest(std::string_view cameras_bytes,
                       std::string_view tracks_bytes) {
  Sha256 sha;
  sha.Update(std::to_string(cameras_bytes.size()));
  sha.Update("\n");
  sha.Update(cameras_bytes);
  sha.Update(std::to_string(tracks_bytes.size()));
  sha.Update("\n");
  sha.Update(tracks_bytes);
  return sha.HexDigest();
}

RunRecord ExecuteRun(const RunSnapshot& snapshot, const BAConfig& config,
                     const IterationCallback& callback) {
  Dataset problem = snapshot.effective;
  const CameraLookup lookup(problem.cameras);
  for (auto& track : problem.tracks) {
    if (!track.point_initial.allFinite()) {
      track.point_initial =
          Triangulate(TrackRays(track, lookup, ResidualKind::kInitial));
    }
  }
  RunRecord run;
  run.digest = snapshot.digest;
  run.edit_count = snapshot.edit_count;
  run.config = config;
  run.result = RunBundleAdjustment(problem, config, callback);
  return run;
}

Session::Session(Dataset base, BaseRef base_ref)
    : base_(std::move(base)), base_ref_(std::move(base_ref)) {
  effective_ = MakeEffective(base_, {});
}

EditOutcome Session::Append(EditOp op) {
  op.timestamp = edits_.empty() ? 1 : edits_.back().timestamp + 1;
  std::vector<EditOp> log = edits_;
  log.push_back(op);
  const DeletionSet deleted = ReplayEdits(base_, log);
  Dataset next = MakeEffective(base_, deleted);

  EditOutcome outcome;
  outcome.op = op;
  const auto before = TrackIds(effective_);
  const auto after = TrackIds(next);
  for (const auto& id : Missing(before, after)) {
    if (id != op.target_id) outcome.cascaded_track_ids.push_back(id);
  }
  for (const auto& id : Missing(after, before)) {
    if (id != op.target_id) outcome.restored_track_ids.push_back(id);
  }
  outcome.warnings = UnreferencedCameraWarnings(next);

  edits_ = std::move(log);
  effective_ = std::move(next);
  return outcome;
}

EditOutcome Session::DeleteTrack(const std::string& track_id) {
  return Append({EditKind::kDeleteTrack, track_id, 0});
}

EditOutcome Session::DeleteCamera(const std::string& camera_id) {
  return Append({EditKind::kDeleteCamera, camera_id, 0});
}

EditOutcome Session::Restore(const std::string& target_id) {
  return Append({EditKind::kRestore, target_id, 0});
}

EditOutcome Session::Apply(EditKind kind, const std::string& target_id) {
  return Append({kind, target_id, 0});
}

RunSnapshot Session::Snapshot() const {
  return {effective_, edits_.size(), ProblemDigest(effective_)};
}

const RunRecord& Session::Record(RunRecord run) {
  if (run.edit_count != edits_.size()) {
    throw ValueError("the edit log changed while the run was in flight");
  }
  run.id = static_cast<int>(runs_.size());
  runs_.push_back(std::move(run));
  return runs_.back();
}

const RunRecord& Session::Rerun(const BAConfig& config,
                                const IterationCallback& callback) {
  return Record(ExecuteRun(Snapshot(), config, callback));
}

const RunRecord& Session::FindRun(int run_id) const {
  if (run_id < 0 || run_id >= static_cast<int>(runs_.size())) {
    throw UnknownRun("unknown run " + std::to_string(run_id));
  }
  return runs_[run_id];
}

const RunRecord* Session::LatestRun() const {
  return runs_.empty() ? nullptr : &runs_.back();
}

Dataset Session::CurrentView() const {
  Dataset view = effective_;
  if (const RunRecord* run = LatestRun()) ApplyResult(run->result, &view);
  return view;
}

ComparisonReport Session::Compare(int run_a, int run_b) const {
  const RunRecord& a = FindRun(run_a);
  const RunRecord& b = FindRun(run_b);
  ComparisonReport report;
  report.run_a = run_a;
  report.run_b = run_b;
  report.total_error_a = a.result.FinalCost();
  report.total_error_b = b.result.FinalCost();
  report.delta_total_error = report.total_error_b - report.total_error_a;
  report.rms_a = a.result.FinalRms();
  report.rms_b = b.result.FinalRms();
  report.delta_rms = report.rms_b - report.rms_a;

  std::unordered_map<std::string, const ResidualRecord*> in_b;
  for (const auto& r : b.result.residuals_final) {
    in_b.emplace(r.camera_id + '\n' + r.track_id, &r);
  }
  struct Sums {
    double sq_a = 0.0, sq_b = 0.0;
    size_t n = 0;
  };
  std::map<std::string, Sums> tracks;
  std::map<std::string, Sums> images;
  double sq_a = 0.0, sq_b = 0.0;
  for (const auto& ra : a.result.residuals_final) {
    auto it = in_b.find(ra.camera_id + '\n' + ra.track_id);
    if (it == in_b.end()) continue;
    const double la2 = ra.length * ra.length;
    const double lb2 = it->second->length * it->second->length;
    sq_a += la2;
    sq_b += lb2;
    ++report.paired_count;
    for (auto* sums : {&tracks[ra.track_id], &images[ra.camera_id]}) {
      sums->sq_a += la2;
      sums->sq_b += lb2;
      ++sums->n;
    }
  }
  report.paired_rms_a = Rms(sq_a, report.paired_count);
  report.paired_rms_b = Rms(sq_b, report.paired_count);
  report.paired_delta_rms = report.paired_rms_b - report.paired_rms_a;
  for (const auto& [id, s] : tracks) {
    report.per_track.push_back({id, Rms(s.sq_a, s.n), Rms(s.sq_b, s.n), s.n});
  }
  for (const auto& [id, s] : images) {
    report.per_image.push_back({id, Rms(s.sq_a, s.n), Rms(s.sq_b, s.n), s.n});
  }
  report.removed_track_ids = Missing(a.result.track_ids, b.result.track_ids);
  report.added_track_ids = Missing(b.result.track_ids, a.result.track_ids);
  report.removed_camera_ids = Missing(a.result.camera_ids, b.result.camera_ids);
  report.added_camera_ids = Missing(b.result.camera_ids, a.result.camera_ids);
  return report;
}

void Session::Save(const std::string& path) const {
  Json document = SessionBody(base_ref_, edits_, runs_);
  document["checksum"] = Checksum(document);
  const std::string tmp = path + ".tmp";
  WriteFile(tmp, document.dump(1));
  std::filesystem::rename(tmp, path);
}

Session Session::Load(const std::string& path) {
  Json document;
  try {
    document = Json::parse(ReadFile(path));
  } catch (const Json::exception& e) {
    throw CorruptSessionFile("session file '" + path + "' is not JSON: " + e.what());
  }
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  try {
    const std::string checksum = document.at("checksum").get<std::string>();
    Json body = document;
    body.erase("checksum");
    if (Checksum(body) != checksum) {
      throw CorruptSessionFile("session file '" + path +
                               "' does not match its checksum");
    }

    BaseRef ref;
    ref.cameras_path = body.at("base").at("cameras_path").get<std::string>();
    ref.tracks_path = body.at("base").at("tracks_path").get<std::string>();
    ref.digest = body.at("base").at("digest").get<std::string>();
    const std::string cameras_path = Resolve(dir, ref.cameras_path).string();
    const std::string tracks_path = Resolve(dir, ref.tracks_path).string();
    if (FileDigest(ReadFile(cameras_path), ReadFile(tracks_path)) != ref.digest) {
      throw CorruptSessionFile("base dataset files changed since the session "
                               "was saved (digest mismatch)");
    }

    Session session(LoadDataset(cameras_path, tracks_path), ref);
    std::vector<EditOp> edits;
    for (const auto& op : body.at("edits")) edits.push_back(EditOpFromJson(op));
    try {
      session.effective_ = MakeEffective(session.base_, ReplayEdits(session.base_, edits));
    } catch (const DataError& e) {
      throw CorruptSessionFile(std::string("edit log does not replay: ") + e.what());
    }
    session.edits_ = std::move(edits);

    for (const auto& run_json : body.at("runs")) {
      const size_t edit_count = run_json.at("edit_count").get<size_t>();
      if (edit_count > session.edits_.size()) {
        throw CorruptSessionFile("run refers to edits beyond the log");
      }
      const Dataset effective = MakeEffective(
          session.base_,
          ReplayEdits(session.base_, std::span(session.edits_).first(edit_count)));
      RunRecord run = RunFromJson(run_json, effective);
      if (ProblemDigest(effective) != run.digest) {
        throw CorruptSessionFile("run " + std::to_string(run.id) +
                                 " digest does not match its replayed dataset");
      }
      if (run.id != static_cast<int>(session.runs_.size())) {
        throw CorruptSessionFile("runs are out of order");
      }
      session.runs_.push_back(std::move(run));
    }
    return session;
  } catch (const Json::exception& e) {
    throw CorruptSessionFile("session file '" + path + "' is malformed: " + e.what());
  }
}

Session OpenSession(const std::string& cameras_path,
                    const std::string& tracks_path) {
  BaseRef ref{cameras_path, tracks_path,
              FileDigest(ReadFile(cameras_path), ReadFile(tracks_path))};
  return Session(LoadDataset(cameras_path, tracks_path), std::move(ref));
}

}  // namespace vec
