#include "vector/json_convert.h"

#include <algorithm>
#include <cmath>

#include "vector/errors.h"

namespace vec {
namespace {

template <typename T>
void ReadIf(const Json& j, const char* name, T& out) {
  if (!j.contains(name) || j.at(name).is_null()) return;
  try {
    out = j.at(name).get<T>();
  } catch (const Json::exception&) {
    throw ValueError(std::string("field '") + name + "' has the wrong type");
  }
}

Json Vec2(const Eigen::Vector2d& v) { return Json::array({v.x(), v.y()}); }

}  // namespace

void to_json(Json& j, const Intrinsics& k) {
  j = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
       {"width", k.width}, {"height", k.height}};
}

void to_json(Json& j, const Pose& pose) {
  j = {{"qw", pose.rotation.w()}, {"qx", pose.rotation.x()},
       {"qy", pose.rotation.y()}, {"qz", pose.rotation.z()},
       {"x", pose.center.x()},    {"y", pose.center.y()},
       {"z", pose.center.z()}};
}

void from_json(const Json& j, Pose& pose) {
  pose.rotation = Eigen::Quaterniond(j.at("qw").get<double>(), j.at("qx").get<double>(),
                                     j.at("qy").get<double>(), j.at("qz").get<double>());
  pose.center = {j.at("x").get<double>(), j.at("y").get<double>(),
                 j.at("z").get<double>()};
}

Json PointJson(const Eigen::Vector3d& p) {
  return {{"x", p.x()}, {"y", p.y()}, {"z", p.z()}};
}

Eigen::Vector3d PointFromJson(const Json& j) {
  return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>()};
}

void to_json(Json& j, const BAConfig& c) {
  j = {{"max_iterations", c.max_iterations},
       {"initial_lambda", c.initial_lambda},
       {"lambda_up", c.lambda_up},
       {"lambda_down", c.lambda_down},
       {"gradient_tol", c.gradient_tol},
       {"relative_cost_tol", c.relative_cost_tol},
       {"parameter_tol", c.parameter_tol},
       {"fix_first_camera", c.fix_first_camera}};
}

BAConfig BAConfigFromJson(const Json& j) {
  BAConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) throw ValueError("BA config must be a JSON object");
  ReadIf(j, "max_iterations", c.max_iterations);
  ReadIf(j, "initial_lambda", c.initial_lambda);
  ReadIf(j, "lambda_up", c.lambda_up);
  ReadIf(j, "lambda_down", c.lambda_down);
  ReadIf(j, "gradient_tol", c.gradient_tol);
  ReadIf(j, "relative_cost_tol", c.relative_cost_tol);
  ReadIf(j, "parameter_tol", c.parameter_tol);
  ReadIf(j, "fix_first_camera", c.fix_first_camera);
  c.Check();
  return c;
}

void to_json(Json& j, const SyntheticConfig& c) {
  j = {{"n_cameras", c.n_cameras},
       {"trajectory", std::string(ToString(c.trajectory))},
       {"n_points", c.n_points},
       {"pixel_noise_sigma", c.pixel_noise_sigma},
       {"n_outlier_tracks", c.n_outlier_tracks},
       {"outlier_magnitude", c.outlier_magnitude},
       {"pose_perturbation",
        {{"rotation_deg", c.pose_perturbation.rotation_deg},
         {"translation_frac", c.pose_perturbation.translation_frac}}},
       {"seed", c.seed}};
}

SyntheticConfig SyntheticConfigFromJson(const Json& j) {
  SyntheticConfig c;
  if (!j.is_object()) throw ValueError("synthetic config must be a JSON object");
  ReadIf(j, "n_cameras", c.n_cameras);
  std::string trajectory(ToString(c.trajectory));
  ReadIf(j, "trajectory", trajectory);
  c.trajectory = TrajectoryFromString(trajectory);
  ReadIf(j, "n_points", c.n_points);
  ReadIf(j, "pixel_noise_sigma", c.pixel_noise_sigma);
  ReadIf(j, "n_outlier_tracks", c.n_outlier_tracks);
  ReadIf(j, "outlier_magnitude", c.outlier_magnitude);
  if (j.contains("pose_perturbation")) {
    const Json& p = j.at("pose_perturbation");
    ReadIf(p, "rotation_deg", c.pose_perturbation.rotation_deg);
    ReadIf(p, "translation_frac", c.pose_perturbation.translation_frac);
  }
  ReadIf(j, "seed", c.seed);
  return c;
}

void to_json(Json& j, const FilterState& f) {
  Json kinds = Json::array();
  if (f.include_initial) kinds.push_back("initial");
  if (f.include_final) kinds.push_back("final");
  j = {{"kinds", kinds},
       {"length_range",
        {f.length_min, std::isfinite(f.length_max) ? Json(f.length_max) : Json()}},
       {"angle_range", {f.angle_start, f.angle_end}},
       {"precision", f.precision},
       {"scale", f.scale}};
}

FilterState FilterStateFromJson(const Json& j) {
  FilterState f;
  if (j.is_null()) return f;
  if (!j.is_object()) throw ValueError("filter must be a JSON object");
  try {
    if (j.contains("kinds")) {
      f.include_initial = f.include_final = false;
      for (const auto& kind : j.at("kinds")) {
        const ResidualKind k = ResidualKindFromString(kind.get<std::string>());
        (k == ResidualKind::kInitial ? f.include_initial : f.include_final) = true;
      }
    }
    if (j.contains("length_range")) {
      const Json& range = j.at("length_range");
      if (!range.is_array() || range.size() != 2) {
        throw ValueError("length_range must be [min, max]");
      }
      if (!range[0].is_null()) f.length_min = range[0].get<double>();
      if (!range[1].is_null()) f.length_max = range[1].get<double>();
    }
    if (j.contains("angle_range")) {
      const Json& range = j.at("angle_range");
      if (!range.is_array() || range.size() != 2) {
        throw ValueError("angle_range must be [start, end]");
      }
      f.angle_start = range[0].get<double>();
      f.angle_end = range[1].get<double>();
    }
    ReadIf(j, "precision", f.precision);
    ReadIf(j, "scale", f.scale);
  } catch (const Json::exception& e) {
    throw ValueError(std::string("malformed filter: ") + e.what());
  }
  f.Check();
  return f;
}

void to_json(Json& j, const ResidualRecord& r) {
  j = {{"camera_id", r.camera_id}, {"track_id", r.track_id},
       {"vector", Vec2(r.vector)}, {"length", r.length},
       {"angle", r.angle},         {"kind", std::string(ToString(r.kind))}};
}

void to_json(Json& j, const HistogramData& h) {
  j = {{"bin_edges", h.bin_edges}, {"counts", h.counts}};
}

void to_json(Json& j, const RadialData& r) {
  Json endpoints = Json::array();
  for (const auto& e : r.endpoints) endpoints.push_back(Vec2(e));
  j = {{"endpoints", endpoints}, {"max_radius", r.max_radius}};
}

void to_json(Json& j, const SlopePairs& s) {
  Json pairs = Json::array();
  for (const auto& p : s.pairs) {
    pairs.push_back({{"camera_id", p.camera_id}, {"track_id", p.track_id},
                     {"pre_length", p.pre_length}, {"post_length", p.post_length}});
  }
  j = {{"pairs", pairs}, {"omitted", s.omitted}};
}

void to_json(Json& j, const TrackScore& s) {
  j = {{"track_id", s.track_id},
       {"max_final_length", s.max_final_length},
       {"mean_final_length", s.mean_final_length},
       {"delta_rms", s.delta_rms},
       {"concentration", s.concentration},
       {"num_observations", s.num_observations}};
}

void to_json(Json& j, const ImageScore& s) {
  j = {{"camera_id", s.camera_id},
       {"max_final_length", s.max_final_length},
       {"mean_final_length", s.mean_final_length},
       {"delta_rms", s.delta_rms},
       {"concentration", s.concentration},
       {"num_residuals", s.num_residuals}};
}

void to_json(Json& j, const ImageSummary& s) {
  j = {{"camera_id", s.camera_id},
       {"histogram", s.histogram},
       {"radial", s.radial},
       {"slopes", s.slopes},
       {"counts", {{"initial", s.num_initial}, {"final", s.num_final}}}};
}

void to_json(Json& j, const Warning& w) {
  j = {{"subject", w.subject}, {"message", w.message}};
}

void to_json(Json& j, const EditOp& op) {
  j = {{"kind", std::string(ToString(op.kind))},
       {"target_id", op.target_id},
       {"timestamp", op.timestamp}};
}

EditOp EditOpFromJson(const Json& j) {
  EditOp op;
  op.kind = EditKindFromString(j.at("kind").get<std::string>());
  op.target_id = j.at("target_id").get<std::string>();
  if (j.contains("timestamp")) op.timestamp = j.at("timestamp").get<uint64_t>();
  return op;
}

void to_json(Json& j, const EditOutcome& outcome) {
  j = {{"edit", outcome.op},
       {"cascaded_track_ids", outcome.cascaded_track_ids},
       {"restored_track_ids", outcome.restored_track_ids},
       {"warnings", outcome.warnings}};
}

void to_json(Json& j, const SlopeSummary& s) {
  j = {{"id", s.id}, {"rms_a", s.rms_a}, {"rms_b", s.rms_b}, {"count", s.count}};
}

void to_json(Json& j, const ComparisonReport& r) {
  j = {{"run_a", r.run_a},
       {"run_b", r.run_b},
       {"total_error_a", r.total_error_a},
       {"total_error_b", r.total_error_b},
       {"delta_total_error", r.delta_total_error},
       {"rms_a", r.rms_a},
       {"rms_b", r.rms_b},
       {"delta_rms", r.delta_rms},
       {"paired_count", r.paired_count},
       {"paired_rms_a", r.paired_rms_a},
       {"paired_rms_b", r.paired_rms_b},
       {"paired_delta_rms", r.paired_delta_rms},
       {"per_track", r.per_track},
       {"per_image", r.per_image},
       {"removed_track_ids", r.removed_track_ids},
       {"added_track_ids", r.added_track_ids},
       {"removed_camera_ids", r.removed_camera_ids},
       {"added_camera_ids", r.added_camera_ids}};
}

Json BAResultSummary(const BAResult& result) {
  return {{"iterations", result.iterations},
          {"converged", result.converged},
          {"termination_reason", std::string(ToString(result.termination_reason))},
          {"cost_trace", result.cost_trace},
          {"initial_cost", result.InitialCost()},
          {"final_cost", result.FinalCost()},
          {"initial_rms", result.InitialRms()},
          {"final_rms", result.FinalRms()},
          {"num_cameras", result.camera_ids.size()},
          {"num_tracks", result.track_ids.size()},
          {"num_observations", result.residuals_final.size()}};
}

Json RunRecordJson(const RunRecord& run) {
  Json poses = Json::array();
  for (size_t i = 0; i < run.result.poses_final.size(); ++i) {
    Json pose = run.result.poses_final[i];
    pose["camera_id"] = run.result.camera_ids[i];
    poses.push_back(std::move(pose));
  }
  Json points = Json::array();
  for (size_t i = 0; i < run.result.points_final.size(); ++i) {
    Json point = PointJson(run.result.points_final[i]);
    point["track_id"] = run.result.track_ids[i];
    points.push_back(std::move(point));
  }
  return {{"id", run.id},
          {"digest", run.digest},
          {"edit_count", run.edit_count},
          {"config", run.config},
          {"iterations", run.result.iterations},
          {"converged", run.result.converged},
          {"termination_reason",
           std::string(ToString(run.result.termination_reason))},
          {"cost_trace", run.result.cost_trace},
          {"poses_final", poses},
          {"points_final", points}};
}

Json RunReport(const RunRecord& run, size_t top_n) {
  const BAResult& r = run.result;
  Json report = BAResultSummary(r);
  report["run"] = run.id;
  report["digest"] = run.digest;
  report["edit_count"] = run.edit_count;

  std::vector<ResidualRecord> all = r.residuals_initial;
  all.insert(all.end(), r.residuals_final.begin(), r.residuals_final.end());
  report["histogram"] = {{"initial", DefaultHistogram(r.residuals_initial)},
                         {"final", DefaultHistogram(r.residuals_final)}};
  auto concentration = [](const std::vector<ResidualRecord>& records) -> Json {
    try {
      return AngularConcentration(records);
    } catch (const EmptyInput&) {
      return nullptr;
    }
  };
  report["concentration"] = {{"initial", concentration(r.residuals_initial)},
                             {"final", concentration(r.residuals_final)}};
  const SlopePairs slopes = MakeSlopePairs(r.residuals_initial, r.residuals_final);
  size_t decreased = 0;
  for (const auto& p : slopes.pairs) decreased += p.post_length <= p.pre_length;
  report["slope"] = {{"pairs", slopes.pairs.size()},
                     {"omitted", slopes.omitted},
                     {"decreased", decreased}};

  auto top = [top_n](auto scores) {
    if (scores.size() > top_n) scores.resize(top_n);
    return Json(scores);
  };
  report["top_tracks"] = {
      {"max_final_length",
       top(RankTracks(r.residuals_initial, r.residuals_final, RankKey::kMaxFinalLength))},
      {"delta_rms",
       top(RankTracks(r.residuals_initial, r.residuals_final, RankKey::kDeltaRms))}};
  report["top_images"] = {
      {"max_final_length",
       top(RankImages(r.residuals_initial, r.residuals_final, RankKey::kMaxFinalLength))}};
  return report;
}

}  // namespace vec
