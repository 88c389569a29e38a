#include "vector/geometry.h"

#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "vector/errors.h"

namespace vec {

std::string_view ToString(ResidualKind kind) {
  return kind == ResidualKind::kInitial ? "initial" : "final";
}

ResidualKind ResidualKindFromString(std::string_view text) {
  if (text == "initial") return ResidualKind::kInitial;
  if (text == "final") return ResidualKind::kFinal;
  throw ValueError("unknown kind '" + std::string(text) + "'");
}

double NormalizeAngleDeg(double degrees) {
  double angle = std::fmod(degrees, 360.0);
  if (angle < 0.0) angle += 360.0;
  if (angle >= 360.0) angle = 0.0;
  return angle;
}

ResidualRecord MakeResidualRecord(std::string camera_id, std::string track_id,
                                  const Eigen::Vector2d& vector,
                                  ResidualKind kind) {
  ResidualRecord record;
  record.camera_id = std::move(camera_id);
  record.track_id = std::move(track_id);
  record.vector = vector;
  record.length = vector.norm();
  record.angle =
      record.length == 0.0
          ? 0.0
          : NormalizeAngleDeg(std::atan2(vector.y(), vector.x()) * 180.0 /
                              std::numbers::pi);
  record.kind = kind;
  return record;
}

CameraLookup::CameraLookup(std::span<const Camera> cameras)
    : cameras_(cameras) {
  index_.reserve(cameras.size());
  for (size_t i = 0; i < cameras.size(); ++i) {
    index_.emplace(cameras[i].id, i);
  }
}

const Camera* CameraLookup::Find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &cameras_[it->second];
}

const Camera& CameraLookup::At(std::string_view id) const {
  const Camera* camera = Find(id);
  if (camera == nullptr) {
    throw UnknownCameraRef("unknown camera '" + std::string(id) + "'");
  }
  return *camera;
}

std::optional<size_t> CameraLookup::IndexOf(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Eigen::Vector2d Project(const Intrinsics& intrinsics, const Pose& pose,
                        const Eigen::Vector3d& point) {
  const Eigen::Vector3d p = pose.ToCamera(point);
  if (!(p.z() > kMinDepth)) {
    throw CheiralityViolation("point at depth " + std::to_string(p.z()) +
                              " is not in front of the camera");
  }
  return {intrinsics.fx * p.x() / p.z() + intrinsics.cx,
          intrinsics.fy * p.y() / p.z() + intrinsics.cy};
}

Eigen::Vector3d Triangulate(std::span<const TriangulationRay> rays) {
  if (rays.size() < 2) {
    throw DegenerateGeometry("triangulation needs at least two views");
  }

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& ray : rays) mean += ray.pose.center;
  mean /= static_cast<double>(rays.size());
  double spread = 0.0;
  for (const auto& ray : rays) spread += (ray.pose.center - mean).norm();
  spread /= static_cast<double>(rays.size());
  const double scale = spread > 0.0 ? 1.0 / spread : 1.0;

  Eigen::MatrixXd design(2 * rays.size(), 4);
  for (size_t i = 0; i < rays.size(); ++i) {
    const auto& ray = rays[i];
    const Eigen::Matrix3d rotation = ray.pose.rotation.toRotationMatrix();
    // Projection in normalized, recentred coordinates:
    // P = [R | -R * (C - mean) * scale].
    Eigen::Matrix<double, 3, 4> projection;
    projection.leftCols<3>() = rotation;
    projection.col(3) = -rotation * (ray.pose.center - mean) * scale;
    const double x = (ray.pixel.x() - ray.intrinsics.cx) / ray.intrinsics.fx;
    const double y = (ray.pixel.y() - ray.intrinsics.cy) / ray.intrinsics.fy;
    Eigen::RowVector4d row_u = x * projection.row(2) - projection.row(0);
    Eigen::RowVector4d row_v = y * projection.row(2) - projection.row(1);
    design.row(2 * i) = row_u.normalized();
    design.row(2 * i + 1) = row_v.normalized();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const Eigen::Vector4d singular = svd.singularValues().head<4>();
  const double smallest = singular(3);
  const double second = singular(2);
  if (second <= 1e-12 * singular(0) || smallest / second > 1.0 - 1e-9) {
    throw DegenerateGeometry("triangulation solution is not unique");
  }
  const Eigen::Vector4d homogeneous = svd.matrixV().col(3);
  if (std::abs(homogeneous(3)) <= 1e-12 * homogeneous.head<3>().norm()) {
    throw DegenerateGeometry("triangulated point is at infinity");
  }
  const Eigen::Vector3d point =
      homogeneous.head<3>() / homogeneous(3) / scale + mean;

  for (const auto& ray : rays) {
    if (!(ray.pose.ToCamera(point).z() > kMinDepth)) {
      throw CheiralityViolation("triangulated point is behind a camera");
    }
  }
  return point;
}

namespace {

const Pose& PoseFor(const Camera& camera, ResidualKind kind) {
  if (kind == ResidualKind::kInitial) return camera.pose_initial;
  if (!camera.pose_final) {
    throw MissingFinalState("camera '" + camera.id + "' has no final pose");
  }
  return *camera.pose_final;
}

const Eigen::Vector3d& PointFor(const Track& track, ResidualKind kind) {
  if (kind == ResidualKind::kInitial) return track.point_initial;
  if (!track.point_final) {
    throw MissingFinalState("track '" + track.id + "' has no final point");
  }
  return *track.point_final;
}

}  // namespace

std::vector<TriangulationRay> TrackRays(const Track& track,
                                        const CameraLookup& cameras,
                                        ResidualKind kind) {
  std::vector<TriangulationRay> rays;
  rays.reserve(track.observations.size());
  for (const auto& obs : track.observations) {
    const Camera& camera = cameras.At(obs.camera_id);
    rays.push_back({camera.intrinsics, PoseFor(camera, kind), obs.pixel});
  }
  return rays;
}

ResidualRecord ComputeResidual(const Camera& camera, const Pose& pose,
                               const Eigen::Vector3d& point,
                               const Observation& obs,
                               const std::string& track_id,
                               ResidualKind kind) {
  return MakeResidualRecord(camera.id, track_id,
                            Project(camera, pose, point) - obs.pixel, kind);
}

std::vector<ResidualRecord> ComputeResiduals(std::span<const Camera> cameras,
                                             std::span<const Track> tracks,
                                             ResidualKind kind) {
  const CameraLookup lookup(cameras);
  std::vector<ResidualRecord> records;
  for (const auto& track : tracks) {
    const Eigen::Vector3d& point = PointFor(track, kind);
    for (const auto& obs : track.observations) {
      const Camera& camera = lookup.At(obs.camera_id);
      records.push_back(ComputeResidual(camera, PoseFor(camera, kind), point,
                                        obs, track.id, kind));
    }
  }
  return records;
}

double TotalReprojectionError(std::span<const Camera> cameras,
                              std::span<const Track> tracks,
                              ResidualKind kind) {
  const CameraLookup lookup(cameras);
  double total = 0.0;
  for (const auto& track : tracks) {
    const Eigen::Vector3d& point = PointFor(track, kind);
    for (const auto& obs : track.observations) {
      const Camera& camera = lookup.At(obs.camera_id);
      total += (Project(camera, PoseFor(camera, kind), point) - obs.pixel)
                   .squaredNorm();
    }
  }
  return total;
}

double TriangulationAngle(const Track& track, const CameraLookup& cameras,
                          ResidualKind kind) {
  const Eigen::Vector3d& point = PointFor(track, kind);
  std::vector<Eigen::Vector3d> directions;
  directions.reserve(track.observations.size());
  for (const auto& obs : track.observations) {
    const Eigen::Vector3d ray =
        point - PoseFor(cameras.At(obs.camera_id), kind).center;
    const double norm = ray.norm();
    directions.push_back(norm > 0.0 ? Eigen::Vector3d(ray / norm)
                                    : Eigen::Vector3d::Zero());
  }
  double max_angle = 0.0;
  for (size_t i = 0; i < directions.size(); ++i) {
    for (size_t j = i + 1; j < directions.size(); ++j) {
      // atan2 of cross/dot stays accurate for nearly parallel rays.
      const double angle =
          std::atan2(directions[i].cross(directions[j]).norm(),
                     directions[i].dot(directions[j]));
      max_angle = std::max(max_angle, angle);
    }
  }
  return max_angle * 180.0 / std::numbers::pi;
}

Eigen::Quaterniond QuaternionFromRotationVector(const Eigen::Vector3d& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Eigen::Quaterniond::Identity();
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle));
}

double RotationDifferenceDeg(const Eigen::Quaterniond& a,
                             const Eigen::Quaterniond& b) {
  return Eigen::AngleAxisd(a * b.conjugate()).angle() * 180.0 /
         std::numbers::pi;
}

}  // namespace vec
