#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace vec {

// Pinhole intrinsics: zero skew, no distortion. Never refined by BA.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  bool operator==(const Intrinsics&) const = default;
};

// Camera pose as a world->camera rotation plus the camera center in world
// coordinates. A world point X maps to camera coordinates R * (X - C); the
// equivalent translation vector would be t = -R * C.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  Eigen::Vector3d ToCamera(const Eigen::Vector3d& world) const {
    return rotation * (world - center);
  }

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation.coeffs() == b.rotation.coeffs() && a.center == b.center;
  }
};

struct Camera {
  std::string id;
  std::string image_ref;
  Intrinsics intrinsics;
  Pose pose_initial;
  std::optional<Pose> pose_final;

  bool operator==(const Camera&) const = default;
};

struct Observation {
  std::string camera_id;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();

  bool operator==(const Observation&) const = default;
};

struct Track {
  std::string id;
  std::vector<Observation> observations;
  Eigen::Vector3d point_initial = Eigen::Vector3d::Zero();
  std::optional<Eigen::Vector3d> point_final;

  bool operator==(const Track&) const = default;
};

enum class ResidualKind { kInitial, kFinal };

std::string_view ToString(ResidualKind kind);
ResidualKind ResidualKindFromString(std::string_view text);

struct ResidualRecord {
  std::string camera_id;
  std::string track_id;
  Eigen::Vector2d vector = Eigen::Vector2d::Zero();
  double length = 0.0;
  // Degrees in [0, 360); zero-length residuals carry angle 0.
  double angle = 0.0;
  ResidualKind kind = ResidualKind::kInitial;
};

// Fills length and angle from the residual vector.
ResidualRecord MakeResidualRecord(std::string camera_id, std::string track_id,
                                  const Eigen::Vector2d& vector,
                                  ResidualKind kind);

// Maps atan2 output in degrees into [0, 360).
double NormalizeAngleDeg(double degrees);

// Id -> index lookup over a camera list. The cameras must outlive the lookup.
class CameraLookup {
 public:
  explicit CameraLookup(std::span<const Camera> cameras);

  const Camera* Find(std::string_view id) const;
  const Camera& At(std::string_view id) const;  // throws UnknownCameraRef
  std::optional<size_t> IndexOf(std::string_view id) const;
  std::span<const Camera> cameras() const { return cameras_; }

 private:
  std::span<const Camera> cameras_;
  std::unordered_map<std::string_view, size_t> index_;
};

// Depth at or below this is a cheirality violation.
inline constexpr double kMinDepth = 1e-12;

Eigen::Vector2d Project(const Intrinsics& intrinsics, const Pose& pose,
                        const Eigen::Vector3d& point);
inline Eigen::Vector2d Project(const Camera& camera, const Pose& pose,
                               const Eigen::Vector3d& point) {
  return Project(camera.intrinsics, pose, point);
}

struct TriangulationRay {
  Intrinsics intrinsics;
  Pose pose;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

// Multi-view DLT. Each view contributes two cross-product rows in normalized
// image coordinates; the solution is the right singular vector of the least
// singular value. World coordinates are centered and scaled by the camera
// centers before the SVD for conditioning.
Eigen::Vector3d Triangulate(std::span<const TriangulationRay> rays);

// Rays for a track from the given pose kind (initial or final).
std::vector<TriangulationRay> TrackRays(const Track& track,
                                        const CameraLookup& cameras,
                                        ResidualKind kind);

ResidualRecord ComputeResidual(const Camera& camera, const Pose& pose,
                               const Eigen::Vector3d& point,
                               const Observation& obs,
                               const std::string& track_id, ResidualKind kind);

// Residuals for every (camera, track) observation pair, in track order then
// observation order. kind = final requires pose_final and point_final.
std::vector<ResidualRecord> ComputeResiduals(std::span<const Camera> cameras,
                                             std::span<const Track> tracks,
                                             ResidualKind kind);

// Sum of squared residual norms over all observation pairs.
double TotalReprojectionError(std::span<const Camera> cameras,
                              std::span<const Track> tracks, ResidualKind kind);

// Largest pairwise angle in degrees between the viewing rays from each
// observing camera center to the track's point.
double TriangulationAngle(const Track& track, const CameraLookup& cameras,
                          ResidualKind kind = ResidualKind::kInitial);

inline constexpr double kLowTriangulationAngleDeg = 1.0;

// Rotation by a rotation vector (axis * angle in radians).
Eigen::Quaterniond QuaternionFromRotationVector(const Eigen::Vector3d& omega);

// Angle in degrees of the relative rotation between two orientations.
double RotationDifferenceDeg(const Eigen::Quaterniond& a,
                             const Eigen::Quaterniond& b);

}  // namespace vec
