#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "vector/dataset.h"
#include "vector/errors.h"

namespace vec {
namespace {

constexpr double kAltitude = 10.0;
constexpr double kDepressionDeg = 45.0;
constexpr double kStep = 1.0;
constexpr int kStraightFrames = 10;
constexpr int kTurnFrames = 5;
constexpr double kTurnDrift = 0.1;  // metres per frame while hovering
constexpr double kMaxDepth = 40.0;
constexpr int kMaxAttemptsPerPoint = 500;

constexpr Intrinsics kIntrinsics{700.0, 700.0, 512.0, 384.0, 1024, 768};

// mt19937_64 is bit-exact across standard libraries; the distributions are
// not, so uniform and Gaussian draws are derived from raw output here.
class Random {
 public:
  explicit Random(uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  size_t Index(size_t n) {
    return std::min(static_cast<size_t>(Uniform() * static_cast<double>(n)),
                    n - 1);
  }

  // Box-Muller; one draw per pair of uniforms.
  double Gaussian() {
    const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = Uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Eigen::Vector3d UnitVector() {
    while (true) {
      Eigen::Vector3d v(Gaussian(), Gaussian(), Gaussian());
      const double n = v.norm();
      if (n > 1e-12) return v / n;
    }
  }

  Eigen::Vector2d UnitVector2() {
    const double phi = 2.0 * std::numbers::pi * Uniform();
    return {std::cos(phi), std::sin(phi)};
  }

 private:
  std::mt19937_64 engine_;
};

struct Waypoint {
  Eigen::Vector3d position;
  double heading = 0.0;  // radians, counter-clockwise from +x
  bool turning = false;
};

std::vector<Waypoint> MakeTrajectory(const SyntheticConfig& config) {
  std::vector<Waypoint> path;
  path.reserve(config.n_cameras);
  switch (config.trajectory) {
    case Trajectory::kStraight:
      for (int i = 0; i < config.n_cameras; ++i) {
        path.push_back({{i * kStep, 0.0, kAltitude}, 0.0, false});
      }
      break;
    case Trajectory::kLoop: {
      const double radius =
          std::max(5.0, config.n_cameras * kStep / (2.0 * std::numbers::pi));
      for (int i = 0; i < config.n_cameras; ++i) {
        const double phi = 2.0 * std::numbers::pi * i / config.n_cameras;
        path.push_back({{radius * std::cos(phi), radius * std::sin(phi), kAltitude},
                        phi + std::numbers::pi / 2.0,
                        false});
      }
      break;
    }
    case Trajectory::kSharpTurns: {
      Eigen::Vector3d position(0.0, 0.0, kAltitude);
      double heading = 0.0;
      int turn_index = 0;
      const int period = kStraightFrames + kTurnFrames;
      for (int i = 0; i < config.n_cameras; ++i) {
        const int phase = i % period;
        if (phase < kStraightFrames) {
          if (i > 0) position += kStep * Eigen::Vector3d(std::cos(heading), std::sin(heading), 0.0);
          path.push_back({position, heading, false});
        } else {
          // Alternate left and right 90 degree turns so the path zigzags.
          const double direction = (turn_index % 2 == 0) ? 1.0 : -1.0;
          heading += direction * (std::numbers::pi / 2.0) / kTurnFrames;
          position += kTurnDrift * Eigen::Vector3d(std::cos(heading), std::sin(heading), 0.0);
          path.push_back({position, heading, true});
          if (phase == period - 1) ++turn_index;
        }
      }
      break;
    }
  }
  return path;
}

// Camera looking along `heading`, tilted down by the depression angle.
Pose PoseFromWaypoint(const Waypoint& waypoint) {
  const double depression = kDepressionDeg * std::numbers::pi / 180.0;
  const Eigen::Vector3d forward(std::cos(waypoint.heading),
                                std::sin(waypoint.heading), 0.0);
  const Eigen::Vector3d optical =
      std::cos(depression) * forward - std::sin(depression) * Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d right(std::sin(waypoint.heading),
                              -std::cos(waypoint.heading), 0.0);
  const Eigen::Vector3d down = optical.cross(right);
  Eigen::Matrix3d world_to_camera;
  world_to_camera.row(0) = right;
  world_to_camera.row(1) = down;
  world_to_camera.row(2) = optical;
  Pose pose;
  pose.rotation = Eigen::Quaterniond(world_to_camera).normalized();
  pose.center = waypoint.position;
  return pose;
}

double TerrainHeight(double x, double y) {
  return 0.3 * std::sin(x / 7.0) * std::cos(y / 5.0);
}

bool InImage(const Eigen::Vector2d& pixel, const Intrinsics& k) {
  return pixel.x() >= 0.0 && pixel.x() < k.width && pixel.y() >= 0.0 &&
         pixel.y() < k.height;
}

std::string PaddedId(char prefix, size_t index, int width) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%c%0*zu", prefix, width, index);
  return buffer;
}

void CheckConfig(const SyntheticConfig& config) {
  if (config.n_cameras < 2) throw InfeasibleConfig("n_cameras must be >= 2");
  if (config.n_points < 0) throw InfeasibleConfig("n_points must be >= 0");
  if (config.n_outlier_tracks < 0 || config.n_outlier_tracks > config.n_points) {
    throw InfeasibleConfig("n_outlier_tracks must lie in [0, n_points]");
  }
  if (!(config.pixel_noise_sigma >= 0.0) || !(config.outlier_magnitude >= 0.0) ||
      !(config.pose_perturbation.rotation_deg >= 0.0) ||
      !(config.pose_perturbation.translation_frac >= 0.0)) {
    throw InfeasibleConfig("noise, outlier and perturbation magnitudes must be >= 0");
  }
}

}  // namespace

std::string_view ToString(Trajectory trajectory) {
  switch (trajectory) {
    case Trajectory::kStraight: return "straight";
    case Trajectory::kSharpTurns: return "sharp_turns";
    case Trajectory::kLoop: return "loop";
  }
  return "straight";
}

Trajectory TrajectoryFromString(std::string_view text) {
  if (text == "straight") return Trajectory::kStraight;
  if (text == "sharp_turns") return Trajectory::kSharpTurns;
  if (text == "loop") return Trajectory::kLoop;
  throw ValueError("unknown trajectory '" + std::string(text) + "'");
}

std::vector<bool> TurnCameraMask(const SyntheticConfig& config) {
  std::vector<bool> mask;
  for (const auto& waypoint : MakeTrajectory(config)) {
    mask.push_back(waypoint.turning);
  }
  return mask;
}

Dataset GenerateSynthetic(const SyntheticConfig& config) {
  CheckConfig(config);
  Random rng(config.seed);

  Dataset dataset;
  dataset.name = "synthetic_" + std::string(ToString(config.trajectory));
  GroundTruth truth;

  const std::vector<Waypoint> path = MakeTrajectory(config);
  const int id_width = config.n_cameras >= 10000 ? 6 : 4;
  const double viewing_distance =
      kAltitude / std::sin(kDepressionDeg * std::numbers::pi / 180.0);
  for (size_t i = 0; i < path.size(); ++i) {
    Camera camera;
    camera.id = PaddedId('C', i, id_width);
    camera.image_ref = "images/" + camera.id + ".png";
    camera.intrinsics = kIntrinsics;
    const Pose true_pose = PoseFromWaypoint(path[i]);
    truth.poses.push_back(true_pose);

    camera.pose_initial = true_pose;
    const auto& perturbation = config.pose_perturbation;
    if (perturbation.rotation_deg > 0.0) {
      const Eigen::Vector3d axis = rng.UnitVector();
      camera.pose_initial.rotation =
          (QuaternionFromRotationVector(axis * perturbation.rotation_deg *
                                        std::numbers::pi / 180.0) *
           true_pose.rotation)
              .normalized();
    }
    if (perturbation.translation_frac > 0.0) {
      camera.pose_initial.center +=
          perturbation.translation_frac * viewing_distance * rng.UnitVector();
    }
    dataset.cameras.push_back(std::move(camera));
  }

  // Outlier tracks: a uniformly drawn subset of track indices.
  std::vector<bool> is_outlier(config.n_points, false);
  {
    std::vector<size_t> order(config.n_points);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int i = 0; i < config.n_outlier_tracks; ++i) {
      const size_t j = i + rng.Index(order.size() - i);
      std::swap(order[i], order[j]);
      is_outlier[order[i]] = true;
    }
  }

  const int track_width = config.n_points >= 1000000 ? 7 : 6;
  const CameraLookup lookup(dataset.cameras);
  for (int p = 0; p < config.n_points; ++p) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttemptsPerPoint && !placed; ++attempt) {
      // Back-project a random pixel of a random camera onto the terrain.
      const size_t anchor = rng.Index(path.size());
      const Pose& anchor_pose = truth.poses[anchor];
      const Eigen::Vector3d ray_camera(
          (rng.Uniform() * kIntrinsics.width - kIntrinsics.cx) / kIntrinsics.fx,
          (rng.Uniform() * kIntrinsics.height - kIntrinsics.cy) / kIntrinsics.fy,
          1.0);
      const Eigen::Vector3d ray = anchor_pose.rotation.conjugate() * ray_camera;
      if (ray.z() >= -1e-6) continue;
      const double t = -anchor_pose.center.z() / ray.z();
      Eigen::Vector3d point = anchor_pose.center + t * ray;
      point.z() = TerrainHeight(point.x(), point.y());

      Track track;
      track.id = PaddedId('T', static_cast<size_t>(p), track_width);
      for (size_t c = 0; c < path.size(); ++c) {
        const Eigen::Vector3d in_camera = truth.poses[c].ToCamera(point);
        if (in_camera.z() < 0.1 || in_camera.z() > kMaxDepth) continue;
        const Eigen::Vector2d exact = Project(kIntrinsics, truth.poses[c], point);
        if (!InImage(exact, kIntrinsics)) continue;
        Eigen::Vector2d pixel = exact;
        if (config.pixel_noise_sigma > 0.0) {
          pixel += config.pixel_noise_sigma *
                   Eigen::Vector2d(rng.Gaussian(), rng.Gaussian());
        }
        if (!InImage(pixel, kIntrinsics)) continue;
        track.observations.push_back({dataset.cameras[c].id, pixel});
      }
      if (track.observations.size() < 2) continue;

      if (is_outlier[p]) {
        bool displaced = false;
        for (int tries = 0; tries < 64 && !displaced; ++tries) {
          auto& obs = track.observations[rng.Index(track.observations.size())];
          const Eigen::Vector2d moved =
              obs.pixel + config.outlier_magnitude * rng.UnitVector2();
          if (InImage(moved, kIntrinsics)) {
            obs.pixel = moved;
            displaced = true;
          }
        }
        if (!displaced) continue;
      }

      try {
        track.point_initial =
            Triangulate(TrackRays(track, lookup, ResidualKind::kInitial));
      } catch (const NumericalError&) {
        continue;
      }
      truth.points.push_back(point);
      if (is_outlier[p]) truth.outlier_track_ids.push_back(track.id);
      dataset.tracks.push_back(std::move(track));
      placed = true;
    }
    if (!placed) {
      throw InfeasibleConfig("could not place point " + std::to_string(p) +
                             " in view of two cameras");
    }
  }

  dataset.ground_truth = std::move(truth);
  return dataset;
}

}  // namespace vec
