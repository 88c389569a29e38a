#include "test_util.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vec::testing {

TempDir::TempDir(const std::string& tag) {
  std::mt19937_64 rng(std::random_device{}());
  path_ = std::filesystem::temp_directory_path() /
          ("vector_" + tag + "_" + std::to_string(rng() % 1000000000));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Intrinsics DefaultIntrinsics() { return {600.0, 620.0, 320.0, 240.0, 640, 480}; }

Pose LookingAt(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - center).normalized();
  Eigen::Vector3d x = Eigen::Vector3d::UnitZ().cross(z);
  if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitX();
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d world_to_camera;
  world_to_camera.row(0) = x;
  world_to_camera.row(1) = y;
  world_to_camera.row(2) = z;
  Pose pose;
  pose.rotation = Eigen::Quaterniond(world_to_camera);
  pose.center = center;
  return pose;
}

Dataset SmallScene(int n_cameras, int n_points, double noise, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset dataset;
  dataset.name = "small";
  for (int c = 0; c < n_cameras; ++c) {
    const double a = -0.6 + 1.2 * c / std::max(1, n_cameras - 1);
    Camera camera;
    camera.id = "cam" + std::to_string(c);
    camera.image_ref = "img" + std::to_string(c) + ".png";
    camera.intrinsics = DefaultIntrinsics();
    camera.pose_initial = LookingAt({8.0 * std::sin(a), 0.5 * unit(rng), -8.0 * std::cos(a)},
                                    {0.1 * unit(rng), 0.1 * unit(rng), 0.0});
    dataset.cameras.push_back(camera);
  }
  for (int p = 0; p < n_points; ++p) {
    Track track;
    track.id = "pt" + std::to_string(p);
    track.point_initial = {1.5 * unit(rng), 1.5 * unit(rng), 1.5 * unit(rng)};
    for (const auto& camera : dataset.cameras) {
      Observation obs;
      obs.camera_id = camera.id;
      obs.pixel = Project(camera, camera.pose_initial, track.point_initial) +
                  noise * Eigen::Vector2d(gauss(rng), gauss(rng));
      track.observations.push_back(obs);
    }
    dataset.tracks.push_back(track);
  }
  return dataset;
}

BAState JitteredState(const Dataset& dataset, double amount, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  BAState state = InitialState(dataset);
  for (auto& pose : state.poses) {
    pose.rotation = QuaternionFromRotationVector(
                        amount * 0.05 * Eigen::Vector3d(unit(rng), unit(rng), unit(rng))) *
                    pose.rotation;
    pose.center += amount * Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
  }
  for (auto& point : state.points) {
    point += amount * Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
  }
  return state;
}

Dataset FuzzDataset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> exponent(-300, 300);
  const std::string alphabet = "abcXYZ019_-.&<>\"' /";
  auto random_id = [&](const std::string& prefix, int i) {
    std::string id = prefix + std::to_string(i) + "~";
    const int extra = static_cast<int>(rng() % 4);
    for (int k = 0; k < extra; ++k) id += alphabet[rng() % alphabet.size()];
    return id;
  };
  auto wild = [&]() {
    switch (rng() % 6) {
      case 0: return unit(rng) * std::pow(10.0, exponent(rng));
      case 1: return std::numeric_limits<double>::denorm_min() * static_cast<double>(rng() % 100);
      case 2: return -0.0;
      case 3: return std::nextafter(1.0, 2.0);
      default: return 1e3 * unit(rng);
    }
  };
  auto wild_point = [&]() { return Eigen::Vector3d(wild(), wild(), wild()); };
  auto random_pose = [&]() {
    Pose pose;
    pose.rotation = Eigen::Quaterniond(unit(rng), unit(rng), unit(rng), unit(rng)).normalized();
    pose.center = wild_point();
    return pose;
  };

  Dataset d;
  const int n_cameras = 2 + static_cast<int>(rng() % 6);
  for (int c = 0; c < n_cameras; ++c) {
    Camera camera;
    camera.id = random_id("c", c);
    camera.image_ref = random_id("images/", c) + ".png";
    camera.intrinsics = {std::abs(wild()) + 1e-3, 100 + 1000 * std::abs(unit(rng)), wild(), wild(),
                         1 + static_cast<int>(rng() % 5000), 1 + static_cast<int>(rng() % 5000)};
    camera.pose_initial = random_pose();
    if (rng() % 2) camera.pose_final = random_pose();
    d.cameras.push_back(camera);
  }
  const int n_tracks = static_cast<int>(rng() % 20);
  for (int t = 0; t < n_tracks; ++t) {
    Track track;
    track.id = random_id("t", t);
    track.point_initial = wild_point();
    if (rng() % 2) track.point_final = wild_point();
    std::vector<int> order(n_cameras);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_obs = 2 + static_cast<int>(rng() % (n_cameras - 1));
    for (int k = 0; k < n_obs; ++k) {
      track.observations.push_back({d.cameras[order[k]].id, {wild(), wild()}});
    }
    d.tracks.push_back(track);
  }
  return d;
}

}  // namespace vec::testing
