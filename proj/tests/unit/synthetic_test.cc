#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "test_util.h"
#include "vector/dataset.h"
#include "vector/errors.h"

namespace vec {
namespace {

SyntheticConfig Small(uint64_t seed) {
  SyntheticConfig config;
  config.n_cameras = 12;
  config.n_points = 150;
  config.seed = seed;
  return config;
}

TEST(Synthetic, ZeroNoiseIsExactAndMatchesGroundTruth) {
  for (auto trajectory : {Trajectory::kStraight, Trajectory::kSharpTurns, Trajectory::kLoop}) {
    SyntheticConfig config = Small(3);
    config.trajectory = trajectory;
    const Dataset d = GenerateSynthetic(config);
    ASSERT_TRUE(d.ground_truth);
    ASSERT_EQ(d.cameras.size(), 12u);
    ASSERT_EQ(d.tracks.size(), 150u);
    EXPECT_LT(TotalReprojectionError(d.cameras, d.tracks, ResidualKind::kInitial), 1e-9);
    for (size_t i = 0; i < d.cameras.size(); ++i) {
      EXPECT_EQ(d.cameras[i].pose_initial, d.ground_truth->poses[i]);
    }
    for (size_t i = 0; i < d.tracks.size(); ++i) {
      EXPECT_LT((d.tracks[i].point_initial - d.ground_truth->points[i]).norm(), 1e-6);
    }
  }
}

TEST(Synthetic, ObservationsAreInsideImagesAndInFront) {
  SyntheticConfig config = Small(4);
  config.pixel_noise_sigma = 1.0;
  config.trajectory = Trajectory::kSharpTurns;
  const Dataset d = GenerateSynthetic(config);
  const CameraLookup lookup(d.cameras);
  for (size_t t = 0; t < d.tracks.size(); ++t) {
    EXPECT_GE(d.tracks[t].observations.size(), 2u);
    for (const auto& obs : d.tracks[t].observations) {
      const Camera& camera = lookup.At(obs.camera_id);
      EXPECT_GE(obs.pixel.x(), 0.0);
      EXPECT_GE(obs.pixel.y(), 0.0);
      EXPECT_LE(obs.pixel.x(), camera.intrinsics.width);
      EXPECT_LE(obs.pixel.y(), camera.intrinsics.height);
      EXPECT_GT(d.ground_truth->poses[*lookup.IndexOf(obs.camera_id)]
                    .ToCamera(d.ground_truth->points[t])
                    .z(),
                0.0);
    }
  }
}

TEST(Synthetic, SameSeedSameBytesDifferentSeedDifferent) {
  SyntheticConfig config = Small(5);
  config.pixel_noise_sigma = 0.5;
  config.n_outlier_tracks = 5;
  config.pose_perturbation = {1.0, 0.02};
  const auto a = Serialize(GenerateSynthetic(config));
  const auto b = Serialize(GenerateSynthetic(config));
  EXPECT_EQ(a, b);
  config.seed = 6;
  EXPECT_NE(Serialize(GenerateSynthetic(config)).second, a.second);
}

TEST(Synthetic, OutliersHaveOneDisplacedObservation) {
  SyntheticConfig config = Small(7);
  config.n_outlier_tracks = 10;
  config.outlier_magnitude = 50.0;
  const Dataset d = GenerateSynthetic(config);
  const auto& ids = d.ground_truth->outlier_track_ids;
  ASSERT_EQ(ids.size(), 10u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 10u);
  const CameraLookup lookup(d.cameras);
  for (size_t t = 0; t < d.tracks.size(); ++t) {
    const Track& track = d.tracks[t];
    const bool outlier = std::find(ids.begin(), ids.end(), track.id) != ids.end();
    int displaced = 0;
    for (const auto& obs : track.observations) {
      const size_t c = *lookup.IndexOf(obs.camera_id);
      const double error =
          (Project(d.cameras[c], d.ground_truth->poses[c], d.ground_truth->points[t]) - obs.pixel).norm();
      if (error > 1e-6) {
        ++displaced;
        EXPECT_NEAR(error, 50.0, 1e-6);
      }
    }
    EXPECT_EQ(displaced, outlier ? 1 : 0) << track.id;
  }
}

TEST(Synthetic, PerturbationMagnitudes) {
  SyntheticConfig config = Small(8);
  config.pose_perturbation = {2.0, 0.05};
  const Dataset d = GenerateSynthetic(config);
  for (size_t i = 0; i < d.cameras.size(); ++i) {
    EXPECT_NEAR(RotationDifferenceDeg(d.cameras[i].pose_initial.rotation,
                                      d.ground_truth->poses[i].rotation),
                2.0, 1e-9);
    const double shift = (d.cameras[i].pose_initial.center - d.ground_truth->poses[i].center).norm();
    // Fraction of the altitude-10 camera's slant distance at 45 degrees.
    EXPECT_NEAR(shift, 0.05 * 10.0 * std::sqrt(2.0), 1e-9);
  }
}

TEST(Synthetic, TurnMaskMarksHoveringCameras) {
  SyntheticConfig config = Small(9);
  config.n_cameras = 40;
  config.trajectory = Trajectory::kSharpTurns;
  const auto mask = TurnCameraMask(config);
  ASSERT_EQ(mask.size(), 40u);
  const long turns = std::count(mask.begin(), mask.end(), true);
  EXPECT_GT(turns, 0);
  EXPECT_LT(turns, 40);
  config.trajectory = Trajectory::kStraight;
  const auto straight = TurnCameraMask(config);
  EXPECT_EQ(std::count(straight.begin(), straight.end(), true), 0);
}

TEST(Synthetic, InfeasibleConfigs) {
  SyntheticConfig config = Small(1);
  config.n_cameras = 1;
  EXPECT_THROW(GenerateSynthetic(config), InfeasibleConfig);
  config = Small(1);
  config.n_outlier_tracks = 151;
  EXPECT_THROW(GenerateSynthetic(config), InfeasibleConfig);
  config = Small(1);
  config.pixel_noise_sigma = -1.0;
  EXPECT_THROW(GenerateSynthetic(config), InfeasibleConfig);
  EXPECT_THROW(TrajectoryFromString("zigzag"), ValueError);
  EXPECT_EQ(TrajectoryFromString(ToString(Trajectory::kLoop)), Trajectory::kLoop);
}

TEST(Validate, FlagsLowAnglesUnreferencedCamerasAndOutOfBounds) {
  Dataset d = testing::SmallScene(3, 2, 0.0, 2);
  EXPECT_TRUE(Validate(d).empty());

  Camera spare = d.cameras[0];
  spare.id = "spare";
  d.cameras.push_back(spare);
  d.tracks[0].observations[0].pixel = {-5.0, 10.0};
  // Two nearly coincident cameras observing a far point.
  Camera near_a = d.cameras[0], near_b = d.cameras[0];
  near_a.id = "near_a";
  near_b.id = "near_b";
  near_b.pose_initial.center += Eigen::Vector3d(1e-3, 0, 0);
  d.cameras.push_back(near_a);
  d.cameras.push_back(near_b);
  Track thin;
  thin.id = "thin";
  thin.point_initial = Eigen::Vector3d::Zero();
  thin.observations = {{"near_a", Project(near_a, near_a.pose_initial, thin.point_initial)},
                       {"near_b", Project(near_b, near_b.pose_initial, thin.point_initial)}};
  d.tracks.push_back(thin);

  std::set<std::string> subjects;
  for (const auto& w : Validate(d)) subjects.insert(w.subject);
  EXPECT_TRUE(subjects.count("spare"));
  EXPECT_TRUE(subjects.count("thin"));
  EXPECT_TRUE(subjects.count(d.tracks[0].id));
  EXPECT_FALSE(subjects.count(d.tracks[1].id));
}

}  // namespace
}  // namespace vec
