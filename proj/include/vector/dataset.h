#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vector/geometry.h"

namespace vec {

struct GroundTruth {
  std::vector<Pose> poses;               // parallel to Dataset::cameras
  std::vector<Eigen::Vector3d> points;   // parallel to Dataset::tracks
  std::vector<std::string> outlier_track_ids;
};

struct Dataset {
  std::string name;
  std::vector<Camera> cameras;
  std::vector<Track> tracks;
  std::optional<GroundTruth> ground_truth;

  size_t NumObservations() const;
};

// Non-fatal findings from parsing or validation.
struct Warning {
  std::string subject;  // camera or track id, empty for document level
  std::string message;

  bool operator==(const Warning&) const = default;
};

//
// XML. Two documents: <cameras> and <tracks>; the element layout is
// described in the README. Parsing is event driven (expat) so memory is
// bounded by a single element, not by document size.
//

std::vector<Camera> ParseCameras(std::string_view xml,
                                 std::vector<Warning>* warnings = nullptr);
std::vector<Camera> ParseCameras(std::istream& input,
                                 std::vector<Warning>* warnings = nullptr);

std::vector<Track> ParseTracks(std::string_view xml,
                               std::span<const Camera> cameras,
                               std::vector<Warning>* warnings = nullptr);

// Streams tracks one at a time to `visitor`; nothing but the current track
// is retained.
void StreamTracks(std::istream& input, std::span<const Camera> cameras,
                  const std::function<void(Track&&)>& visitor,
                  std::vector<Warning>* warnings = nullptr);

// Incremental writers, used by Serialize and for producing very large files
// without materializing a Dataset.
class CamerasXmlWriter {
 public:
  explicit CamerasXmlWriter(std::ostream& out);
  void Write(const Camera& camera);
  void Finish();

 private:
  std::ostream& out_;
  bool finished_ = false;
};

class TracksXmlWriter {
 public:
  explicit TracksXmlWriter(std::ostream& out);
  void Write(const Track& track);
  void Finish();

 private:
  std::ostream& out_;
  bool finished_ = false;
};

// Numbers are printed with 17 significant digits, so Parse(Serialize(x))
// reproduces every double exactly.
std::pair<std::string, std::string> Serialize(const Dataset& dataset);

std::string ReadFile(const std::string& path);
void WriteFile(const std::string& path, std::string_view contents);

Dataset LoadDataset(const std::string& cameras_path,
                    const std::string& tracks_path,
                    std::vector<Warning>* warnings = nullptr);
void SaveDataset(const Dataset& dataset, const std::string& cameras_path,
                 const std::string& tracks_path);

//
// Synthetic scenes.
//

enum class Trajectory { kStraight, kSharpTurns, kLoop };

std::string_view ToString(Trajectory trajectory);
Trajectory TrajectoryFromString(std::string_view text);

struct PosePerturbation {
  double rotation_deg = 0.0;
  // Fraction of the nominal camera-to-ground viewing distance.
  double translation_frac = 0.0;
};

struct SyntheticConfig {
  int n_cameras = 20;
  Trajectory trajectory = Trajectory::kStraight;
  int n_points = 500;
  double pixel_noise_sigma = 0.0;
  int n_outlier_tracks = 0;
  double outlier_magnitude = 50.0;
  PosePerturbation pose_perturbation;
  uint64_t seed = 0;
};

// Cameras fly over a ground plane at fixed altitude, looking forward and
// down. Observations are exact projections plus Gaussian noise (Box-Muller
// over mt19937_64); outlier tracks get one observation displaced by
// outlier_magnitude. Initial poses are the truth perturbed per
// pose_perturbation; initial points are triangulated from those poses.
Dataset GenerateSynthetic(const SyntheticConfig& config);

// For kSharpTurns: true for cameras that are hovering through a turn.
std::vector<bool> TurnCameraMask(const SyntheticConfig& config);

// Unreferenced cameras, tracks with triangulation angle below 1 degree and
// observations outside image bounds.
std::vector<Warning> Validate(const Dataset& dataset);

}  // namespace vec
