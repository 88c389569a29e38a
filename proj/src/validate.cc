#include <cstdio>
#include <unordered_set>

#include "vector/dataset.h"
#include "vector/errors.h"

namespace vec {

std::vector<Warning> Validate(const Dataset& dataset) {
  std::vector<Warning> warnings;
  const CameraLookup lookup(dataset.cameras);

  std::unordered_set<std::string_view> referenced;
  for (const auto& track : dataset.tracks) {
    for (const auto& obs : track.observations) {
      referenced.insert(obs.camera_id);
      const Camera& camera = lookup.At(obs.camera_id);
      const auto& k = camera.intrinsics;
      if (!(obs.pixel.x() >= 0.0 && obs.pixel.x() < k.width &&
            obs.pixel.y() >= 0.0 && obs.pixel.y() < k.height)) {
        char text[160];
        std::snprintf(text, sizeof(text),
                      "observation (%.3f, %.3f) in camera '%s' is outside "
                      "the %dx%d image",
                      obs.pixel.x(), obs.pixel.y(), camera.id.c_str(), k.width,
                      k.height);
        warnings.push_back({track.id, text});
      }
    }
    if (track.observations.size() >= 2) {
      const double angle = TriangulationAngle(track, lookup);
      if (angle < kLowTriangulationAngleDeg) {
        char text[96];
        std::snprintf(text, sizeof(text),
                      "low triangulation angle %.4f deg (ill-posed)", angle);
        warnings.push_back({track.id, text});
      }
    }
  }
  for (const auto& camera : dataset.cameras) {
    if (!referenced.contains(camera.id)) {
      warnings.push_back({camera.id, "camera is not referenced by any track"});
    }
  }
  return warnings;
}

}  // namespace vec
