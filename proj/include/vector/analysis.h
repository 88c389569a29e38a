#pragma once

#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vector/bundle_adjust.h"
#include "vector/dataset.h"
#include "vector/geometry.h"

namespace vec {

struct HistogramData {
  // n_bins + 1 ascending edges. Bins are [e_i, e_{i+1}) except the last,
  // which also includes its right edge.
  std::vector<double> bin_edges;
  std::vector<size_t> counts;
};

struct RadialData {
  std::vector<Eigen::Vector2d> endpoints;
  double max_radius = 0.0;
};

struct SlopePair {
  std::string camera_id;
  std::string track_id;
  double pre_length = 0.0;
  double post_length = 0.0;
};

struct SlopePairs {
  std::vector<SlopePair> pairs;
  size_t omitted = 0;  // records without a counterpart of the other kind
};

struct FilterState {
  bool include_initial = true;
  bool include_final = true;
  double length_min = 0.0;
  double length_max = std::numeric_limits<double>::infinity();
  // Inclusive on both ends; start > end wraps through 0 (e.g. [350, 10]).
  double angle_start = 0.0;
  double angle_end = 360.0;
  // Lengths and angles are rounded to this many decimals before the range
  // tests.
  int precision = 12;
  // Display magnification for residual lines; never used for membership.
  double scale = 1.0;

  // Throws ValueError when an invariant does not hold.
  void Check() const;
};

struct HistogramRange {
  double min = 0.0;
  double max = 1.0;
};

// Equal-width bins over `range`; lengths outside are clamped into the end
// bins.
HistogramData Histogram(std::span<const ResidualRecord> residuals, int n_bins,
                        HistogramRange range);

// Default chart histogram: 20 bins over [0, max length] (or [0, 1] when all
// lengths are zero).
HistogramData DefaultHistogram(std::span<const ResidualRecord> residuals);

RadialData Radial(std::span<const ResidualRecord> residuals);

// Inner join on (camera_id, track_id).
SlopePairs MakeSlopePairs(std::span<const ResidualRecord> initial,
                          std::span<const ResidualRecord> final);

// Mean resultant length of the residual directions in [0, 1]; zero-length
// residuals are skipped. Throws EmptyInput when nothing remains.
double AngularConcentration(std::span<const ResidualRecord> residuals);
double AngularConcentration(std::span<const Eigen::Vector2d> vectors);

enum class RankKey { kMaxFinalLength, kMeanFinalLength, kDeltaRms, kConcentration };

std::string_view ToString(RankKey key);
RankKey RankKeyFromString(std::string_view text);

struct TrackScore {
  std::string track_id;
  double max_final_length = 0.0;
  double mean_final_length = 0.0;
  double delta_rms = 0.0;  // final RMS - initial RMS
  double concentration = 0.0;
  size_t num_observations = 0;
};

struct ImageScore {
  std::string camera_id;
  double max_final_length = 0.0;
  double mean_final_length = 0.0;
  double delta_rms = 0.0;
  double concentration = 0.0;
  size_t num_residuals = 0;
};

// Descending by key, ties broken by ascending id. Entities with no
// non-zero final residual get concentration 0.
std::vector<TrackScore> RankTracks(std::span<const ResidualRecord> initial,
                                   std::span<const ResidualRecord> final,
                                   RankKey key);
std::vector<ImageScore> RankImages(std::span<const ResidualRecord> initial,
                                   std::span<const ResidualRecord> final,
                                   RankKey key);

// Dataset-level variants; throw MissingFinalState when BA has not run.
std::vector<TrackScore> RankTracks(const Dataset& dataset,
                                   const BAResult* result, RankKey key);
std::vector<ImageScore> RankImages(const Dataset& dataset,
                                   const BAResult* result, RankKey key);

bool PassesFilter(const ResidualRecord& record, const FilterState& filter);
std::vector<ResidualRecord> ApplyFilter(std::span<const ResidualRecord> residuals,
                                        const FilterState& filter);

struct ImageSummary {
  std::string camera_id;
  HistogramData histogram;
  RadialData radial;
  SlopePairs slopes;
  size_t num_initial = 0;
  size_t num_final = 0;
};

// Chart bundle for one image card. Records of other cameras are ignored.
ImageSummary SummarizeImage(const std::string& camera_id,
                            std::span<const ResidualRecord> residuals);

}  // namespace vec
