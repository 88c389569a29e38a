#include "vector/analysis.h"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "vector/errors.h"

namespace vec {
namespace {

double RoundTo(double value, int digits) {
  if (!std::isfinite(value)) return value;
  const double factor = std::pow(10.0, digits);
  return std::round(value * factor) / factor;
}

struct Accumulator {
  double initial_sq = 0.0;
  size_t initial_n = 0;
  double final_sq = 0.0;
  double final_sum = 0.0;
  double final_max = 0.0;
  size_t final_n = 0;
  Eigen::Vector2d direction_sum = Eigen::Vector2d::Zero();
  size_t direction_n = 0;

  void AddInitial(const ResidualRecord& r) {
    initial_sq += r.length * r.length;
    ++initial_n;
  }

  void AddFinal(const ResidualRecord& r) {
    final_sq += r.length * r.length;
    final_sum += r.length;
    final_max = std::max(final_max, r.length);
    ++final_n;
    if (r.length > 0.0) {
      direction_sum += r.vector / r.length;
      ++direction_n;
    }
  }

  double MeanFinal() const { return final_n ? final_sum / final_n : 0.0; }
  double DeltaRms() const {
    const double post = final_n ? std::sqrt(final_sq / final_n) : 0.0;
    const double pre = initial_n ? std::sqrt(initial_sq / initial_n) : 0.0;
    return post - pre;
  }
  double Concentration() const {
    return direction_n ? std::min(1.0, direction_sum.norm() / direction_n) : 0.0;
  }
};

double KeyValue(const Accumulator& acc, RankKey key) {
  switch (key) {
    case RankKey::kMaxFinalLength: return acc.final_max;
    case RankKey::kMeanFinalLength: return acc.MeanFinal();
    case RankKey::kDeltaRms: return acc.DeltaRms();
    case RankKey::kConcentration: return acc.Concentration();
  }
  return 0.0;
}

// Groups records by an id field, preserving nothing about input order; the
// output is sorted so results are permutation invariant.
template <typename IdFn>
std::vector<std::pair<std::string, Accumulator>> Aggregate(
    std::span<const ResidualRecord> initial,
    std::span<const ResidualRecord> final, IdFn id_of, RankKey key) {
  std::unordered_map<std::string, Accumulator> groups;
  for (const auto& r : initial) groups[id_of(r)].AddInitial(r);
  for (const auto& r : final) groups[id_of(r)].AddFinal(r);
  std::vector<std::pair<std::string, Accumulator>> ordered(groups.begin(),
                                                           groups.end());
  std::sort(ordered.begin(), ordered.end(), [key](const auto& a, const auto& b) {
    const double ka = KeyValue(a.second, key);
    const double kb = KeyValue(b.second, key);
    if (ka != kb) return ka > kb;
    return a.first < b.first;
  });
  return ordered;
}

void RequireFinal(const Dataset& dataset, const BAResult* result) {
  if (result == nullptr) {
    throw MissingFinalState("ranking needs a bundle adjustment result for '" +
                            dataset.name + "'");
  }
}

}  // namespace

void FilterState::Check() const {
  if (!(length_min <= length_max)) throw ValueError("length_min > length_max");
  if (!(angle_start >= 0.0 && angle_start < 360.0)) {
    throw ValueError("angle_start must lie in [0, 360)");
  }
  if (!(angle_end >= 0.0 && angle_end <= 360.0)) {
    throw ValueError("angle_end must lie in [0, 360]");
  }
  if (precision < 0 || precision > 12) {
    throw ValueError("precision must lie in [0, 12]");
  }
  if (!(scale > 0.0)) throw ValueError("scale must be > 0");
}

HistogramData Histogram(std::span<const ResidualRecord> residuals, int n_bins,
                        HistogramRange range) {
  if (n_bins < 1) throw ValueError("histogram needs at least one bin");
  if (!(range.max > range.min)) throw ValueError("histogram range is empty");
  HistogramData data;
  data.counts.assign(n_bins, 0);
  const double width = range.max - range.min;
  for (int i = 0; i <= n_bins; ++i) {
    data.bin_edges.push_back(i == n_bins ? range.max
                                         : range.min + width * i / n_bins);
  }
  for (const auto& r : residuals) {
    const double x = r.length;
    long index = static_cast<long>(std::floor((x - range.min) * n_bins / width));
    index = std::clamp<long>(index, 0, n_bins - 1);
    // Settle edge cases against the published edges.
    while (index < n_bins - 1 && x >= data.bin_edges[index + 1]) ++index;
    while (index > 0 && x < data.bin_edges[index]) --index;
    ++data.counts[index];
  }
  return data;
}

HistogramData DefaultHistogram(std::span<const ResidualRecord> residuals) {
  double max_length = 0.0;
  for (const auto& r : residuals) max_length = std::max(max_length, r.length);
  return Histogram(residuals, 20, {0.0, max_length > 0.0 ? max_length : 1.0});
}

RadialData Radial(std::span<const ResidualRecord> residuals) {
  RadialData data;
  data.endpoints.reserve(residuals.size());
  for (const auto& r : residuals) {
    data.endpoints.push_back(r.vector);
    data.max_radius = std::max(data.max_radius, r.length);
  }
  return data;
}

SlopePairs MakeSlopePairs(std::span<const ResidualRecord> initial,
                          std::span<const ResidualRecord> final) {
  std::unordered_map<std::string, const ResidualRecord*> post;
  post.reserve(final.size());
  for (const auto& r : final) post.emplace(r.camera_id + '\n' + r.track_id, &r);

  SlopePairs result;
  size_t matched = 0;
  for (const auto& r : initial) {
    auto it = post.find(r.camera_id + '\n' + r.track_id);
    if (it == post.end()) {
      ++result.omitted;
      continue;
    }
    result.pairs.push_back({r.camera_id, r.track_id, r.length, it->second->length});
    ++matched;
  }
  result.omitted += final.size() - matched;
  return result;
}

double AngularConcentration(std::span<const Eigen::Vector2d> vectors) {
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  size_t n = 0;
  for (const auto& v : vectors) {
    const double length = v.norm();
    if (length == 0.0) continue;
    sum += v / length;
    ++n;
  }
  if (n == 0) throw EmptyInput("no non-zero residuals");
  return std::min(1.0, sum.norm() / static_cast<double>(n));
}

double AngularConcentration(std::span<const ResidualRecord> residuals) {
  std::vector<Eigen::Vector2d> vectors;
  vectors.reserve(residuals.size());
  for (const auto& r : residuals) vectors.push_back(r.vector);
  return AngularConcentration(std::span<const Eigen::Vector2d>(vectors));
}

std::string_view ToString(RankKey key) {
  switch (key) {
    case RankKey::kMaxFinalLength: return "max_final_length";
    case RankKey::kMeanFinalLength: return "mean_final_length";
    case RankKey::kDeltaRms: return "delta_rms";
    case RankKey::kConcentration: return "concentration";
  }
  return "max_final_length";
}

RankKey RankKeyFromString(std::string_view text) {
  if (text == "max_final_length") return RankKey::kMaxFinalLength;
  if (text == "mean_final_length") return RankKey::kMeanFinalLength;
  if (text == "delta_rms") return RankKey::kDeltaRms;
  if (text == "concentration") return RankKey::kConcentration;
  throw ValueError("unknown rank key '" + std::string(text) + "'");
}

std::vector<TrackScore> RankTracks(std::span<const ResidualRecord> initial,
                                   std::span<const ResidualRecord> final,
                                   RankKey key) {
  std::vector<TrackScore> scores;
  for (const auto& [id, acc] : Aggregate(
           initial, final, [](const ResidualRecord& r) { return r.track_id; },
           key)) {
    scores.push_back({id, acc.final_max, acc.MeanFinal(), acc.DeltaRms(),
                      acc.Concentration(), std::max(acc.initial_n, acc.final_n)});
  }
  return scores;
}

std::vector<ImageScore> RankImages(std::span<const ResidualRecord> initial,
                                   std::span<const ResidualRecord> final,
                                   RankKey key) {
  std::vector<ImageScore> scores;
  for (const auto& [id, acc] : Aggregate(
           initial, final, [](const ResidualRecord& r) { return r.camera_id; },
           key)) {
    scores.push_back({id, acc.final_max, acc.MeanFinal(), acc.DeltaRms(),
                      acc.Concentration(), std::max(acc.initial_n, acc.final_n)});
  }
  return scores;
}

std::vector<TrackScore> RankTracks(const Dataset& dataset,
                                   const BAResult* result, RankKey key) {
  RequireFinal(dataset, result);
  return RankTracks(result->residuals_initial, result->residuals_final, key);
}

std::vector<ImageScore> RankImages(const Dataset& dataset,
                                   const BAResult* result, RankKey key) {
  RequireFinal(dataset, result);
  return RankImages(result->residuals_initial, result->residuals_final, key);
}

bool PassesFilter(const ResidualRecord& record, const FilterState& filter) {
  if (record.kind == ResidualKind::kInitial && !filter.include_initial) return false;
  if (record.kind == ResidualKind::kFinal && !filter.include_final) return false;

  const double length = RoundTo(record.length, filter.precision);
  if (length < filter.length_min || length > filter.length_max) return false;

  double angle = RoundTo(record.angle, filter.precision);
  if (angle >= 360.0) angle -= 360.0;
  if (filter.angle_start <= filter.angle_end) {
    return angle >= filter.angle_start && angle <= filter.angle_end;
  }
  return angle >= filter.angle_start || angle <= filter.angle_end;
}

std::vector<ResidualRecord> ApplyFilter(std::span<const ResidualRecord> residuals,
                                        const FilterState& filter) {
  filter.Check();
  std::vector<ResidualRecord> kept;
  for (const auto& r : residuals) {
    if (PassesFilter(r, filter)) kept.push_back(r);
  }
  return kept;
}

ImageSummary SummarizeImage(const std::string& camera_id,
                            std::span<const ResidualRecord> residuals) {
  std::vector<ResidualRecord> initial;
  std::vector<ResidualRecord> final;
  std::vector<ResidualRecord> all;
  for (const auto& r : residuals) {
    if (r.camera_id != camera_id) continue;
    all.push_back(r);
    (r.kind == ResidualKind::kInitial ? initial : final).push_back(r);
  }
  ImageSummary summary;
  summary.camera_id = camera_id;
  summary.histogram = DefaultHistogram(all);
  summary.radial = Radial(all);
  summary.slopes = MakeSlopePairs(initial, final);
  summary.num_initial = initial.size();
  summary.num_final = final.size();
  return summary;
}

}  // namespace vec
