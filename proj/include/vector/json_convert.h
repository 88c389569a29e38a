#pragma once

#include <json.hpp>

#include "vector/analysis.h"
#include "vector/bundle_adjust.h"
#include "vector/dataset.h"
#include "vector/session.h"

namespace vec {

using Json = nlohmann::json;

// Field names here are the wire format of the session file, the CLI
// reports and the HTTP API.

void to_json(Json& j, const Intrinsics& k);
void to_json(Json& j, const Pose& pose);
void from_json(const Json& j, Pose& pose);
Json PointJson(const Eigen::Vector3d& p);
Eigen::Vector3d PointFromJson(const Json& j);

void to_json(Json& j, const BAConfig& config);
// Missing fields keep their defaults; throws ValueError on bad types.
BAConfig BAConfigFromJson(const Json& j);

void to_json(Json& j, const SyntheticConfig& config);
SyntheticConfig SyntheticConfigFromJson(const Json& j);

void to_json(Json& j, const FilterState& filter);
// Accepts {kinds: [...], length_range: [min, max|null], angle_range:
// [start, end], precision, scale}; missing fields keep defaults.
FilterState FilterStateFromJson(const Json& j);

void to_json(Json& j, const ResidualRecord& r);
void to_json(Json& j, const HistogramData& h);
void to_json(Json& j, const RadialData& r);
void to_json(Json& j, const SlopePairs& s);
void to_json(Json& j, const TrackScore& s);
void to_json(Json& j, const ImageScore& s);
void to_json(Json& j, const ImageSummary& s);
void to_json(Json& j, const Warning& w);

void to_json(Json& j, const EditOp& op);
EditOp EditOpFromJson(const Json& j);
void to_json(Json& j, const EditOutcome& outcome);
void to_json(Json& j, const SlopeSummary& s);
void to_json(Json& j, const ComparisonReport& report);

// Summary of a BA result: termination, iterations, cost trace, RMS.
Json BAResultSummary(const BAResult& result);

// Run record as stored in the session file (includes final poses/points).
Json RunRecordJson(const RunRecord& run);

// Analysis report for one run: summary, histogram, radial, concentration,
// top-ranked tracks and images.
Json RunReport(const RunRecord& run, size_t top_n = 20);

}  // namespace vec
