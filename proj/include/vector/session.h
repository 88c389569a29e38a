#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vector/analysis.h"
#include "vector/bundle_adjust.h"
#include "vector/dataset.h"

namespace vec {

enum class EditKind { kDeleteTrack, kDeleteCamera, kRestore };

std::string_view ToString(EditKind kind);
EditKind EditKindFromString(std::string_view text);

struct EditOp {
  EditKind kind = EditKind::kDeleteTrack;
  std::string target_id;
  uint64_t timestamp = 0;  // position in the log, starting at 1

  bool operator==(const EditOp&) const = default;
};

// What an edit did beyond its target.
struct EditOutcome {
  EditOp op;
  std::vector<std::string> cascaded_track_ids;  // removed by camera deletion
  std::vector<std::string> restored_track_ids;  // returned by camera restore
  std::vector<Warning> warnings;                // e.g. cameras left unobserved
};

// Deleted ids after replaying a log. Explicit deletions only; tracks that
// lost observations are derived by MakeEffective.
struct DeletionSet {
  std::set<std::string> tracks;
  std::set<std::string> cameras;
};

// Replays `log` over `base`, validating every op. Throws UnknownId,
// AlreadyDeleted, TooFewCamerasRemaining or ValueError (restore of an id
// that is not deleted).
DeletionSet ReplayEdits(const Dataset& base, std::span<const EditOp> log);

// Base minus deleted cameras (and their observations) minus deleted tracks
// minus tracks left with fewer than two observations. Final states are
// dropped: they belong to runs, not to the dataset.
Dataset MakeEffective(const Dataset& base, const DeletionSet& deleted);

// SHA-256 over the serialized initial state (ids, intrinsics, initial poses
// and points, observations). Final entries do not contribute.
std::string ProblemDigest(const Dataset& dataset);

// SHA-256 over the bytes of the two base files.
std::string FileDigest(std::string_view cameras_bytes, std::string_view tracks_bytes);

struct BaseRef {
  std::string cameras_path;
  std::string tracks_path;
  std::string digest;
};

struct RunRecord {
  int id = 0;
  std::string digest;     // ProblemDigest of the effective dataset
  size_t edit_count = 0;  // prefix of the edit log in force for this run
  BAConfig config;
  BAResult result;
};

// Everything a BA run needs, detached from the session so that the run can
// proceed without holding the session.
struct RunSnapshot {
  Dataset effective;
  size_t edit_count = 0;
  std::string digest;
};

// Triangulates tracks without a finite initial point, then runs BA.
RunRecord ExecuteRun(const RunSnapshot& snapshot, const BAConfig& config,
                     const IterationCallback& callback = {});

struct SlopeSummary {
  std::string id;
  double rms_a = 0.0;
  double rms_b = 0.0;
  size_t count = 0;
};

struct ComparisonReport {
  int run_a = 0;
  int run_b = 0;
  double total_error_a = 0.0;
  double total_error_b = 0.0;
  double delta_total_error = 0.0;  // b - a, final costs
  double rms_a = 0.0;
  double rms_b = 0.0;
  double delta_rms = 0.0;  // b - a, final RMS over each run's observations
  // Statistics over observations present in both runs.
  size_t paired_count = 0;
  double paired_rms_a = 0.0;
  double paired_rms_b = 0.0;
  double paired_delta_rms = 0.0;
  std::vector<SlopeSummary> per_track;
  std::vector<SlopeSummary> per_image;
  std::vector<std::string> removed_track_ids;
  std::vector<std::string> added_track_ids;
  std::vector<std::string> removed_camera_ids;
  std::vector<std::string> added_camera_ids;
};

// Identify -> delete -> re-run -> compare. The base dataset is never
// mutated; the effective dataset is a pure function of (base, edit log).
// Not thread safe: callers serialise writers (see interface/service).
class Session {
 public:
  Session(Dataset base, BaseRef base_ref);

  const Dataset& base() const { return base_; }
  const BaseRef& base_ref() const { return base_ref_; }
  const std::vector<EditOp>& edit_log() const { return edits_; }
  const std::vector<RunRecord>& runs() const { return runs_; }
  const Dataset& effective() const { return effective_; }

  EditOutcome DeleteTrack(const std::string& track_id);
  EditOutcome DeleteCamera(const std::string& camera_id);
  EditOutcome Restore(const std::string& target_id);
  EditOutcome Apply(EditKind kind, const std::string& target_id);

  RunSnapshot Snapshot() const;
  // Records a finished run. Throws ValueError if the log moved since the
  // snapshot was taken.
  const RunRecord& Record(RunRecord run);
  const RunRecord& Rerun(const BAConfig& config,
                         const IterationCallback& callback = {});

  const RunRecord& FindRun(int run_id) const;  // throws UnknownRun
  const RunRecord* LatestRun() const;
  ComparisonReport Compare(int run_a, int run_b) const;

  // The effective dataset with final states from the latest run, for the
  // entities still present.
  Dataset CurrentView() const;

  // JSON {base, edits, runs, checksum}. Relative base paths are resolved
  // against the session file's directory.
  void Save(const std::string& path) const;
  static Session Load(const std::string& path);

 private:
  EditOutcome Append(EditOp op);

  Dataset base_;
  BaseRef base_ref_;
  std::vector<EditOp> edits_;
  std::vector<RunRecord> runs_;
  Dataset effective_;
};

// Base files are digested on construction.
Session OpenSession(const std::string& cameras_path,
                    const std::string& tracks_path);

}  // namespace vec
