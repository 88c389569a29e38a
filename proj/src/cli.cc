#include "vector/cli.h"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "vector/errors.h"
#include "vector/json_convert.h"
#include "vector/service.h"

namespace vec {
namespace {

namespace fs = std::filesystem;

Json ReadJsonFile(const std::string& path) {
  try {
    return Json::parse(ReadFile(path));
  } catch (const Json::exception& e) {
    throw ValueError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::vector<std::string> ReadIdList(const std::string& path) {
  std::istringstream in(ReadFile(path));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos || line[begin] == '#') continue;
    const auto end = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(begin, end - begin + 1));
  }
  return ids;
}

Json GroundTruthJson(const Dataset& dataset) {
  const GroundTruth& truth = *dataset.ground_truth;
  Json poses = Json::array();
  for (size_t i = 0; i < truth.poses.size(); ++i) {
    Json pose = truth.poses[i];
    pose["camera_id"] = dataset.cameras[i].id;
    poses.push_back(std::move(pose));
  }
  Json points = Json::array();
  for (size_t i = 0; i < truth.points.size(); ++i) {
    Json point = PointJson(truth.points[i]);
    point["track_id"] = dataset.tracks[i].id;
    points.push_back(std::move(point));
  }
  return {{"poses", poses},
          {"points", points},
          {"outlier_track_ids", truth.outlier_track_ids}};
}

Json RunSummary(const RunRecord& run) {
  Json summary = BAResultSummary(run.result);
  summary["run"] = run.id;
  summary["digest"] = run.digest;
  summary["edit_count"] = run.edit_count;
  summary["config"] = run.config;
  return summary;
}

void PrintRun(const RunRecord& run, std::ostream& out) {
  const BAResult& r = run.result;
  out << "run " << run.id << ": " << r.iterations << " iterations, "
      << ToString(r.termination_reason) << ", rms " << r.InitialRms() << " -> "
      << r.FinalRms() << " px\n";
}

BAConfig LoadBAConfig(const std::string& path) {
  return path.empty() ? BAConfig{} : BAConfigFromJson(ReadJsonFile(path));
}

int Synth(const std::string& config_path, std::optional<uint64_t> seed,
          const std::string& out_dir, std::ostream& out) {
  SyntheticConfig config = SyntheticConfigFromJson(ReadJsonFile(config_path));
  if (seed) config.seed = *seed;
  const Dataset dataset = GenerateSynthetic(config);
  fs::create_directories(out_dir);
  SaveDataset(dataset, (fs::path(out_dir) / "cameras.xml").string(),
              (fs::path(out_dir) / "tracks.xml").string());
  WriteFile((fs::path(out_dir) / "ground_truth.json").string(),
            GroundTruthJson(dataset).dump(1));
  out << "wrote " << dataset.cameras.size() << " cameras and "
      << dataset.tracks.size() << " tracks to " << out_dir << "\n";
  return 0;
}

int BaFiles(const std::string& cameras_path, const std::string& tracks_path,
            const std::string& config_path, const std::string& out_dir,
            std::ostream& out, std::ostream& err) {
  const BAConfig config = LoadBAConfig(config_path);
  std::vector<Warning> warnings;
  Dataset input = LoadDataset(cameras_path, tracks_path, &warnings);
  for (const auto& w : Validate(input)) warnings.push_back(w);
  for (const auto& w : warnings) err << "warning: " << w.subject << ": " << w.message << "\n";

  const Dataset effective = MakeEffective(input, {});
  RunRecord run = ExecuteRun({effective, 0, ProblemDigest(effective)}, config);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  Dataset with_finals = effective;
  ApplyResult(run.result, &with_finals);
  const std::string out_cameras = (dir / "cameras.xml").string();
  const std::string out_tracks = (dir / "tracks.xml").string();
  SaveDataset(with_finals, out_cameras, out_tracks);

  BaseRef ref{"cameras.xml", "tracks.xml",
              FileDigest(ReadFile(out_cameras), ReadFile(out_tracks))};
  Session session(LoadDataset(out_cameras, out_tracks), std::move(ref));
  const RunRecord& recorded = session.Record(std::move(run));
  session.Save((dir / "session.json").string());
  WriteFile((dir / "ba_result.json").string(), RunSummary(recorded).dump(1));
  PrintRun(recorded, out);
  return 0;
}

int BaSession(const std::string& session_path, const std::string& config_path,
              std::ostream& out) {
  const BAConfig config = LoadBAConfig(config_path);
  Session session = Session::Load(session_path);
  const RunRecord& run = session.Rerun(config);
  session.Save(session_path);
  const fs::path dir = fs::path(session_path).parent_path();
  const std::string stem = "run_" + std::to_string(run.id);
  SaveDataset(session.CurrentView(), (dir / (stem + "_cameras.xml")).string(),
              (dir / (stem + "_tracks.xml")).string());
  WriteFile((dir / (stem + "_ba_result.json")).string(), RunSummary(run).dump(1));
  PrintRun(run, out);
  return 0;
}

int Report(const std::string& session_path, const std::string& out_path,
           std::ostream& out) {
  const Session session = Session::Load(session_path);
  const RunRecord* latest = session.LatestRun();
  if (latest == nullptr) throw MissingFinalState("session has no recorded runs");
  Json runs = Json::array();
  for (const auto& run : session.runs()) runs.push_back(RunSummary(run));
  Json report = {{"edit_count", session.edit_log().size()},
                 {"runs", runs},
                 {"latest", RunReport(*latest)}};
  if (session.runs().size() >= 2) {
    report["comparison"] = session.Compare(0, latest->id);
  }
  if (out_path.empty() || out_path == "-") {
    out << report.dump(1) << "\n";
  } else {
    WriteFile(out_path, report.dump(1));
  }
  return 0;
}

int Edit(const std::string& session_path, const std::string& tracks_file,
         const std::string& cameras_file, std::ostream& out, std::ostream& err) {
  Session session = Session::Load(session_path);
  Json outcomes = Json::array();
  auto apply = [&](EditKind kind, const std::string& file) {
    if (file.empty()) return;
    for (const auto& id : ReadIdList(file)) {
      EditOutcome outcome = session.Apply(kind, id);
      for (const auto& w : outcome.warnings) {
        err << "warning: " << w.subject << ": " << w.message << "\n";
      }
      outcomes.push_back(std::move(outcome));
    }
  };
  apply(EditKind::kDeleteCamera, cameras_file);
  apply(EditKind::kDeleteTrack, tracks_file);
  session.Save(session_path);
  out << Json({{"applied", outcomes.size()},
               {"edit_count", session.edit_log().size()},
               {"remaining_tracks", session.effective().tracks.size()},
               {"remaining_cameras", session.effective().cameras.size()}})
             .dump()
      << "\n";
  return 0;
}

int Serve(const std::string& session_path, const std::string& host, int port,
          std::ostream& out) {
  Service service(Session::Load(session_path), session_path);
  out << "serving " << session_path << " on http://" << host << ":" << port << "\n"
      << std::flush;
  service.Listen(host, port);
  return 0;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bundle adjustment inspection: synthesize, adjust, report, edit, serve"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_config, synth_out;
  std::optional<uint64_t> synth_seed;
  synth->add_option("--config", synth_config, "Synthetic config JSON")->required();
  synth->add_option("--seed", synth_seed, "Overrides the config seed");
  synth->add_option("--out", synth_out, "Output directory")->required();

  auto* ba = app.add_subcommand("ba", "Run bundle adjustment");
  std::string ba_cameras, ba_tracks, ba_config, ba_out, ba_session;
  auto* cameras_opt = ba->add_option("--cameras", ba_cameras, "Cameras XML");
  auto* tracks_opt = ba->add_option("--tracks", ba_tracks, "Tracks XML");
  auto* out_opt = ba->add_option("--out", ba_out, "Output directory");
  auto* session_opt = ba->add_option("--session", ba_session, "Rerun a session");
  ba->add_option("--config", ba_config, "BA config JSON");
  cameras_opt->needs(tracks_opt)->needs(out_opt)->excludes(session_opt);
  tracks_opt->needs(cameras_opt);

  auto* report = app.add_subcommand("report", "Emit analysis JSON for a session");
  std::string report_session, report_out;
  report->add_option("--session", report_session, "Session file")->required();
  report->add_option("--out", report_out, "Output JSON file ('-' for stdout)");

  auto* edit = app.add_subcommand("edit", "Apply deletions to a session");
  std::string edit_session, edit_tracks, edit_cameras;
  edit->add_option("--session", edit_session, "Session file")->required();
  edit->add_option("--delete-tracks", edit_tracks, "File with one track id per line");
  edit->add_option("--delete-cameras", edit_cameras, "File with one camera id per line");

  auto* serve = app.add_subcommand("serve", "Start the HTTP/JSON service");
  std::string serve_session, serve_host = "127.0.0.1";
  int serve_port = 8080;
  serve->add_option("--session", serve_session, "Session file")->required();
  serve->add_option("--port", serve_port, "Port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", serve_host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (synth->parsed()) return Synth(synth_config, synth_seed, synth_out, out);
    if (ba->parsed()) {
      if (!ba_session.empty()) return BaSession(ba_session, ba_config, out);
      if (ba_cameras.empty()) {
        err << "error: ba needs --cameras/--tracks/--out or --session\n";
        return 1;
      }
      return BaFiles(ba_cameras, ba_tracks, ba_config, ba_out, out, err);
    }
    if (report->parsed()) return Report(report_session, report_out, out);
    if (edit->parsed()) {
      if (edit_tracks.empty() && edit_cameras.empty()) {
        err << "error: edit needs --delete-tracks or --delete-cameras\n";
        return 1;
      }
      return Edit(edit_session, edit_tracks, edit_cameras, out, err);
    }
    if (serve->parsed()) return Serve(serve_session, serve_host, serve_port, out);
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace vec
