#include <chrono>
#include <future>
#include <thread>

#include <gtest/gtest.h>

#include "test_util.h"
#include "vector/cli.h"
#include "vector/errors.h"
#include "vector/json_convert.h"
#include "vector/service.h"

#include <httplib.h>

namespace vec {
namespace {

class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Dataset d = testing::SmallScene(5, 25, 1.0, 71);
    Track pair = d.tracks[0];
    pair.id = "pair";
    pair.observations.resize(2);
    d.tracks.push_back(pair);
    for (auto& c : d.cameras) c.image_ref = "img/" + c.id + ".png";
    std::filesystem::create_directories(dir_.path() / "img");
    WriteFile(dir_.File("img/cam0.png"), "\x89PNG fake");
    SaveDataset(d, dir_.File("cameras.xml"), dir_.File("tracks.xml"));
    const Session opened = OpenSession(dir_.File("cameras.xml"), dir_.File("tracks.xml"));
    Session session(opened.base(), {"cameras.xml", "tracks.xml", opened.base_ref().digest});
    session.Save(dir_.File("session.json"));
    service_ = std::make_unique<Service>(Session::Load(dir_.File("session.json")),
                                         dir_.File("session.json"));
    const int port = service_->Start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port);
  }

  void TearDown() override {
    client_.reset();
    service_.reset();
  }

  static Json Body(const httplib::Result& r) { return Json::parse(r->body); }

  // Polls a job until it leaves queued/running.
  Json WaitForJob(const std::string& id) {
    for (int i = 0; i < 2000; ++i) {
      auto r = client_->Get("/api/jobs/" + id);
      const Json status = Body(r);
      const std::string state = status["state"];
      if (state != "queued" && state != "running") return status;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ADD_FAILURE() << "job " << id << " never finished";
    return {};
  }

  Json RunBa(const Json& config = Json::object()) {
    auto r = client_->Post("/api/ba/run", Json({{"config", config}}).dump(), "application/json");
    EXPECT_EQ(r->status, 202);
    return WaitForJob(Body(r)["job_id"]);
  }

  static std::string Filter(const Json& f) { return httplib::detail::encode_url(f.dump()); }

  testing::TempDir dir_{"http"};
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Client> client_;
};

TEST_F(HttpTest, SceneAndTrackDetail) {
  auto scene = client_->Get("/api/scene");
  ASSERT_EQ(scene->status, 200);
  const Json s = Body(scene);
  EXPECT_EQ(s["cameras"].size(), 5u);
  EXPECT_EQ(s["points"].size(), 26u);
  EXPECT_TRUE(s["run"].is_null());

  auto track = client_->Get("/api/tracks/pt3");
  ASSERT_EQ(track->status, 200);
  const Json t = Body(track);
  EXPECT_EQ(t["observations"].size(), 5u);
  EXPECT_EQ(t["residuals"].size(), 5u);
  EXPECT_FALSE(t["ill_posed"].get<bool>());

  EXPECT_EQ(client_->Get("/api/tracks/nope")->status, 404);
  EXPECT_EQ(client_->Get("/api/images/nope")->status, 404);
  EXPECT_EQ(client_->Get("/api/images/cam2")->status, 200);
}

TEST_F(HttpTest, ErrorStatuses) {
  EXPECT_EQ(client_->Delete("/api/tracks/unknown")->status, 404);
  EXPECT_EQ(client_->Get("/api/images?filter=" + Filter({{"precision", -1}}))->status, 400);
  EXPECT_EQ(client_->Get("/api/stats?filter=%7Bbroken")->status, 400);
  EXPECT_EQ(client_->Get("/api/rank/tracks")->status, 422);
  EXPECT_EQ(client_->Get("/api/rank/tracks?key=bogus")->status, 400);
  EXPECT_EQ(client_->Get("/api/compare?a=0")->status, 400);
  EXPECT_EQ(client_->Get("/api/compare?a=0&b=x")->status, 400);
  EXPECT_EQ(client_->Get("/api/compare?a=0&b=1")->status, 404);
  EXPECT_EQ(client_->Get("/api/runs/4")->status, 404);
  EXPECT_EQ(client_->Get("/api/jobs/job-99")->status, 404);
  EXPECT_EQ(client_->Post("/api/edits", "{nope", "application/json")->status, 400);
  EXPECT_EQ(client_->Post("/api/edits", R"({"kind": "explode", "target_id": "pt1"})",
                          "application/json")
                ->status,
            400);
  auto bad_config = client_->Post("/api/ba/run", R"({"config": {"max_iterations": -3}})",
                                  "application/json");
  EXPECT_EQ(bad_config->status, 400);
  const Json error = Body(bad_config);
  EXPECT_TRUE(error.contains("error"));
}

TEST_F(HttpTest, UnknownQueryParametersAreWarnedNotRejected) {
  auto r = client_->Get("/api/stats?colour=red");
  ASSERT_EQ(r->status, 200);
  EXPECT_NE(r->get_header_value("X-Vector-Warning").find("colour"), std::string::npos);
  EXPECT_FALSE(client_->Get("/api/stats")->has_header("X-Vector-Warning"));
}

TEST_F(HttpTest, EditsCascadeAndPersist) {
  auto r = client_->Delete("/api/cameras/cam1");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(Body(r)["cascaded_track_ids"], Json::array({"pair"}));
  EXPECT_EQ(client_->Get("/api/tracks/pair")->status, 404);
  EXPECT_EQ(client_->Delete("/api/tracks/pair")->status, 422);
  EXPECT_EQ(client_->Delete("/api/cameras/cam2")->status, 200);
  EXPECT_EQ(client_->Delete("/api/cameras/cam3")->status, 200);
  auto too_few = client_->Delete("/api/cameras/cam4");
  EXPECT_EQ(too_few->status, 422);
  auto restore = client_->Post("/api/edits", R"({"kind": "restore", "target_id": "cam1"})",
                               "application/json");
  ASSERT_EQ(restore->status, 200);
  EXPECT_EQ(Body(restore)["restored_track_ids"], Json::array({"pair"}));

  const Session saved = Session::Load(dir_.File("session.json"));
  EXPECT_EQ(saved.edit_log().size(), 4u);
  EXPECT_EQ(Body(client_->Get("/api/scene"))["cameras"].size(), 3u);
}

TEST_F(HttpTest, WritersGetConflictWhileAJobRuns) {
  std::promise<void> release;
  std::shared_future<void> gate = release.get_future().share();
  const std::string id = service_->jobs().Submit([gate](const JobManager::Progress&) {
    gate.wait();
    return 0;
  });
  EXPECT_EQ(client_->Delete("/api/tracks/pt1")->status, 409);
  EXPECT_EQ(client_->Post("/api/ba/run", "{}", "application/json")->status, 409);
  EXPECT_EQ(client_->Get("/api/stats")->status, 200);
  release.set_value();
  service_->jobs().WaitAll();
  EXPECT_EQ(client_->Post("/api/jobs/" + id + "/cancel", "", "application/json")->status, 409);
  EXPECT_EQ(client_->Delete("/api/tracks/pt1")->status, 200);
}

TEST_F(HttpTest, CancelStopsARunningJob) {
  std::atomic<bool> started{false};
  const std::string id = service_->jobs().Submit([&started](const JobManager::Progress& progress) {
    started = true;
    for (int i = 1;; ++i) {
      if (!progress(i, 1.0)) throw Cancelled("stopped");
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    return 0;
  });
  while (!started) std::this_thread::yield();
  ASSERT_EQ(client_->Post("/api/jobs/" + id + "/cancel", "", "application/json")->status, 200);
  EXPECT_EQ(WaitForJob(id)["state"], "cancelled");
}

TEST_F(HttpTest, BundleAdjustmentJobRecordsARun) {
  const Json status = RunBa();
  ASSERT_EQ(status["state"], "done") << status.dump();
  EXPECT_EQ(status["result_ref"], 0);

  const Json run = Body(client_->Get("/api/runs/0"));
  const Session saved = Session::Load(dir_.File("session.json"));
  ASSERT_EQ(saved.runs().size(), 1u);
  EXPECT_EQ(run["cost_trace"].get<std::vector<double>>(), saved.runs()[0].result.cost_trace);
  EXPECT_EQ(Body(client_->Get("/api/runs"))["runs"].size(), 1u);

  const Json scene = Body(client_->Get("/api/scene"));
  EXPECT_EQ(scene["run"], 0);
  EXPECT_FALSE(scene["points"][0]["final"].is_null());

  auto rank = client_->Get("/api/rank/tracks?key=delta_rms&limit=3");
  ASSERT_EQ(rank->status, 200);
  EXPECT_EQ(Body(rank)["tracks"].size(), 3u);
  EXPECT_EQ(client_->Get("/api/rank/images")->status, 200);

  client_->Delete("/api/tracks/pt2");
  ASSERT_EQ(RunBa()["state"], "done");
  auto compare = client_->Get("/api/compare?a=0&b=1");
  ASSERT_EQ(compare->status, 200);
  EXPECT_EQ(Body(compare)["removed_track_ids"], Json::array({"pt2"}));
}

// The same effective dataset through the CLI and through the service must
// produce the same cost trace.
TEST_F(HttpTest, CostTraceMatchesTheCli) {
  ASSERT_EQ(RunBa()["state"], "done");
  const Json api = Body(client_->Get("/api/runs/0"));

  testing::TempDir out("http_cli");
  const std::string cameras = dir_.File("cameras.xml"), tracks = dir_.File("tracks.xml"),
                    target = out.File("ba");
  const char* argv[] = {"vector", "ba", "--cameras", cameras.c_str(), "--tracks",
                        tracks.c_str(), "--out", target.c_str()};
  std::ostringstream sink;
  ASSERT_EQ(RunCli(8, argv, sink, sink), 0);
  const Json cli = Json::parse(ReadFile(out.File("ba/ba_result.json")));
  EXPECT_EQ(api["cost_trace"], cli["cost_trace"]);
  EXPECT_EQ(api["digest"], cli["digest"]);
}

TEST_F(HttpTest, StatsCountMatchesFilter) {
  ASSERT_EQ(RunBa()["state"], "done");
  const Session saved = Session::Load(dir_.File("session.json"));
  const BAResult& result = saved.runs()[0].result;
  FilterState filter;
  filter.include_initial = false;
  filter.length_min = 0.5;
  filter.angle_start = 300.0;
  filter.angle_end = 90.0;
  const Json wire = filter;
  auto r = client_->Get("/api/stats?filter=" + Filter(wire));
  ASSERT_EQ(r->status, 200);
  const Json stats = Body(r);
  EXPECT_EQ(stats["count"].get<size_t>(), ApplyFilter(result.residuals_final, filter).size());
  EXPECT_EQ(stats["counts"]["initial"], 0);

  const Json images = Body(client_->Get("/api/images?filter=" + Filter(wire)));
  size_t total = 0;
  for (const auto& image : images["images"]) total += image["summary"]["counts"]["final"].get<size_t>();
  EXPECT_EQ(total, stats["count"].get<size_t>());

  auto one = Body(client_->Get("/api/stats?camera_id=cam2"));
  EXPECT_EQ(one["counts"]["initial"], one["counts"]["final"]);
}

TEST_F(HttpTest, StaticImagesOnlyForReferencedFiles) {
  auto r = client_->Get("/static/images/img/cam0.png");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(r->body, "\x89PNG fake");
  EXPECT_EQ(client_->Get("/static/images/img/cam1.png")->status, 404);
  EXPECT_EQ(client_->Get("/static/images/session.json")->status, 404);
  EXPECT_EQ(client_->Get("/static/images/../cameras.xml")->status, 404);
}

}  // namespace
}  // namespace vec
