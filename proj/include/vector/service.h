#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "vector/session.h"

namespace vec {

enum class JobState { kQueued, kRunning, kDone, kFailed, kCancelled };

std::string_view ToString(JobState state);

struct JobStatus {
  std::string job_id;
  JobState state = JobState::kQueued;
  int iteration = 0;
  double cost = 0.0;
  std::optional<int> result_ref;  // run id once done
  std::string error;              // failed jobs only
};

// Background jobs, one thread each. A job's work receives a progress
// callback; the callback returns false once cancellation was requested.
class JobManager {
 public:
  using Progress = std::function<bool(int iteration, double cost)>;
  using Work = std::function<int(const Progress& progress)>;

  JobManager() = default;
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;
  ~JobManager();  // cancels and joins everything

  std::string Submit(Work work);
  std::optional<JobStatus> Status(const std::string& job_id) const;
  // False when the job is unknown or already finished.
  bool Cancel(const std::string& job_id);
  bool Active() const;  // any job queued or running
  void WaitAll();

 private:
  struct Job {
    JobStatus status;
    std::atomic<bool> cancel{false};
    std::thread thread;
  };

  void Run(Job* job, Work work);

  mutable std::mutex mutex_;
  std::condition_variable finished_;
  std::map<std::string, std::unique_ptr<Job>> jobs_;
  int next_id_ = 1;
};

// HTTP/JSON front end over one session. Reads run concurrently against an
// immutable view; edits and reruns take the session write lock and answer
// 409 while another writer holds it or a BA job is in flight. The session
// file is rewritten after every edit and every recorded run.
class Service {
 public:
  // session_path may be empty, in which case nothing is persisted.
  Service(Session session, std::string session_path);
  ~Service();

  // Binds to host:port (port 0 picks a free port), serves from a background
  // thread and returns the bound port. Throws IoError when binding fails.
  int Start(const std::string& host, int port);
  // Blocks until Stop.
  void Listen(const std::string& host, int port);
  void Stop();

  JobManager& jobs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vec
