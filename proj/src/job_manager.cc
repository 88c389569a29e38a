#include "vector/service.h"

#include "vector/errors.h"

namespace vec {

std::string_view ToString(JobState state) {
  switch (state) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
    case JobState::kCancelled: return "cancelled";
  }
  return "queued";
}

JobManager::~JobManager() {
  {
    std::lock_guard lock(mutex_);
    for (auto& [id, job] : jobs_) job->cancel = true;
  }
  for (auto& [id, job] : jobs_) {
    if (job->thread.joinable()) job->thread.join();
  }
}

std::string JobManager::Submit(Work work) {
  std::lock_guard lock(mutex_);
  const std::string id = "job-" + std::to_string(next_id_++);
  auto job = std::make_unique<Job>();
  job->status.job_id = id;
  Job* raw = job.get();
  jobs_.emplace(id, std::move(job));
  raw->thread = std::thread(&JobManager::Run, this, raw, std::move(work));
  return id;
}

void JobManager::Run(Job* job, Work work) {
  {
    std::lock_guard lock(mutex_);
    job->status.state = JobState::kRunning;
  }
  const Progress progress = [this, job](int iteration, double cost) {
    std::lock_guard lock(mutex_);
    job->status.iteration = iteration;
    job->status.cost = cost;
    return !job->cancel.load();
  };
  JobState state = JobState::kDone;
  std::optional<int> result;
  std::string error;
  try {
    if (job->cancel) throw Cancelled("cancelled before start");
    result = work(progress);
  } catch (const Cancelled&) {
    state = JobState::kCancelled;
  } catch (const std::exception& e) {
    state = JobState::kFailed;
    error = e.what();
  }
  {
    std::lock_guard lock(mutex_);
    job->status.state = state;
    job->status.result_ref = result;
    job->status.error = std::move(error);
  }
  finished_.notify_all();
}

std::optional<JobStatus> JobManager::Status(const std::string& job_id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second->status;
}

bool JobManager::Cancel(const std::string& job_id) {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return false;
  const JobState state = it->second->status.state;
  if (state != JobState::kQueued && state != JobState::kRunning) return false;
  it->second->cancel = true;
  return true;
}

bool JobManager::Active() const {
  std::lock_guard lock(mutex_);
  for (const auto& [id, job] : jobs_) {
    const JobState state = job->status.state;
    if (state == JobState::kQueued || state == JobState::kRunning) return true;
  }
  return false;
}

void JobManager::WaitAll() {
  std::unique_lock lock(mutex_);
  finished_.wait(lock, [this] {
    for (const auto& [id, job] : jobs_) {
      const JobState state = job->status.state;
      if (state == JobState::kQueued || state == JobState::kRunning) return false;
    }
    return true;
  });
}

}  // namespace vec
