#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "reagg/error.hpp"
#include "reagg/pipeline.hpp"

namespace httplib {
class Server;
}

namespace reagg {

enum class JobStatus { queued, running, done, failed };
const char* to_string(JobStatus s);

struct JobSnapshot {
  std::string id;
  JobStatus status = JobStatus::queued;
  std::string result_csv;
  std::string diagnostics_json;
  std::string error;
};

struct ServiceOptions {
  std::size_t workers = 0;  // 0 = hardware concurrency
  std::size_t queue_capacity = 256;
  bool autostart = true;
  std::filesystem::path results_dir;  // optional persistence
};

class QueueFull : public Error {
 public:
  using Error::Error;
};

// In-memory job registry with a bounded worker pool.
class JobService {
 public:
  explicit JobService(ServiceOptions options = {});
  ~JobService();
  JobService(const JobService&) = delete;
  JobService& operator=(const JobService&) = delete;

  // Parses and validates a job document (inline CSV only); throws
  // ValidationError, or QueueFull when the queue is at capacity.
  std::string submit(const nlohmann::json& spec);
  std::string submit(ReaggregationJob job);

  std::optional<JobSnapshot> find(const std::string& id) const;
  void start();
  void stop();
  // Blocks until no job is queued or running.
  void wait_idle();

 private:
  struct Entry {
    JobSnapshot snapshot;
    std::unique_ptr<ReaggregationJob> job;
  };

  void worker();
  void finish(const std::string& id, JobStatus status, std::string csv, std::string diag, std::string error);

  ServiceOptions options_;
  mutable std::mutex mutex_;
  std::condition_variable work_ready_;
  std::condition_variable idle_;
  std::deque<std::string> queue_;
  std::map<std::string, Entry> jobs_;
  std::vector<std::thread> threads_;
  std::size_t running_ = 0;
  std::size_t counter_ = 0;
  bool stopping_ = false;
};

// Mounts the /v1 routes on `server`.
void register_routes(httplib::Server& server, JobService& service);

}  // namespace reagg
