#include "reagg/service.hpp"

#include "reagg/io.hpp"

#include <httplib.h>

namespace reagg {

using nlohmann::json;

namespace {

const char* kTableFields[] = {"source_counts", "covariates", "source_map", "dest_map"};

json error_body(const std::string& message) { return json{{"error", message}}; }

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

}  // namespace

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

JobService::JobService(ServiceOptions options) : options_(std::move(options)) {
  if (options_.workers == 0) options_.workers = std::max(1u, std::thread::hardware_concurrency());
  if (!options_.results_dir.empty()) std::filesystem::create_directories(options_.results_dir);
  if (options_.autostart) start();
}

JobService::~JobService() { stop(); }

void JobService::start() {
  std::lock_guard lock(mutex_);
  if (!threads_.empty()) return;
  stopping_ = false;
  for (std::size_t i = 0; i < options_.workers; ++i) threads_.emplace_back([this] { worker(); });
}

void JobService::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  work_ready_.notify_all();
  for (auto& t : threads_) t.join();
  threads_.clear();
}

std::string JobService::submit(const json& spec) {
  if (!spec.is_object()) throw ValidationError("job must be a JSON object");
  for (const char* field : kTableFields)
    if (spec.contains(field))
      throw ValidationError(std::string("'") + field + "' must be sent inline as '" + field + "_csv' or '" +
                            field + "_b64'; the service does not read server paths");
  return submit(io::job_from_json(spec));
}

std::string JobService::submit(ReaggregationJob job) {
  job.validate();
  std::string id;
  {
    std::lock_guard lock(mutex_);
    if (queue_.size() >= options_.queue_capacity)
      throw QueueFull("job queue is full (" + std::to_string(options_.queue_capacity) + " waiting)");
    id = "job-" + std::to_string(++counter_);
    Entry e;
    e.snapshot.id = id;
    e.job = std::make_unique<ReaggregationJob>(std::move(job));
    jobs_.emplace(id, std::move(e));
    queue_.push_back(id);
  }
  work_ready_.notify_one();
  return id;
}

std::optional<JobSnapshot> JobService::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second.snapshot;
}

void JobService::wait_idle() {
  std::unique_lock lock(mutex_);
  idle_.wait(lock, [this] { return queue_.empty() && running_ == 0; });
}

void JobService::worker() {
  for (;;) {
    std::string id;
    std::unique_ptr<ReaggregationJob> job;
    {
      std::unique_lock lock(mutex_);
      work_ready_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      auto& entry = jobs_.at(id);
      entry.snapshot.status = JobStatus::running;
      job = std::move(entry.job);
      ++running_;
    }
    try {
      const auto summary = reaggregate(*job);
      finish(id, JobStatus::done, io::summary_csv(summary), io::diagnostics_json(summary), {});
    } catch (const std::exception& e) {
      finish(id, JobStatus::failed, {}, {}, e.what());
    }
  }
}

void JobService::finish(const std::string& id, JobStatus status, std::string csv, std::string diag,
                        std::string error) {
  if (status == JobStatus::done && !options_.results_dir.empty()) {
    io::write_text(options_.results_dir / (id + ".csv"), csv);
    io::write_text(options_.results_dir / (id + ".json"), diag);
  }
  {
    std::lock_guard lock(mutex_);
    auto& snap = jobs_.at(id).snapshot;
    snap.status = status;
    snap.result_csv = std::move(csv);
    snap.diagnostics_json = std::move(diag);
    snap.error = std::move(error);
    --running_;
  }
  idle_.notify_all();
}

void register_routes(httplib::Server& server, JobService& service) {
  server.Post("/v1/jobs", [&service](const httplib::Request& req, httplib::Response& res) {
    try {
      json spec;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("job")) throw ValidationError("multipart upload needs a 'job' part");
        spec = json::parse(req.get_file_value("job").content);
        for (const char* field : kTableFields)
          if (req.has_file(field)) spec[std::string(field) + "_csv"] = req.get_file_value(field).content;
      } else {
        spec = json::parse(req.body);
      }
      const std::string id = service.submit(spec);
      res.set_header("Location", "/v1/jobs/" + id);
      send_json(res, 202, {{"id", id}, {"status", "queued"}});
    } catch (const json::exception& e) {
      send_json(res, 400, error_body(std::string("invalid JSON: ") + e.what()));
    } catch (const QueueFull& e) {
      send_json(res, 429, error_body(e.what()));
    } catch (const ValidationError& e) {
      send_json(res, 400, error_body(e.what()));
    }
  });

  server.Get(R"(/v1/jobs/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    const auto snap = service.find(req.matches[1]);
    if (!snap) return send_json(res, 404, error_body("unknown job '" + std::string(req.matches[1]) + "'"));
    json body{{"id", snap->id}, {"status", to_string(snap->status)}};
    if (!snap->error.empty()) body["error"] = snap->error;
    send_json(res, 200, body);
  });

  server.Get(R"(/v1/jobs/([^/]+)/result)", [&service](const httplib::Request& req, httplib::Response& res) {
    const auto snap = service.find(req.matches[1]);
    if (!snap) return send_json(res, 404, error_body("unknown job '" + std::string(req.matches[1]) + "'"));
    if (snap->status != JobStatus::done) {
      json body{{"id", snap->id}, {"status", to_string(snap->status)}};
      if (!snap->error.empty()) body["error"] = snap->error;
      return send_json(res, 409, body);
    }
    res.status = 200;
    res.set_content(snap->result_csv, "text/csv");
  });

  server.Get(R"(/v1/diagnostics/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    const auto snap = service.find(req.matches[1]);
    if (!snap) return send_json(res, 404, error_body("unknown job '" + std::string(req.matches[1]) + "'"));
    if (snap->status != JobStatus::done) {
      json body{{"id", snap->id}, {"status", to_string(snap->status)}};
      if (!snap->error.empty()) body["error"] = snap->error;
      return send_json(res, 409, body);
    }
    res.status = 200;
    res.set_content(snap->diagnostics_json, "application/json");
  });
}

}  // namespace reagg
