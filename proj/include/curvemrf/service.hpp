#pragma once

// HTTP job service for seeded segmentation: a bounded FIFO queue drained by a
// single worker thread.

#include <httplib.h>
#include <sys/socket.h>

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include "io.hpp"
#include "tasks.hpp"

namespace curvemrf {

struct ServiceOptions {
  std::size_t queue_depth = 8;
  std::size_t default_passes = 300;
  std::size_t max_passes = 2000;
  std::size_t max_pixels = 160 * 160;
  std::size_t components = 10;
  std::uint64_t seed = 1;
  std::string static_dir;
};

enum class JobStatus { queued, running, done, failed, cancelled };

inline const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
    case JobStatus::cancelled: return "cancelled";
  }
  return "unknown";
}

class SegmentationService {
 public:
  SegmentationService(PatternBank bank, ServiceOptions opt) : bank_(std::move(bank)), opt_(std::move(opt)) {
    // plain SO_REUSEADDR so that a second server cannot share the port
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    routes();
    worker_ = std::jthread([this](std::stop_token st) { work(st); });
  }

  ~SegmentationService() {
    stop();
    worker_.request_stop();
    {
      std::lock_guard lk(mu_);
      for (auto& [id, job] : jobs_) job.cancel = true;
    }
    cv_.notify_all();
  }

  SegmentationService(const SegmentationService&) = delete;
  SegmentationService& operator=(const SegmentationService&) = delete;

  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen() { return server_.listen_after_bind(); }
  void stop() {
    if (server_.is_running()) server_.stop();
  }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  struct Job {
    JobStatus status = JobStatus::queued;
    ColorImage image;
    SeedMask seeds;
    double lambda = 1.0;
    std::size_t passes = 0;
    std::size_t pass = 0;
    double lower_bound = std::numeric_limits<double>::quiet_NaN();
    bool cancel = false;
    std::string error;
    nlohmann::json result;
  };

  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

  void routes() {
    server_.Post("/jobs", [this](const httplib::Request& req, httplib::Response& res) { submit(req, res); });
    server_.Get(R"(/jobs/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(mu_);
      auto it = jobs_.find(std::stoull(req.matches[1]));
      if (it == jobs_.end()) return reply(res, 404, {{"error", "unknown job"}});
      const Job& j = it->second;
      nlohmann::json body{{"status", to_string(j.status)}, {"pass", j.pass}, {"lower_bound", number_or_null(j.lower_bound)}};
      if (!j.error.empty()) body["error"] = j.error;
      reply(res, 200, body);
    });
    server_.Get(R"(/jobs/(\d+)/result)", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(mu_);
      auto it = jobs_.find(std::stoull(req.matches[1]));
      if (it == jobs_.end()) return reply(res, 404, {{"error", "unknown job"}});
      const Job& j = it->second;
      if (j.status != JobStatus::done) {
        nlohmann::json body{{"status", to_string(j.status)}};
        if (!j.error.empty()) body["error"] = j.error;
        return reply(res, 409, body);
      }
      reply(res, 200, j.result);
    });
    server_.Delete(R"(/jobs/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(mu_);
      auto it = jobs_.find(std::stoull(req.matches[1]));
      if (it == jobs_.end()) return reply(res, 404, {{"error", "unknown job"}});
      Job& j = it->second;
      j.cancel = true;
      if (j.status == JobStatus::queued) {
        j.status = JobStatus::cancelled;
        std::erase(queue_, it->first);
      }
      reply(res, 200, {{"status", to_string(j.status)}});
    });
    server_.Get("/bank", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, io::bank_to_json(bank_));
    });
    if (!opt_.static_dir.empty()) server_.set_mount_point("/", opt_.static_dir);
  }

  void submit(const httplib::Request& req, httplib::Response& res) {
    Job job;
    try {
      const auto body = nlohmann::json::parse(req.body);
      std::istringstream img(io::base64_decode(body.at("image").get<std::string>()), std::ios::binary);
      job.image = io::read_ppm(img);
      std::istringstream seeds(io::base64_decode(body.at("strokes").get<std::string>()), std::ios::binary);
      job.seeds = io::gray_to_seeds(io::read_pgm(seeds));
      job.lambda = body.value("lambda", 1.0);
      job.passes = body.value("passes", opt_.default_passes);
    } catch (const std::exception& e) {
      return reply(res, 400, {{"error", std::string("invalid payload: ") + e.what()}});
    }
    if (job.seeds.dims != job.image.dims()) return reply(res, 400, {{"error", "strokes and image sizes differ"}});
    if (job.image.pixels.size() > opt_.max_pixels) return reply(res, 413, {{"error", "image too large"}});
    if (job.image.width < bank_.side || job.image.height < bank_.side)
      return reply(res, 400, {{"error", "image smaller than the pattern window"}});
    if (!(job.lambda >= 0)) return reply(res, 400, {{"error", "lambda must be non-negative"}});
    if (job.passes == 0 || job.passes > opt_.max_passes) return reply(res, 400, {{"error", "passes out of range"}});
    if (job.seeds.count(SeedTag::foreground) == 0 || job.seeds.count(SeedTag::background) == 0)
      return reply(res, 400, {{"error", "strokes must mark foreground and background pixels"}});
    std::size_t id;
    {
      std::lock_guard lk(mu_);
      if (queue_.size() >= opt_.queue_depth) return reply(res, 503, {{"error", "queue full"}});
      id = next_id_++;
      jobs_.emplace(id, std::move(job));
      queue_.push_back(id);
    }
    cv_.notify_one();
    reply(res, 202, {{"id", std::to_string(id)}});
  }

  void work(std::stop_token st) {
    for (;;) {
      std::size_t id;
      ColorImage image;
      SeedMask seeds;
      SegmentationOptions so;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return st.stop_requested() || !queue_.empty(); });
        if (st.stop_requested()) return;
        id = queue_.front();
        queue_.pop_front();
        Job& j = jobs_.at(id);
        j.status = JobStatus::running;
        image = j.image;
        seeds = j.seeds;
        so.lambda = j.lambda;
        so.inference.passes = j.passes;
      }
      so.components = opt_.components;
      so.seed = opt_.seed;
      try {
        auto r = segment_image(image, seeds, bank_, so, [&](std::size_t pass, double lb) {
          std::lock_guard lk(mu_);
          Job& j = jobs_.at(id);
          j.pass = pass;
          j.lower_bound = lb;
          return !j.cancel;
        });
        const auto& p = r.pipeline;
        const double lb = p.lower_bound_trace.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                      : p.lower_bound_trace.back();
        nlohmann::json result{
            {"labeling", io::base64_encode(io::to_bytes([&](std::ostream& o) {
               io::write_pgm(o, io::labeling_to_gray(p.labeling));
             }))},
            {"energy", p.energy},
            {"lower_bound", number_or_null(lb)},
            {"min_marginal_map", io::base64_encode(io::to_bytes([&](std::ostream& o) {
               io::write_pgm(o, {image.width, image.height, min_marginal_map(p.min_marginals)});
             }))},
            {"passes", p.passes}};
        std::lock_guard lk(mu_);
        Job& j = jobs_.at(id);
        if (p.cancelled || j.cancel) {
          j.status = JobStatus::cancelled;
        } else {
          j.status = JobStatus::done;
          j.result = std::move(result);
        }
      } catch (const std::exception& e) {
        std::lock_guard lk(mu_);
        Job& j = jobs_.at(id);
        j.status = JobStatus::failed;
        j.error = e.what();
      }
    }
  }

  PatternBank bank_;
  ServiceOptions opt_;
  httplib::Server server_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::size_t> queue_;
  std::map<std::size_t, Job> jobs_;
  std::size_t next_id_ = 1;
  std::jthread worker_;
};

}  // namespace curvemrf
