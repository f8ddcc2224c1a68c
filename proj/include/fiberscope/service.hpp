#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fiberscope/analysis.hpp"
#include "fiberscope/error.hpp"

namespace fiberscope {

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Request that is valid but not possible in the job's current state.
class ConflictError : public Error {
public:
    using Error::Error;
};

enum class JobState { Queued, Running, Done, Failed };

std::string to_string(JobState state);
std::optional<JobState> parse_job_state(std::string_view text);

struct JobInfo {
    std::string id;
    JobState state = JobState::Queued;
    std::string input_name;
    AnalysisParams params;
    std::string created;
    std::string started;
    std::string finished;
    std::string error;
    std::vector<std::string> warnings;
    int image_width = 0;
    int image_height = 0;
};

/// Jobs persisted as `<root>/jobs/<id>/` holding the input copy,
/// params.json, job.json and, once done, results.json, results.csv and
/// masks.zip. A fixed pool of workers drains an in-process FIFO queue.
class JobStore {
public:
    /// Recovers existing jobs: queued ones are queued again, ones left
    /// running by a previous process are marked failed.
    JobStore(std::filesystem::path root, std::shared_ptr<const Detector> detector, int workers = 1);
    ~JobStore();
    JobStore(const JobStore&) = delete;
    JobStore& operator=(const JobStore&) = delete;

    /// Validates params and decodes the image header before anything is
    /// written. Throws InvalidArgument (bad params, empty upload) or IoError
    /// (undecodable image).
    std::string submit(std::span<const std::uint8_t> image, const std::string& filename,
                       const AnalysisParams& params);

    std::optional<JobInfo> get(const std::string& id) const;
    /// Oldest first.
    std::vector<JobInfo> list() const;

    /// Throw NotFoundError for unknown ids and ConflictError unless done.
    std::shared_ptr<const AnalysisResult> result(const std::string& id) const;
    std::string csv(const std::string& id) const;
    std::vector<std::uint8_t> masks_zip(const std::string& id) const;
    std::vector<std::uint8_t> overlay_png(const std::string& id, double cutoff) const;

    /// Blocks until the job is done or failed, or the timeout passes.
    JobState wait(const std::string& id, std::chrono::milliseconds timeout) const;

    const std::filesystem::path& root() const;
    std::size_t queued() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct ServiceConfig {
    std::filesystem::path data_root = "fiberscope-data";
    std::string host = "127.0.0.1";
    int port = 8080;
    /// "onnx" or "threshold".
    std::string backend = "onnx";
    std::filesystem::path model_path;
    int input_size = 1024;
    int job_workers = 1;
    std::size_t max_upload_bytes = std::size_t(4) << 30;
    AnalysisParams defaults;
};

/// Reads an optional JSON config file, then applies FIBERSCOPE_* environment
/// overrides: DATA_ROOT, HOST, PORT, BACKEND, MODEL, INPUT_SIZE, JOB_WORKERS,
/// WORKERS, PX_UM, CONF, IOU. Throws ParseError or InvalidArgument.
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& file);

/// Builds the detector a config asks for.
std::shared_ptr<const Detector> make_detector(const ServiceConfig& config);

/// JSON view of a job; done jobs include per-class summary, export links and
/// detections with contours simplified to <= 1 px.
std::string job_to_json(const JobInfo& job, const AnalysisResult* result);

/// HTTP front end:
///   POST /api/jobs                      multipart "image" + parameter fields
///   GET  /api/jobs                      listing
///   GET  /api/jobs/{id}                 status, summary, detections
///   GET  /api/jobs/{id}/results.csv
///   GET  /api/jobs/{id}/masks.zip
///   GET  /api/jobs/{id}/overlay.png?conf=<c>
/// Errors are {"code", "message"} with a matching status.
class HttpService {
public:
    HttpService(JobStore& store, AnalysisParams defaults, std::size_t max_upload_bytes = std::size_t(4) << 30);
    ~HttpService();

    /// Binds (port 0 picks a free one) and serves on a background thread.
    /// Returns the bound port. Throws IoError when binding fails.
    int start(const std::string& host, int port);
    /// Serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace fiberscope
