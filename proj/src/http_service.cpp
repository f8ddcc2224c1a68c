#include <thread>

#include "fiberscope/service.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fiberscope {

namespace {

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    res.status = status;
    res.set_content(nlohmann::json{{"code", code}, {"message", message}}.dump(), "application/json");
}

// Maps library exceptions onto HTTP errors.
template <typename F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const NotFoundError& e) {
        send_error(res, 404, "not_found", e.what());
    } catch (const ConflictError& e) {
        send_error(res, 409, "not_ready", e.what());
    } catch (const InvalidArgument& e) {
        send_error(res, 400, "invalid_argument", e.what());
    } catch (const ParseError& e) {
        send_error(res, 400, "invalid_argument", e.what());
    } catch (const IoError& e) {
        send_error(res, 422, "invalid_image", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
    }
}

double parse_number(const std::string& field, const std::string& v) {
    std::size_t used = 0;
    double d = 0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw InvalidArgument(field + " is not a number: " + v);
    return d;
}

int parse_int(const std::string& field, const std::string& v) {
    const double d = parse_number(field, v);
    if (d != double(int(d))) throw InvalidArgument(field + " must be an integer: " + v);
    return int(d);
}

}  // namespace

struct HttpService::Impl {
    JobStore& store;
    AnalysisParams defaults;
    httplib::Server server;
    std::thread thread;

    Impl(JobStore& s, AnalysisParams d) : store(s), defaults(d) {}

    AnalysisParams params_from(const httplib::Request& req) const {
        AnalysisParams p = defaults;
        const auto field = [&](const char* name) -> std::optional<std::string> {
            if (req.has_file(name)) return req.get_file_value(name).content;
            if (req.has_param(name)) return req.get_param_value(name);
            return std::nullopt;
        };
        if (auto v = field("preset")) {
            const auto c = confidence_preset(*v);
            if (!c) throw InvalidArgument("unknown preset " + *v);
            p.inference.conf_threshold = *c;
        }
        if (auto v = field("conf")) p.inference.conf_threshold = parse_number("conf", *v);
        if (auto v = field("iou")) p.inference.iou_threshold = parse_number("iou", *v);
        if (auto v = field("mask_threshold")) p.inference.mask.threshold = parse_number("mask_threshold", *v);
        if (auto v = field("tile")) p.tile_size = parse_int("tile", *v);
        if (auto v = field("overlap")) p.overlap = parse_int("overlap", *v);
        if (auto v = field("dedup_iou")) p.dedup_iou = parse_number("dedup_iou", *v);
        if (auto v = field("border_margin")) p.border_margin = parse_int("border_margin", *v);
        if (auto v = field("px_um")) p.calibration.microns_per_pixel = parse_number("px_um", *v);
        return p;
    }

    void routes() {
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

        server.Post("/api/jobs", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                if (!req.is_multipart_form_data())
                    return send_error(res, 400, "invalid_argument", "expected multipart/form-data");
                const char* key = req.has_file("image") ? "image" : req.has_file("file") ? "file" : nullptr;
                if (!key) return send_error(res, 400, "invalid_argument", "missing image field");
                const auto file = req.get_file_value(key);
                if (file.content.empty()) return send_error(res, 400, "empty_upload", "uploaded image is empty");
                const AnalysisParams p = params_from(req);
                const auto* bytes = reinterpret_cast<const std::uint8_t*>(file.content.data());
                const std::string id = store.submit({bytes, file.content.size()}, file.filename, p);
                res.status = 202;
                res.set_header("Location", "/api/jobs/" + id);
                res.set_content(nlohmann::json{{"id", id}, {"state", "queued"}}.dump(), "application/json");
            });
        });

        server.Get("/api/jobs", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                nlohmann::json jobs = nlohmann::json::array();
                for (const auto& j : store.list()) jobs.push_back(nlohmann::json::parse(job_to_json(j, nullptr)));
                res.set_content(nlohmann::json{{"jobs", jobs}}.dump(), "application/json");
            });
        });

        server.Get(R"(/api/jobs/([A-Za-z0-9]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = req.matches[1];
                const auto info = store.get(id);
                if (!info) throw NotFoundError("no job " + id);
                std::shared_ptr<const AnalysisResult> r;
                if (info->state == JobState::Done) r = store.result(id);
                res.set_content(job_to_json(*info, r.get()), "application/json");
            });
        });

        server.Get(R"(/api/jobs/([A-Za-z0-9]+)/results\.csv)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = req.matches[1];
                res.set_header("Content-Disposition", "attachment; filename=\"" + id + ".csv\"");
                res.set_content(store.csv(id), "text/csv");
            });
        });

        server.Get(R"(/api/jobs/([A-Za-z0-9]+)/masks\.zip)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = req.matches[1];
                const auto z = store.masks_zip(id);
                res.set_header("Content-Disposition", "attachment; filename=\"" + id + "_masks.zip\"");
                res.set_content(reinterpret_cast<const char*>(z.data()), z.size(), "application/zip");
            });
        });

        server.Get(R"(/api/jobs/([A-Za-z0-9]+)/overlay\.png)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = req.matches[1];
                double cutoff = 0.0;
                if (req.has_param("conf")) cutoff = parse_number("conf", req.get_param_value("conf"));
                if (!(cutoff >= 0.0 && cutoff <= 1.0)) throw InvalidArgument("conf must be in [0, 1]");
                const auto png = store.overlay_png(id, cutoff);
                res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
            });
        });

        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) {
                const std::string code = res.status == 404 ? "not_found"
                                         : res.status == 413 ? "too_large"
                                                             : "http_" + std::to_string(res.status);
                send_error(res, res.status, code, httplib::status_message(res.status));
            }
        });
    }
};

HttpService::HttpService(JobStore& store, AnalysisParams defaults, std::size_t max_upload_bytes)
    : impl_(std::make_unique<Impl>(store, defaults)) {
    defaults.validate();
    impl_->server.set_payload_max_length(max_upload_bytes);
    impl_->routes();
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound <= 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void HttpService::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpService::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace fiberscope
