#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppinet/dataset.hpp"
#include "ppinet/export.hpp"
#include "ppinet/handdraw.hpp"
#include "ppinet/metrics.hpp"
#include "ppinet/pipeline.hpp"
#include "ppinet/png_io.hpp"

// after Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's product kernels
#include <httplib.h>

namespace ppinet {

inline constexpr std::size_t kMaxPayloadBytes = 1 << 20;

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
};

namespace detail {

inline HttpResponse json_response(int status, const nlohmann::json& j) {
    return {status, "application/json", j.dump(), {}};
}

inline HttpResponse error_response(int status, const std::string& msg) {
    return json_response(status, {{"error", msg}});
}

/// Standard (RFC 4648) base64 with optional padding; whitespace is ignored.
inline std::string base64_decode(const std::string& in) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    unsigned acc = 0;
    int bits = 0;
    bool padding = false;
    for (char c : in) {
        if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
        if (c == '=') {
            padding = true;
            continue;
        }
        const int v = value(c);
        if (v < 0 || padding) throw Error("invalid base64");
        acc = (acc << 6) | static_cast<unsigned>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xffu));
        }
    }
    return out;
}

inline std::vector<Primitive> primitives_from_json(const nlohmann::json& arr) {
    if (!arr.is_array()) throw SchemaError(-1, "primitives must be an array");
    std::vector<Primitive> out;
    for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(primitive_from_json(arr[i], static_cast<long>(i)));
    return out;
}

}  // namespace detail

/// Request handling without any socket; the HTTP server only forwards to handle().
class Service {
public:
    bool ready() const {
        std::lock_guard lock(mu_);
        return model_ != nullptr;
    }

    void load(Checkpoint ck, std::string version) {
        auto m = std::make_shared<Loaded>();
        m->config = ck.config;
        m->store = std::move(ck.store);
        m->version = std::move(version);
        std::lock_guard lock(mu_);
        model_ = std::move(m);
    }

    void load_file(const std::filesystem::path& path) {
        const auto bytes = read_text_file(path);
        char hash[32];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
        load(decode_checkpoint(bytes), "ckpt-v" + std::to_string(kCheckpointVersion) + "-" + hash);
    }

    HttpResponse health() const {
        const auto m = current();
        if (!m) return detail::json_response(503, {{"status", "loading"}});
        return detail::json_response(200, {{"status", "ok"}, {"model_version", m->version}, {"model", to_json(m->config)}});
    }

    HttpResponse infer(const std::string& body) const {
        if (body.size() > kMaxPayloadBytes) return detail::error_response(413, "payload too large");
        const auto m = current();
        if (!m) return detail::error_response(503, "model not loaded");
        nlohmann::json req;
        try {
            req = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            return detail::error_response(400, "body is not valid JSON");
        }
        if (!req.is_object()) return detail::error_response(400, "request must be a JSON object");
        const bool has_image = req.contains("image"), has_strokes = req.contains("strokes");
        if (has_image == has_strokes) return detail::error_response(400, "exactly one of 'image' or 'strokes' is required");
        const double threshold = req.value("threshold", EvalThresholds{}.tau_con);

        RasterImage img;
        try {
            if (has_image) {
                if (!req["image"].is_string()) return detail::error_response(400, "'image' must be a base64 string");
                img = decode_png(detail::base64_decode(req["image"].get<std::string>()));
            } else {
                img = rasterize(strokes_from_json(req["strokes"]));
            }
        } catch (const Error& e) {
            return detail::error_response(400, e.what());
        } catch (const nlohmann::json::exception& e) {
            return detail::error_response(400, e.what());
        }

        DecoderOutput rows;
        {
            // forward passes only read the weights; the lock keeps the store's graph use simple
            std::lock_guard lock(m->mu);
            rows = infer_rows(*m, img);
        }
        nlohmann::json prims = nlohmann::json::array();
        for (const auto& d : detect(rows, threshold)) prims.push_back(to_json(d));
        return detail::json_response(200, {{"primitives", prims}, {"model_version", m->version}, {"queries", rows.size()}});
    }

    HttpResponse export_file(const std::string& body) const {
        if (body.size() > kMaxPayloadBytes) return detail::error_response(413, "payload too large");
        try {
            const auto req = nlohmann::json::parse(body);
            if (!req.is_object() || !req.contains("primitives"))
                return detail::error_response(400, "'primitives' is required");
            const auto prims = detail::primitives_from_json(req["primitives"]);
            const std::string format = req.value("format", std::string("dxf"));
            const double scale = req.value("scale", kDefaultExportScale);
            if (!(scale > 0.0)) return detail::error_response(400, "scale must be positive");
            std::vector<std::string> warnings;
            HttpResponse r;
            if (format == "dxf") {
                r.content_type = "application/dxf";
                r.body = to_dxf(prims, scale, &warnings);
            } else if (format == "svg") {
                r.content_type = "image/svg+xml";
                r.body = to_svg(prims, scale, &warnings);
            } else if (format == "json") {
                nlohmann::json arr = nlohmann::json::array();
                for (const auto& p : prims) arr.push_back(to_json(p));
                r.body = nlohmann::json{{"primitives", arr}, {"scale", scale}}.dump();
            } else {
                return detail::error_response(400, "format must be dxf, svg or json");
            }
            r.headers.emplace_back("X-Export-Warnings", std::to_string(warnings.size()));
            return r;
        } catch (const nlohmann::json::exception& e) {
            return detail::error_response(400, e.what());
        } catch (const Error& e) {
            return detail::error_response(400, e.what());
        }
    }

    HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) const {
        if (path == "/api/health") {
            if (method != "GET") return detail::error_response(405, "method not allowed");
            return health();
        }
        if (path == "/api/infer") {
            if (method != "POST") return detail::error_response(405, "method not allowed");
            return infer(body);
        }
        if (path == "/api/export") {
            if (method != "POST") return detail::error_response(405, "method not allowed");
            return export_file(body);
        }
        return detail::error_response(404, "not found");
    }

    /// Polylines in the normalized frame, rasterized like the training renders.
    static std::vector<Stroke> strokes_from_json(const nlohmann::json& j) {
        if (!j.is_array()) throw SchemaError(-1, "'strokes' must be an array of polylines");
        std::vector<Stroke> out;
        for (std::size_t i = 0; i < j.size(); ++i) {
            const auto& line = j[i];
            if (!line.is_array() || line.size() < 2)
                throw SchemaError(static_cast<long>(i), "a stroke needs at least two points");
            Stroke s;
            s.width_px = NoiseConfig{}.line_width_px;
            for (const auto& pt : line) {
                if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
                    throw SchemaError(static_cast<long>(i), "points must be [x, y] numbers");
                const Point2 p{pt[0].get<double>(), pt[1].get<double>()};
                if (!std::isfinite(p.x) || !std::isfinite(p.y))
                    throw SchemaError(static_cast<long>(i), "non-finite coordinate");
                s.points.push_back(p);
            }
            out.push_back(std::move(s));
        }
        return out;
    }

private:
    struct Loaded {
        ModelConfig config;
        nc::ParameterStore<float> store;
        std::string version;
        mutable std::mutex mu;
    };

    static DecoderOutput infer_rows(Loaded& m, const RasterImage& img) { return ::ppinet::infer(m.config, m.store, img); }

    std::shared_ptr<Loaded> current() const {
        std::lock_guard lock(mu_);
        return model_;
    }

    mutable std::mutex mu_;
    std::shared_ptr<Loaded> model_;
};

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<std::filesystem::path> static_dir;
};

/// Blocking HTTP server. `on_bound` receives the actual port (useful with port 0).
inline bool run_server(Service& service, const ServeOptions& opt, httplib::Server& server,
                       const std::function<void(int)>& on_bound = {}) {
    server.set_payload_max_length(kMaxPayloadBytes);
    auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
        const auto r = service.handle(req.method, req.path, req.body);
        res.status = r.status;
        for (const auto& [k, v] : r.headers) res.set_header(k, v);
        res.set_content(r.body, r.content_type);
    };
    // every method reaches handle() so a wrong one gets 405 rather than 404
    for (const char* path : {"/api/health", "/api/infer", "/api/export"}) {
        server.Get(path, forward);
        server.Post(path, forward);
        server.Put(path, forward);
        server.Delete(path, forward);
    }
    if (opt.static_dir && !server.set_mount_point("/", opt.static_dir->string()))
        throw IoError("static directory not found: " + opt.static_dir->string());
    const int port = opt.port == 0 ? server.bind_to_any_port(opt.host) : (server.bind_to_port(opt.host, opt.port) ? opt.port : -1);
    if (port < 0) throw IoError("cannot bind " + opt.host + ":" + std::to_string(opt.port));
    if (on_bound) on_bound(port);
    return server.listen_after_bind();
}

}  // namespace ppinet
