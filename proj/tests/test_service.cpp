#include <gtest/gtest.h>

#include <filesystem>
#include <future>
#include <memory>
#include <thread>

#include "ppinet/service.hpp"

using namespace ppinet;
using nlohmann::json;

namespace {

std::string base64(const std::string& bytes) {
    static const char* abc = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                           static_cast<unsigned char>(bytes[i + 2]);
        for (int k = 3; k >= 0; --k) out += abc[(v >> (6 * k)) & 63];
    }
    if (const auto rest = bytes.size() - i; rest > 0) {
        unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        if (rest == 2) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
        out += abc[(v >> 18) & 63];
        out += abc[(v >> 12) & 63];
        out += rest == 2 ? abc[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

Checkpoint tiny_checkpoint() { return {ModelConfig::tiny(), init_parameters<float>(ModelConfig::tiny(), 2)}; }

std::unique_ptr<Service> loaded_service() {
    auto s = std::make_unique<Service>();
    s->load(tiny_checkpoint(), "test-1");
    return s;
}

}  // namespace

TEST(Base64, DecodesWhatTheTestEncoderWrites) {
    for (const std::string& s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)})
        EXPECT_EQ(detail::base64_decode(base64(s)), s);
    EXPECT_EQ(detail::base64_decode("aGVs\nbG8="), "hello");
    EXPECT_THROW(detail::base64_decode("aGVs*"), Error);
    EXPECT_THROW(detail::base64_decode("aG=Vs"), Error);
}

TEST(Service, HealthReportsLoadingThenReady) {
    Service s;
    EXPECT_EQ(s.handle("GET", "/api/health", "").status, 503);
    EXPECT_EQ(s.handle("POST", "/api/infer", R"({"strokes": [[[0,0],[1,1]]]})").status, 503);
    s.load(tiny_checkpoint(), "test-1");
    const auto r = s.handle("GET", "/api/health", "");
    EXPECT_EQ(r.status, 200);
    const auto j = json::parse(r.body);
    EXPECT_EQ(j["status"], "ok");
    EXPECT_EQ(j["model_version"], "test-1");
}

TEST(Service, InferValidatesItsInput) {
    const auto holder = loaded_service();
    const auto& s = *holder;
    const auto blank = base64(encode_png(RasterImage{}));
    EXPECT_EQ(s.infer("{").status, 400);
    EXPECT_EQ(s.infer("[1,2]").status, 400);
    EXPECT_EQ(s.infer("{}").status, 400);
    EXPECT_EQ(s.infer(json{{"image", blank}, {"strokes", json::array()}}.dump()).status, 400);
    EXPECT_EQ(s.infer(json{{"image", 5}}.dump()).status, 400);
    EXPECT_EQ(s.infer(json{{"image", "****"}}.dump()).status, 400);
    EXPECT_EQ(s.infer(json{{"image", base64("not a png")}}.dump()).status, 400);
    EXPECT_EQ(s.infer(json{{"strokes", {{{0.1, 0.1}}}}}.dump()).status, 400);
    EXPECT_EQ(s.infer(json{{"strokes", {{{0.1, "x"}, {0.2, 0.2}}}}}.dump()).status, 400);
    EXPECT_EQ(s.infer(std::string(kMaxPayloadBytes + 1, ' ')).status, 413);
    EXPECT_EQ(s.infer(json{{"image", blank.substr(0, 40)}}.dump()).status, 400);
}

TEST(Service, InferOnBlankImageAndStrokes) {
    const auto holder = loaded_service();
    const auto& s = *holder;
    for (const auto& body : {json{{"image", base64(encode_png(RasterImage{}))}},
                             json{{"strokes", {{{0.2, 0.2}, {0.8, 0.2}}, {{0.5, 0.1}, {0.5, 0.9}}}}}}) {
        const auto r = s.infer(body.dump());
        ASSERT_EQ(r.status, 200) << r.body;
        const auto j = json::parse(r.body);
        EXPECT_EQ(j["queries"], 20);
        EXPECT_EQ(j["model_version"], "test-1");
        for (const auto& p : j["primitives"]) {
            EXPECT_GT(p["confidence"].get<double>(), 0.5);
            EXPECT_NO_THROW(primitive_from_json(p, 0));
        }
    }
    // threshold 0 keeps every query of an untrained model
    const auto all = s.infer(json{{"image", base64(encode_png(RasterImage{}))}, {"threshold", 0.0}}.dump());
    EXPECT_EQ(json::parse(all.body)["primitives"].size(), 20u);
}

TEST(Service, ExportFormats) {
    const auto holder = loaded_service();
    const auto& s = *holder;
    const json prims = json::array({json{{"kind", "line"}, {"params", {0, 0, 1, 0, 0, 0}}},
                                    json{{"kind", "circle"}, {"params", {0.5, 0.5, 0.25, 0, 0, 0}}}});
    const auto dxf = s.export_file(json{{"primitives", prims}}.dump());
    EXPECT_EQ(dxf.status, 200);
    EXPECT_EQ(dxf.content_type, "application/dxf");
    EXPECT_EQ(read_dxf(dxf.body).size(), 2u);
    const auto svg = s.export_file(json{{"primitives", prims}, {"format", "svg"}, {"scale", 10}}.dump());
    EXPECT_EQ(svg.content_type, "image/svg+xml");
    EXPECT_EQ(read_svg(svg.body, 10).size(), 2u);
    const auto js = s.export_file(json{{"primitives", prims}, {"format", "json"}}.dump());
    EXPECT_EQ(json::parse(js.body)["primitives"].size(), 2u);

    EXPECT_EQ(s.export_file(json{{"primitives", json::array()}}.dump()).status, 200);
    EXPECT_EQ(s.export_file("{}").status, 400);
    EXPECT_EQ(s.export_file("nope").status, 400);
    EXPECT_EQ(s.export_file(json{{"primitives", prims}, {"format", "pdf"}}.dump()).status, 400);
    EXPECT_EQ(s.export_file(json{{"primitives", prims}, {"scale", -1}}.dump()).status, 400);
    EXPECT_EQ(s.export_file(json{{"primitives", {{{"kind", "blob"}, {"params", {0, 0, 0, 0, 0, 0}}}}}}.dump()).status, 400);
    EXPECT_EQ(s.export_file(std::string(kMaxPayloadBytes + 1, ' ')).status, 413);
    // export needs no model
    EXPECT_EQ(Service{}.export_file(json{{"primitives", prims}}.dump()).status, 200);
}

TEST(Service, RoutingErrors) {
    const auto holder = loaded_service();
    const auto& s = *holder;
    EXPECT_EQ(s.handle("GET", "/api/nothing", "").status, 404);
    EXPECT_EQ(s.handle("POST", "/api/health", "").status, 405);
    EXPECT_EQ(s.handle("GET", "/api/infer", "").status, 405);
    EXPECT_EQ(s.handle("GET", "/api/export", "").status, 405);
}

TEST(Server, LiveRequestsAndStaticFiles) {
    const auto dir = std::filesystem::temp_directory_path() / "ppinet_static_test";
    std::filesystem::create_directories(dir);
    write_text_file(dir / "index.html", "<html>pad</html>");

    Service service;
    httplib::Server server;
    std::promise<int> bound;
    ServeOptions opt;
    opt.port = 0;
    opt.static_dir = dir;
    std::thread t([&] { run_server(service, opt, server, [&](int p) { bound.set_value(p); }); });
    const int port = bound.get_future().get();
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    auto h = cli.Get("/api/health");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->status, 503);
    service.load(tiny_checkpoint(), "live");
    h = cli.Get("/api/health");
    EXPECT_EQ(h->status, 200);

    const auto body = json{{"strokes", {{{0.2, 0.2}, {0.8, 0.8}}}}}.dump();
    auto inf = cli.Post("/api/infer", body, "application/json");
    ASSERT_TRUE(inf);
    EXPECT_EQ(inf->status, 200);
    EXPECT_TRUE(json::parse(inf->body).contains("primitives"));

    auto ex = cli.Post("/api/export", R"({"primitives": [{"kind": "point", "params": [0.5, 0.5, 0, 0, 0, 0]}]})",
                       "application/json");
    ASSERT_TRUE(ex);
    EXPECT_EQ(ex->get_header_value("Content-Type"), "application/dxf");

    auto big = cli.Post("/api/infer", std::string(kMaxPayloadBytes + 10, ' '), "application/json");
    ASSERT_TRUE(big);
    EXPECT_EQ(big->status, 413);
    EXPECT_EQ(cli.Get("/api/infer")->status, 405);
    EXPECT_EQ(cli.Get("/missing.js")->status, 404);
    auto page = cli.Get("/index.html");
    ASSERT_TRUE(page);
    EXPECT_EQ(page->body, "<html>pad</html>");

    server.stop();
    t.join();
    std::filesystem::remove_all(dir);
}
