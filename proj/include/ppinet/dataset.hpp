#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppinet/errors.hpp"
#include "ppinet/geometry.hpp"

namespace ppinet {

inline constexpr int kMinPrimitives = 6;
inline constexpr int kMaxPrimitives = 16;

struct Sketch {
    std::string id;
    std::vector<Primitive> primitives;

    bool operator==(const Sketch&) const = default;
};

// ---------------------------------------------------------------------------
// normalization

struct BoundingBox {
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = std::numeric_limits<double>::infinity();
    double max_x = -std::numeric_limits<double>::infinity();
    double max_y = -std::numeric_limits<double>::infinity();

    void add(const Point2& p) {
        min_x = std::min(min_x, p.x);
        min_y = std::min(min_y, p.y);
        max_x = std::max(max_x, p.x);
        max_y = std::max(max_y, p.y);
    }
    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
};

/// Extent of the sampled geometry. Coordinate slots are included as well so that an
/// arc's mid point never lands outside the frame when it falls between two samples.
inline BoundingBox sketch_bounds(const std::vector<Primitive>& prims) {
    BoundingBox box;
    for (const auto& p : prims) {
        for (const auto& q : sample_points(p)) box.add(q);
        switch (p.kind) {
            case PrimitiveKind::Arc: box.add({p.params[4], p.params[5]}); [[fallthrough]];
            case PrimitiveKind::Line: box.add({p.params[2], p.params[3]}); [[fallthrough]];
            case PrimitiveKind::Point: box.add({p.params[0], p.params[1]}); break;
            case PrimitiveKind::Circle: break;
        }
    }
    return box;
}

/// Centers the sketch at (0.5, 0.5) and scales its longest side to 1, preserving aspect.
inline Sketch normalize_sketch(const Sketch& raw) {
    if (raw.primitives.empty()) throw DegenerateExtentError("sketch has no primitives");
    const BoundingBox box = sketch_bounds(raw.primitives);
    const double extent = std::max(box.width(), box.height());
    if (!(extent > 0.0) || !std::isfinite(extent))
        throw DegenerateExtentError("sketch '" + raw.id + "' has zero extent");
    const double cx = 0.5 * (box.min_x + box.max_x);
    const double cy = 0.5 * (box.min_y + box.max_y);
    auto map_x = [&](double x) { return std::clamp((x - cx) / extent + 0.5, 0.0, 1.0); };
    auto map_y = [&](double y) { return std::clamp((y - cy) / extent + 0.5, 0.0, 1.0); };

    Sketch out{raw.id, {}};
    out.primitives.reserve(raw.primitives.size());
    for (const auto& p : raw.primitives) {
        ParamVector q = p.params;
        switch (p.kind) {
            case PrimitiveKind::Circle:
                q[0] = map_x(q[0]);
                q[1] = map_y(q[1]);
                q[2] = std::clamp(q[2] / extent, 0.0, 1.0);
                break;
            default:
                for (int i = 0; i < kNumParams; i += 2) {
                    q[i] = map_x(q[i]);
                    q[i + 1] = map_y(q[i + 1]);
                }
                break;
        }
        out.primitives.emplace_back(p.kind, q);
    }
    return out;
}

// ---------------------------------------------------------------------------
// filtering

enum class FilterReason { Accepted, TooFew, TooMany, UnsupportedKind };

inline std::string_view filter_reason_name(FilterReason r) {
    switch (r) {
        case FilterReason::Accepted: return "accepted";
        case FilterReason::TooFew: return "too_few";
        case FilterReason::TooMany: return "too_many";
        case FilterReason::UnsupportedKind: return "unsupported_kind";
    }
    return "?";
}

struct FilterResult {
    bool accepted = false;
    FilterReason reason = FilterReason::Accepted;
};

inline FilterResult filter_sketch(const Sketch& s) {
    const auto n = static_cast<int>(s.primitives.size());
    if (n < kMinPrimitives) return {false, FilterReason::TooFew};
    if (n > kMaxPrimitives) return {false, FilterReason::TooMany};
    for (const auto& p : s.primitives)
        if (kind_index(p.kind) < 0 || kind_index(p.kind) >= kNumKinds)
            return {false, FilterReason::UnsupportedKind};
    return {true, FilterReason::Accepted};
}

// ---------------------------------------------------------------------------
// procedural generation

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline Sketch generate_candidate(std::mt19937_64& rng, const std::string& id) {
    std::uniform_int_distribution<int> grid(0, 10);
    std::uniform_real_distribution<double> jitter(-0.15, 0.15);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    auto gx = [&] { return grid(rng) + jitter(rng); };

    Sketch s{id, {}};
    const int loops = pick(1, 3);
    for (int l = 0; l < loops; ++l) {
        const double x0 = gx(), y0 = gx();
        const double w = pick(2, 6), h = pick(2, 6);
        if (unit(rng) < 0.75) {
            const Point2 c[4] = {{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}};
            for (int i = 0; i < 4; ++i) {
                const auto& a = c[i];
                const auto& b = c[(i + 1) % 4];
                s.primitives.emplace_back(PrimitiveKind::Line, ParamVector{a.x, a.y, b.x, b.y, 0, 0});
            }
        } else {
            const Point2 c[3] = {{x0, y0}, {x0 + w, y0}, {x0 + 0.5 * w, y0 + h}};
            for (int i = 0; i < 3; ++i) {
                const auto& a = c[i];
                const auto& b = c[(i + 1) % 3];
                s.primitives.emplace_back(PrimitiveKind::Line, ParamVector{a.x, a.y, b.x, b.y, 0, 0});
            }
        }
    }
    const int circles = pick(0, 3);
    for (int i = 0; i < circles; ++i) {
        const double r = 0.5 + 0.5 * pick(0, 4);
        s.primitives.emplace_back(PrimitiveKind::Circle, ParamVector{gx(), gx(), r, 0, 0, 0});
    }
    const int arcs = pick(0, 3);
    for (int i = 0; i < arcs; ++i) {
        const double cx = gx(), cy = gx();
        const double r = 1.0 + 0.5 * pick(0, 4);
        const double a0 = unit(rng) * 2.0 * std::numbers::pi;
        const double sweep = (60.0 + 30.0 * pick(0, 7)) * std::numbers::pi / 180.0;
        const double am = a0 + 0.5 * sweep, a1 = a0 + sweep;
        s.primitives.emplace_back(
            PrimitiveKind::Arc,
            ParamVector{cx + r * std::cos(a0), cy + r * std::sin(a0), cx + r * std::cos(am),
                        cy + r * std::sin(am), cx + r * std::cos(a1), cy + r * std::sin(a1)});
    }
    const int points = pick(0, 2);
    for (int i = 0; i < points; ++i)
        s.primitives.emplace_back(PrimitiveKind::Point, ParamVector{gx(), gx(), 0, 0, 0, 0});
    return s;
}

inline int distinct_kinds(const Sketch& s) {
    bool seen[kNumKinds] = {};
    for (const auto& p : s.primitives) seen[kind_index(p.kind)] = true;
    return static_cast<int>(std::count(std::begin(seen), std::end(seen), true));
}

}  // namespace detail

/// Deterministic CAD-like sketch: 1-3 rectangle/triangle loops plus circles, arcs and
/// points on a jittered grid, normalized, retried until it passes filter_sketch and has
/// at least two kinds.
inline Sketch generate_sketch(std::uint64_t seed) {
    const std::string id = "gen-" + std::to_string(seed);
    for (std::uint64_t attempt = 0;; ++attempt) {
        std::mt19937_64 rng(detail::mix_seed(seed, attempt));
        Sketch s = detail::generate_candidate(rng, id);
        if (!filter_sketch(s).accepted || detail::distinct_kinds(s) < 2) continue;
        return normalize_sketch(s);
    }
}

// ---------------------------------------------------------------------------
// corpus split

enum class Split { Train, Val, Test };

struct CorpusSplit {
    double train = 0.925;
    double val = 0.025;
    double test = 0.05;
};

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Split membership as a pure function of (id, seed).
inline Split assign_split(const std::string& id, std::uint64_t seed, const CorpusSplit& fr = {}) {
    if (std::abs(fr.train + fr.val + fr.test - 1.0) > 1e-9)
        throw Error("split fractions must sum to 1");
    const std::uint64_t h = detail::mix_seed(fnv1a(id), seed);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (u < fr.train) return Split::Train;
    if (u < fr.train + fr.val) return Split::Val;
    return Split::Test;
}

// ---------------------------------------------------------------------------
// JSON records

inline nlohmann::json to_json(const Primitive& p) {
    return {{"kind", kind_name(p.kind)}, {"params", p.params}};
}

inline nlohmann::json to_json(const Sketch& s) {
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : s.primitives) prims.push_back(to_json(p));
    return {{"id", s.id}, {"primitives", prims}};
}

inline nlohmann::json corpus_to_json(const std::vector<Sketch>& sketches) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : sketches) arr.push_back(to_json(s));
    return arr;
}

/// Parses one primitive object; throws SchemaError(index) on a malformed entry.
inline Primitive primitive_from_json(const nlohmann::json& j, long index) {
    if (!j.is_object() || !j.contains("kind") || !j.contains("params"))
        throw SchemaError(index, "primitive needs 'kind' and 'params'");
    if (!j["kind"].is_string()) throw SchemaError(index, "'kind' must be a string");
    const auto kind = kind_from_name(j["kind"].get<std::string>());
    if (!kind) throw SchemaError(index, "unsupported kind '" + j["kind"].get<std::string>() + "'");
    const auto& params = j["params"];
    if (!params.is_array() || params.size() != kNumParams)
        throw SchemaError(index, "'params' must hold 6 numbers");
    ParamVector p{};
    for (int i = 0; i < kNumParams; ++i) {
        if (!params[i].is_number()) throw SchemaError(index, "'params' must hold 6 numbers");
        p[i] = params[i].get<double>();
        if (!std::isfinite(p[i])) throw SchemaError(index, "non-finite parameter");
    }
    return Primitive(*kind, p);
}

inline Sketch sketch_from_json(const nlohmann::json& j, long index) {
    if (!j.is_object() || !j.contains("id") || !j.contains("primitives"))
        throw SchemaError(index, "record needs 'id' and 'primitives'");
    if (!j["id"].is_string()) throw SchemaError(index, "'id' must be a string");
    if (!j["primitives"].is_array()) throw SchemaError(index, "'primitives' must be an array");
    Sketch s{j["id"].get<std::string>(), {}};
    for (const auto& p : j["primitives"]) s.primitives.push_back(primitive_from_json(p, index));
    return s;
}

struct LoadOptions {
    bool strict = false;     // throw SchemaError instead of skipping bad records
    bool normalize = true;
    bool filter = true;
};

struct CorpusLoad {
    std::vector<Sketch> sketches;
    std::size_t skipped = 0;
    std::vector<std::string> skip_reasons;
};

/// Reads a JSON array of sketch records. Records with unsupported kinds, bad shapes,
/// degenerate extent, or failing the primitive-count filter are skipped and counted.
inline CorpusLoad load_corpus_string(const std::string& text, const LoadOptions& opt = {}) {
    CorpusLoad out;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return out;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(-1, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw SchemaError(-1, "corpus must be a JSON array");
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const long idx = static_cast<long>(i);
        try {
            Sketch s = sketch_from_json(doc[i], idx);
            if (opt.normalize) s = normalize_sketch(s);
            if (opt.filter) {
                const auto f = filter_sketch(s);
                if (!f.accepted) throw SchemaError(idx, std::string(filter_reason_name(f.reason)));
            }
            out.sketches.push_back(std::move(s));
        } catch (const Error& e) {
            if (opt.strict) {
                if (dynamic_cast<const SchemaError*>(&e)) throw;
                throw SchemaError(idx, e.what());
            }
            ++out.skipped;
            out.skip_reasons.emplace_back(e.what());
        }
    }
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline CorpusLoad load_corpus(const std::filesystem::path& path, const LoadOptions& opt = {}) {
    return load_corpus_string(read_text_file(path), opt);
}

/// Writes the corpus as a UTF-8 JSON array with LF line endings.
inline void save_corpus(const std::filesystem::path& path, const std::vector<Sketch>& sketches) {
    write_text_file(path, corpus_to_json(sketches).dump(1) + "\n");
}

inline std::vector<Sketch> generate_corpus(std::uint64_t first_seed, std::size_t count) {
    std::vector<Sketch> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sketch(first_seed + i));
    return out;
}

}  // namespace ppinet
