#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "ppinet/errors.hpp"
#include "ppinet/geometry.hpp"

namespace ppinet {

inline constexpr double kDefaultExportScale = 100.0;

/// A primitive in drawing units (normalized coordinates times the scale), in the form
/// CAD files store it. Arcs run counter-clockwise from start_deg to end_deg.
struct CadEntity {
    enum class Type { Line, Circle, Arc, Point };
    Type type = Type::Line;
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // line ends, or point position in x1/y1
    double cx = 0, cy = 0, r = 0;           // circle and arc
    double start_deg = 0, end_deg = 0;      // arc
};

inline const char* entity_name(CadEntity::Type t) {
    switch (t) {
        case CadEntity::Type::Line: return "LINE";
        case CadEntity::Type::Circle: return "CIRCLE";
        case CadEntity::Type::Arc: return "ARC";
        case CadEntity::Type::Point: return "POINT";
    }
    return "";
}

namespace detail {

inline double degrees_0_360(double rad) {
    double d = rad * 180.0 / std::numbers::pi;
    d = std::fmod(d, 360.0);
    if (d < 0.0) d += 360.0;
    if (d >= 360.0) d -= 360.0;
    return d;
}

inline std::string fmt_fixed(double v) {
    if (v == 0.0) v = 0.0;  // no "-0.000000000"
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

inline std::string fmt_exact(double v) {
    if (v == 0.0) v = 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Converts primitives to drawing units. Degenerate (collinear) arcs become a line from
/// start to end, and a message is appended to `warnings`.
inline std::vector<CadEntity> to_entities(const std::vector<Primitive>& prims, double scale = kDefaultExportScale,
                                          std::vector<std::string>* warnings = nullptr) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw DomainError("export scale must be positive");
    std::vector<CadEntity> out;
    for (std::size_t i = 0; i < prims.size(); ++i) {
        const auto& p = prims[i].params;
        CadEntity e;
        switch (prims[i].kind) {
            case PrimitiveKind::Line:
                e.type = CadEntity::Type::Line;
                e.x1 = p[0] * scale, e.y1 = p[1] * scale, e.x2 = p[2] * scale, e.y2 = p[3] * scale;
                break;
            case PrimitiveKind::Circle:
                e.type = CadEntity::Type::Circle;
                e.cx = p[0] * scale, e.cy = p[1] * scale, e.r = p[2] * scale;
                break;
            case PrimitiveKind::Point:
                e.type = CadEntity::Type::Point;
                e.x1 = p[0] * scale, e.y1 = p[1] * scale;
                break;
            case PrimitiveKind::Arc: {
                const Point2 s{p[0], p[1]}, m{p[2], p[3]}, en{p[4], p[5]};
                Circle<double> c;
                try {
                    c = circumcircle(s, m, en);
                } catch (const CollinearError&) {
                    if (warnings) warnings->push_back("primitive " + std::to_string(i) + ": collinear arc exported as LINE");
                    e.type = CadEntity::Type::Line;
                    e.x1 = s.x * scale, e.y1 = s.y * scale, e.x2 = en.x * scale, e.y2 = en.y * scale;
                    break;
                }
                const double as = std::atan2(s.y - c.center.y, s.x - c.center.x);
                const double am = std::atan2(m.y - c.center.y, m.x - c.center.x);
                const double ae = std::atan2(en.y - c.center.y, en.x - c.center.x);
                const bool ccw = arc_sweep(as, am, ae) > 0.0;
                e.type = CadEntity::Type::Arc;
                e.cx = c.center.x * scale, e.cy = c.center.y * scale, e.r = c.radius * scale;
                e.start_deg = detail::degrees_0_360(ccw ? as : ae);
                e.end_deg = detail::degrees_0_360(ccw ? ae : as);
                break;
            }
        }
        out.push_back(e);
    }
    return out;
}

/// Back to normalized primitives; arcs get their mid point halfway along the sweep.
inline std::vector<Primitive> from_entities(const std::vector<CadEntity>& ents, double scale = kDefaultExportScale) {
    std::vector<Primitive> out;
    for (const auto& e : ents) {
        switch (e.type) {
            case CadEntity::Type::Line:
                out.emplace_back(PrimitiveKind::Line, ParamVector{e.x1 / scale, e.y1 / scale, e.x2 / scale, e.y2 / scale, 0, 0});
                break;
            case CadEntity::Type::Circle:
                out.emplace_back(PrimitiveKind::Circle, ParamVector{e.cx / scale, e.cy / scale, e.r / scale, 0, 0, 0});
                break;
            case CadEntity::Type::Point:
                out.emplace_back(PrimitiveKind::Point, ParamVector{e.x1 / scale, e.y1 / scale, 0, 0, 0, 0});
                break;
            case CadEntity::Type::Arc: {
                const double a0 = e.start_deg * std::numbers::pi / 180.0;
                double sweep = (e.end_deg - e.start_deg) * std::numbers::pi / 180.0;
                if (sweep <= 0.0) sweep += 2.0 * std::numbers::pi;
                const double am = a0 + 0.5 * sweep, a1 = a0 + sweep;
                ParamVector p{e.cx + e.r * std::cos(a0), e.cy + e.r * std::sin(a0), e.cx + e.r * std::cos(am),
                              e.cy + e.r * std::sin(am), e.cx + e.r * std::cos(a1), e.cy + e.r * std::sin(a1)};
                for (auto& v : p) v /= scale;
                out.emplace_back(PrimitiveKind::Arc, p);
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// DXF

namespace detail {

inline void dxf_pair(std::string& s, int code, const std::string& value) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%3d\n", code);
    s += buf;
    s += value;
    s += '\n';
}

}  // namespace detail

/// Minimal ASCII DXF (R12): HEADER with $ACADVER, ENTITIES, EOF. All entities on layer 0.
inline std::string write_dxf(const std::vector<CadEntity>& ents) {
    using detail::dxf_pair;
    using detail::fmt_fixed;
    std::string s;
    dxf_pair(s, 0, "SECTION");
    dxf_pair(s, 2, "HEADER");
    dxf_pair(s, 9, "$ACADVER");
    dxf_pair(s, 1, "AC1009");
    dxf_pair(s, 0, "ENDSEC");
    dxf_pair(s, 0, "SECTION");
    dxf_pair(s, 2, "ENTITIES");
    for (const auto& e : ents) {
        dxf_pair(s, 0, entity_name(e.type));
        dxf_pair(s, 8, "0");
        switch (e.type) {
            case CadEntity::Type::Line:
                dxf_pair(s, 10, fmt_fixed(e.x1));
                dxf_pair(s, 20, fmt_fixed(e.y1));
                dxf_pair(s, 30, fmt_fixed(0.0));
                dxf_pair(s, 11, fmt_fixed(e.x2));
                dxf_pair(s, 21, fmt_fixed(e.y2));
                dxf_pair(s, 31, fmt_fixed(0.0));
                break;
            case CadEntity::Type::Circle:
            case CadEntity::Type::Arc:
                dxf_pair(s, 10, fmt_fixed(e.cx));
                dxf_pair(s, 20, fmt_fixed(e.cy));
                dxf_pair(s, 30, fmt_fixed(0.0));
                dxf_pair(s, 40, fmt_fixed(e.r));
                if (e.type == CadEntity::Type::Arc) {
                    dxf_pair(s, 50, fmt_fixed(e.start_deg));
                    dxf_pair(s, 51, fmt_fixed(e.end_deg));
                }
                break;
            case CadEntity::Type::Point:
                dxf_pair(s, 10, fmt_fixed(e.x1));
                dxf_pair(s, 20, fmt_fixed(e.y1));
                dxf_pair(s, 30, fmt_fixed(0.0));
                break;
        }
    }
    dxf_pair(s, 0, "ENDSEC");
    dxf_pair(s, 0, "EOF");
    return s;
}

inline std::string to_dxf(const std::vector<Primitive>& prims, double scale = kDefaultExportScale,
                          std::vector<std::string>* warnings = nullptr) {
    return write_dxf(to_entities(prims, scale, warnings));
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        throw Error("malformed number '" + v + "'");
    }
    if (used != v.size()) throw Error("malformed number '" + v + "'");
    return d;
}

}  // namespace detail

/// Reads LINE/CIRCLE/ARC/POINT entities of an ASCII DXF; other entities are ignored.
inline std::vector<CadEntity> read_dxf(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::pair<int, std::string>> pairs;
    std::string code, value;
    while (std::getline(in, code)) {
        if (!std::getline(in, value)) throw Error("dxf: dangling group code");
        pairs.emplace_back(static_cast<int>(detail::parse_number(detail::trim(code))), detail::trim(value));
    }
    std::vector<CadEntity> out;
    bool in_entities = false;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [c, v] = pairs[i];
        if (c == 2 && v == "ENTITIES") in_entities = true;
        if (c == 0 && v == "ENDSEC") in_entities = false;
        if (!in_entities || c != 0) continue;
        CadEntity e;
        if (v == "LINE") e.type = CadEntity::Type::Line;
        else if (v == "CIRCLE") e.type = CadEntity::Type::Circle;
        else if (v == "ARC") e.type = CadEntity::Type::Arc;
        else if (v == "POINT") e.type = CadEntity::Type::Point;
        else continue;
        for (std::size_t j = i + 1; j < pairs.size() && pairs[j].first != 0; ++j) {
            const auto& [gc, gv] = pairs[j];
            const bool round = e.type == CadEntity::Type::Circle || e.type == CadEntity::Type::Arc;
            switch (gc) {
                case 10: (round ? e.cx : e.x1) = detail::parse_number(gv); break;
                case 20: (round ? e.cy : e.y1) = detail::parse_number(gv); break;
                case 11: e.x2 = detail::parse_number(gv); break;
                case 21: e.y2 = detail::parse_number(gv); break;
                case 40: e.r = detail::parse_number(gv); break;
                case 50: e.start_deg = detail::parse_number(gv); break;
                case 51: e.end_deg = detail::parse_number(gv); break;
                default: break;
            }
        }
        out.push_back(e);
    }
    return out;
}

// ---------------------------------------------------------------------------
// SVG

/// SVG 1.1 document of side `scale`; y is flipped so the drawing appears upright.
/// Arcs are two arc segments through the mid point, points are small filled circles.
inline std::string write_svg(const std::vector<CadEntity>& ents, double scale = kDefaultExportScale) {
    using detail::fmt_exact;
    auto fy = [&](double y) { return scale - y; };
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt_exact(scale) << "\" height=\""
       << fmt_exact(scale) << "\" viewBox=\"0 0 " << fmt_exact(scale) << ' ' << fmt_exact(scale) << "\">\n"
       << "<g fill=\"none\" stroke=\"black\" stroke-width=\"" << fmt_exact(scale / 200.0) << "\">\n";
    for (const auto& e : ents) {
        switch (e.type) {
            case CadEntity::Type::Line:
                os << "<line x1=\"" << fmt_exact(e.x1) << "\" y1=\"" << fmt_exact(fy(e.y1)) << "\" x2=\""
                   << fmt_exact(e.x2) << "\" y2=\"" << fmt_exact(fy(e.y2)) << "\"/>\n";
                break;
            case CadEntity::Type::Circle:
                os << "<circle class=\"circle\" cx=\"" << fmt_exact(e.cx) << "\" cy=\"" << fmt_exact(fy(e.cy))
                   << "\" r=\"" << fmt_exact(e.r) << "\"/>\n";
                break;
            case CadEntity::Type::Point:
                os << "<circle class=\"point\" cx=\"" << fmt_exact(e.x1) << "\" cy=\"" << fmt_exact(fy(e.y1))
                   << "\" r=\"" << fmt_exact(scale / 100.0) << "\" fill=\"black\"/>\n";
                break;
            case CadEntity::Type::Arc: {
                const double a0 = e.start_deg * std::numbers::pi / 180.0;
                double sweep = (e.end_deg - e.start_deg) * std::numbers::pi / 180.0;
                if (sweep <= 0.0) sweep += 2.0 * std::numbers::pi;
                auto pt = [&](double a) {
                    return fmt_exact(e.cx + e.r * std::cos(a)) + ' ' + fmt_exact(fy(e.cy + e.r * std::sin(a)));
                };
                const std::string r = fmt_exact(e.r);
                // counter-clockwise in drawing space is the positive sweep direction after the flip
                os << "<path class=\"arc\" d=\"M " << pt(a0) << " A " << r << ' ' << r << " 0 0 1 "
                   << pt(a0 + 0.5 * sweep) << " A " << r << ' ' << r << " 0 0 1 " << pt(a0 + sweep) << "\"/>\n";
                break;
            }
        }
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

inline std::string to_svg(const std::vector<Primitive>& prims, double scale = kDefaultExportScale,
                          std::vector<std::string>* warnings = nullptr) {
    return write_svg(to_entities(prims, scale, warnings), scale);
}

namespace detail {

inline double svg_attr(const std::string& element, const std::string& name) {
    const std::regex re("\\s" + name + "=\"([^\"]*)\"");
    std::smatch m;
    if (!std::regex_search(element, m, re)) throw Error("svg: missing attribute " + name);
    return parse_number(m[1].str());
}

}  // namespace detail

/// Reads back the elements produced by write_svg.
inline std::vector<CadEntity> read_svg(const std::string& text, double scale = kDefaultExportScale) {
    auto fy = [&](double y) { return scale - y; };
    std::vector<CadEntity> out;
    const std::regex element_re("<(line|circle|path)\\b[^>]*>");
    for (auto it = std::sregex_iterator(text.begin(), text.end(), element_re); it != std::sregex_iterator(); ++it) {
        const std::string el = it->str();
        const std::string tag = (*it)[1].str();
        CadEntity e;
        if (tag == "line") {
            e.type = CadEntity::Type::Line;
            e.x1 = detail::svg_attr(el, "x1");
            e.y1 = fy(detail::svg_attr(el, "y1"));
            e.x2 = detail::svg_attr(el, "x2");
            e.y2 = fy(detail::svg_attr(el, "y2"));
        } else if (tag == "circle") {
            const bool point = el.find("class=\"point\"") != std::string::npos;
            e.type = point ? CadEntity::Type::Point : CadEntity::Type::Circle;
            const double cx = detail::svg_attr(el, "cx"), cy = fy(detail::svg_attr(el, "cy"));
            if (point) {
                e.x1 = cx, e.y1 = cy;
            } else {
                e.cx = cx, e.cy = cy, e.r = detail::svg_attr(el, "r");
            }
        } else {
            const std::regex d_re("\\sd=\"([^\"]*)\"");
            std::smatch dm;
            if (!std::regex_search(el, dm, d_re)) throw Error("svg: path without d");
            std::istringstream d(dm[1].str());
            std::string tok;
            std::vector<double> nums;
            while (d >> tok)
                if (tok != "M" && tok != "A") nums.push_back(detail::parse_number(tok));
            if (nums.size() != 16) throw Error("svg: unsupported path");
            const Point2 s{nums[0], fy(nums[1])}, m{nums[7], fy(nums[8])}, en{nums[14], fy(nums[15])};
            const auto c = circumcircle(s, m, en);
            e.type = CadEntity::Type::Arc;
            e.cx = c.center.x, e.cy = c.center.y, e.r = c.radius;
            e.start_deg = detail::degrees_0_360(std::atan2(s.y - c.center.y, s.x - c.center.x));
            e.end_deg = detail::degrees_0_360(std::atan2(en.y - c.center.y, en.x - c.center.x));
        }
        out.push_back(e);
    }
    return out;
}

}  // namespace ppinet
