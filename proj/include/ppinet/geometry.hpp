#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ppinet/errors.hpp"
#include "ppinet/numcore/dual.hpp"
#include "ppinet/numcore/pieces.hpp"

namespace ppinet {

/// Primitive kinds; the integer values double as class labels.
enum class PrimitiveKind : std::uint8_t { Line = 0, Circle = 1, Arc = 2, Point = 3 };

inline constexpr int kNumKinds = 4;
inline constexpr int kNumParams = 6;
/// Shared sample count for every Chamfer evaluation (cost, loss, metrics).
inline constexpr int kSampleCount = 32;

inline constexpr std::array<PrimitiveKind, kNumKinds> kAllKinds = {
    PrimitiveKind::Line, PrimitiveKind::Circle, PrimitiveKind::Arc, PrimitiveKind::Point};

inline int kind_index(PrimitiveKind k) { return static_cast<int>(k); }

inline PrimitiveKind kind_from_index(int i) {
    if (i < 0 || i >= kNumKinds) throw Error("invalid primitive kind index " + std::to_string(i));
    return static_cast<PrimitiveKind>(i);
}

inline std::string_view kind_name(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::Line: return "line";
        case PrimitiveKind::Circle: return "circle";
        case PrimitiveKind::Arc: return "arc";
        case PrimitiveKind::Point: return "point";
    }
    return "?";
}

inline std::optional<PrimitiveKind> kind_from_name(std::string_view name) {
    for (auto k : kAllKinds)
        if (kind_name(k) == name) return k;
    return std::nullopt;
}

using ParamVector = std::array<double, kNumParams>;
using ParamMask = std::array<int, kNumParams>;

/// Slots used by each kind: line x1,y1,x2,y2; circle x,y,r; arc start,mid,end; point x,y.
inline ParamMask param_mask(PrimitiveKind kind) {
    switch (kind) {
        case PrimitiveKind::Line: return {1, 1, 1, 1, 0, 0};
        case PrimitiveKind::Circle: return {1, 1, 1, 0, 0, 0};
        case PrimitiveKind::Arc: return {1, 1, 1, 1, 1, 1};
        case PrimitiveKind::Point: return {1, 1, 0, 0, 0, 0};
    }
    return {};
}

inline ParamVector apply_mask(PrimitiveKind kind, ParamVector p) {
    const auto m = param_mask(kind);
    for (int i = 0; i < kNumParams; ++i)
        if (!m[i]) p[i] = 0.0;
    return p;
}

/// A primitive; the constructor zeroes every slot outside the kind's mask.
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Point;
    ParamVector params{};

    Primitive() = default;
    Primitive(PrimitiveKind k, const ParamVector& p) : kind(k), params(apply_mask(k, p)) {}

    bool operator==(const Primitive&) const = default;
};

/// True when every slot is finite and inside [0,1] and padding slots are exactly zero.
inline bool is_normalized(const Primitive& p) {
    const auto m = param_mask(p.kind);
    for (int i = 0; i < kNumParams; ++i) {
        const double v = p.params[i];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
        if (!m[i] && v != 0.0) return false;
    }
    return true;
}

template <class T>
struct Vec2 {
    T x{};
    T y{};
};

using Point2 = Vec2<double>;
using PointSet = std::vector<Point2>;

template <class T>
struct Circle {
    Vec2<T> center;
    T radius{};
};

inline constexpr double kCollinearArea = 1e-9;

namespace detail {

template <class T>
bool collinear(const Vec2<T>& a, const Vec2<T>& b, const Vec2<T>& c) {
    const double cross = nc::value_of((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x));
    return std::abs(cross) * 0.5 < kCollinearArea;
}

}  // namespace detail

/// Circle through three points; throws CollinearError when the triangle area is below 1e-9.
template <class T>
Circle<T> circumcircle(const Vec2<T>& a, const Vec2<T>& b, const Vec2<T>& c) {
    using std::sqrt;
    if (detail::collinear(a, b, c)) throw CollinearError("arc points are collinear");
    const T bx = b.x - a.x, by = b.y - a.y;
    const T cx = c.x - a.x, cy = c.y - a.y;
    const T b2 = bx * bx + by * by;
    const T c2 = cx * cx + cy * cy;
    const T denom = (bx * cy - by * cx) * 2.0;
    const T ux = (cy * b2 - by * c2) / denom;
    const T uy = (bx * c2 - cx * b2) / denom;
    return {{a.x + ux, a.y + uy}, sqrt(ux * ux + uy * uy)};
}

namespace detail {

template <class T>
std::vector<Vec2<T>> sample_polyline(const std::vector<Vec2<T>>& pts, int n) {
    using std::sqrt;
    std::vector<T> seg;
    T total(0.0);
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const T dx = pts[i].x - pts[i - 1].x, dy = pts[i].y - pts[i - 1].y;
        seg.push_back(sqrt(dx * dx + dy * dy));
        total += seg.back();
    }
    std::vector<Vec2<T>> out;
    out.reserve(n);
    if (nc::value_of(total) <= 0.0 || n == 1) {
        out.assign(n, pts.front());
        return out;
    }
    for (int i = 0; i < n; ++i) {
        const double frac = static_cast<double>(i) / (n - 1);
        T target = total * frac;
        std::size_t s = 0;
        while (s + 1 < seg.size() && nc::value_of(target) > nc::value_of(seg[s])) {
            target -= seg[s];
            ++s;
        }
        const T t = nc::value_of(seg[s]) > 0.0 ? target / seg[s] : T(0.0);
        out.push_back({pts[s].x + (pts[s + 1].x - pts[s].x) * t,
                       pts[s].y + (pts[s + 1].y - pts[s].y) * t});
    }
    return out;
}

inline double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a, two_pi);
    return a < 0.0 ? a + two_pi : a;
}

}  // namespace detail

/// Signed sweep (radians) of the arc from `start_angle` that passes through `mid_angle`
/// on its way to `end_angle`. Positive is counter-clockwise.
inline double arc_sweep(double start_angle, double mid_angle, double end_angle) {
    const double de = detail::wrap_angle(end_angle - start_angle);
    const double dm = detail::wrap_angle(mid_angle - start_angle);
    if (dm < de) return de;
    return -(2.0 * std::numbers::pi - de);
}

/// Samples n points along the primitive described by `kind` and raw slots `p`.
/// Points sample a single coordinate. Collinear arcs fall back to the start-mid-end polyline.
template <class T>
std::vector<Vec2<T>> sample_points(PrimitiveKind kind, const std::array<T, kNumParams>& p,
                                   int n = kSampleCount) {
    using std::atan2;
    using std::cos;
    using std::sin;
    if (n < 1) throw Error("sample_points: n must be >= 1");
    std::vector<Vec2<T>> out;
    switch (kind) {
        case PrimitiveKind::Point:
            out.push_back({p[0], p[1]});
            return out;
        case PrimitiveKind::Line: {
            out.reserve(n);
            for (int i = 0; i < n; ++i) {
                const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
                out.push_back({p[0] + (p[2] - p[0]) * t, p[1] + (p[3] - p[1]) * t});
            }
            return out;
        }
        case PrimitiveKind::Circle: {
            out.reserve(n);
            for (int i = 0; i < n; ++i) {
                const double th = 2.0 * std::numbers::pi * i / n;
                out.push_back({p[0] + p[2] * std::cos(th), p[1] + p[2] * std::sin(th)});
            }
            return out;
        }
        case PrimitiveKind::Arc: {
            const Vec2<T> s{p[0], p[1]}, m{p[2], p[3]}, e{p[4], p[5]};
            // Built on the chord s-e and the half sweep theta instead of the circumcentre,
            // which cancels catastrophically once the arc is nearly straight. The collinear
            // fallback and the bulge side are discrete choices, so they go on the piece tape.
            auto& tape = nc::PieceTape::current();
            if (tape.decide(detail::collinear(s, m, e) ? 1 : 0)) return detail::sample_polyline<T>({s, m, e}, n);
            const T ax = s.x - m.x, ay = s.y - m.y, bx = e.x - m.x, by = e.y - m.y;
            const T cross = ax * by - ay * bx;
            const double side = tape.decide(nc::value_of(cross) > 0.0 ? 1 : -1);
            // the inscribed angle at m is pi - theta
            const T theta = atan2(cross * side, -(ax * bx + ay * by));
            const T sin_theta = sin(theta);
            const T hx = (e.x - s.x) * 0.5, hy = (e.y - s.y) * 0.5;
            const T cx = (s.x + e.x) * 0.5, cy = (s.y + e.y) * 0.5;
            out.reserve(n);
            for (int i = 0; i < n; ++i) {
                const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
                const T phi = theta * (2.0 * t - 1.0);
                const T along = sin(phi) / sin_theta;
                // (cos phi - cos theta) / sin theta without the cancellation
                const T bulge = sin((theta + phi) * 0.5) * sin((theta - phi) * 0.5) * (2.0 * side) / sin_theta;
                out.push_back({cx + hx * along - hy * bulge, cy + hy * along + hx * bulge});
            }
            return out;
        }
    }
    return out;
}

inline PointSet sample_points(const Primitive& prim, int n = kSampleCount) {
    return sample_points<double>(prim.kind, prim.params, n);
}

/// Chamfer value plus the nearest-neighbour indices in both directions.
struct ChamferDetail {
    double value = 0.0;
    std::vector<int> a_to_b;  // nearest b index for every a
    std::vector<int> b_to_a;  // nearest a index for every b
};

/// Symmetric mean nearest-neighbour Euclidean distance, halved:
/// 0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|).
inline ChamferDetail chamfer_detail(const PointSet& a, const PointSet& b) {
    if (a.empty() || b.empty()) throw EmptySetError("chamfer: empty point set");
    const double inf = std::numeric_limits<double>::infinity();
    ChamferDetail out;
    out.a_to_b.assign(a.size(), 0);
    out.b_to_a.assign(b.size(), 0);
    std::vector<double> best_a(a.size(), inf), best_b(b.size(), inf);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            const double dx = a[i].x - b[j].x, dy = a[i].y - b[j].y;
            const double d = dx * dx + dy * dy;
            if (d < best_a[i]) {
                best_a[i] = d;
                out.a_to_b[i] = static_cast<int>(j);
            }
            if (d < best_b[j]) {
                best_b[j] = d;
                out.b_to_a[j] = static_cast<int>(i);
            }
        }
    }
    double sa = 0.0, sb = 0.0;
    for (double d : best_a) sa += std::sqrt(d);
    for (double d : best_b) sb += std::sqrt(d);
    out.value = 0.5 * (sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size()));
    return out;
}

inline double chamfer(const PointSet& a, const PointSet& b) { return chamfer_detail(a, b).value; }

/// Chamfer distance between two primitives, each sampled under its own kind.
inline double primitive_chamfer(const Primitive& a, const Primitive& b) {
    return chamfer(sample_points(a), sample_points(b));
}

}  // namespace ppinet
