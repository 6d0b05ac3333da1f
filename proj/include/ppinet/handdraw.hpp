#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "ppinet/dataset.hpp"
#include "ppinet/errors.hpp"
#include "ppinet/geometry.hpp"

namespace ppinet {

inline constexpr int kImageSize = 128;

/// 128x128 8-bit grayscale, row-major, 255 = white background.
struct RasterImage {
    std::vector<std::uint8_t> pixels = std::vector<std::uint8_t>(kImageSize * kImageSize, 255);

    std::uint8_t at(int row, int col) const { return pixels[row * kImageSize + col]; }
    std::uint8_t& at(int row, int col) { return pixels[row * kImageSize + col]; }
    bool operator==(const RasterImage&) const = default;
};

struct Stroke {
    std::vector<Point2> points;
    double width_px = 1.5;
};

struct NoiseConfig {
    double lengthscale_ratio = 0.3;  // x primitive arc length
    double amplitude_min = 0.01;     // per-primitive amplitude ratio ~ U[min, max] x arc length
    double amplitude_max = 0.03;
    double jitter = 1e-6;            // relative to the kernel variance
    double truncation = 2.0;         // clip displacement to +-truncation*sigma
    int samples_per_sketch = 5;
    int line_stations = 64;
    int arc_stations = 96;
    double line_width_px = 1.5;
    double point_radius_px = 2.0;

    static NoiseConfig precise() {
        NoiseConfig c;
        c.amplitude_min = 0.0;
        c.amplitude_max = 0.0;
        return c;
    }
};

struct AffineConfig {
    double max_translate_px = 8.0;
    double max_rotate_deg = 10.0;
    double max_shear_deg = 10.0;
    double max_scale = 0.20;
};

/// A concrete transform about the image center.
struct AffineParams {
    double tx = 0.0, ty = 0.0;  // pixels
    double rotate_deg = 0.0;
    double shear_deg = 0.0;
    double scale = 1.0;
};

// ---------------------------------------------------------------------------
// Gaussian process noise

/// Matern-3/2 covariance: variance * (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l).
inline double matern32(double r, double lengthscale, double variance) {
    if (!(lengthscale > 0.0)) throw DomainError("matern32: lengthscale must be positive");
    if (!(variance > 0.0)) throw DomainError("matern32: variance must be positive");
    if (r < 0.0) throw DomainError("matern32: distance must be non-negative");
    const double a = std::sqrt(3.0) * r / lengthscale;
    return variance * (1.0 + a) * std::exp(-a);
}

struct GpKernel {
    double lengthscale = 1.0;
    double variance = 1.0;
    double jitter = 1e-6;
    double truncation = 2.0;  // <= 0 disables clipping
};

/// One zero-mean draw on a strictly increasing 1-D grid via Cholesky of K + jitter*var*I.
inline std::vector<double> gp_sample(std::span<const double> grid, const GpKernel& k,
                                     std::uint64_t seed) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    if (n < 2) throw DomainError("gp_sample: need at least two grid points");
    for (Eigen::Index i = 1; i < n; ++i)
        if (!(grid[i] > grid[i - 1])) throw DomainError("gp_sample: grid must be strictly increasing");

    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j)
            K(i, j) = K(j, i) = matern32(std::abs(grid[i] - grid[j]), k.lengthscale, k.variance);

    double jitter = k.jitter;
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int attempt = 0;; ++attempt) {
        Eigen::MatrixXd Kj = K;
        Kj.diagonal().array() += jitter * k.variance;
        llt.compute(Kj);
        if (llt.info() == Eigen::Success) break;
        if (attempt == 3) throw CholeskyFailure("gp_sample: covariance not positive definite");
        jitter *= 10.0;
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    const Eigen::VectorXd f = llt.matrixL() * z;

    const double bound = k.truncation * std::sqrt(k.variance);
    std::vector<double> out(grid.size());
    for (Eigen::Index i = 0; i < n; ++i)
        out[i] = k.truncation > 0.0 ? std::clamp(f[i], -bound, bound) : f[i];
    return out;
}

// ---------------------------------------------------------------------------
// stroke generation

namespace detail {

/// Displacements along arc-length stations `s` (total length `length`); all zero when the
/// drawn amplitude is zero.
inline std::vector<double> path_noise(const std::vector<double>& s, double length,
                                      const NoiseConfig& cfg, std::mt19937_64& rng) {
    const double ratio = cfg.amplitude_max > cfg.amplitude_min
                             ? std::uniform_real_distribution<double>(cfg.amplitude_min,
                                                                      cfg.amplitude_max)(rng)
                             : cfg.amplitude_max;
    const double sigma = ratio * length;
    const std::uint64_t gp_seed = rng();
    if (!(sigma > 0.0) || !(length > 0.0)) return std::vector<double>(s.size(), 0.0);
    GpKernel k{cfg.lengthscale_ratio * length, sigma * sigma, cfg.jitter, cfg.truncation};
    return gp_sample(s, k, gp_seed);
}

inline Stroke line_stroke(const Point2& a, const Point2& b, const NoiseConfig& cfg,
                          std::mt19937_64& rng) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len = std::hypot(dx, dy);
    const int n = std::max(2, cfg.line_stations);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) s[i] = len * i / (n - 1);
    const auto d = path_noise(s, len, cfg, rng);
    // unit normal of the segment; the GP runs along the x-axis and is rotated onto the line
    const double nx = len > 0.0 ? -dy / len : 0.0;
    const double ny = len > 0.0 ? dx / len : 0.0;
    Stroke st{{}, cfg.line_width_px};
    st.points.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / (n - 1);
        st.points.push_back({a.x + dx * t + d[i] * nx, a.y + dy * t + d[i] * ny});
    }
    return st;
}

/// Polar path about `center`: radius modulated by a GP over the swept angle.
inline Stroke polar_stroke(const Point2& center, double radius, double start, double sweep,
                           bool closed, const NoiseConfig& cfg, std::mt19937_64& rng) {
    const int n = std::max(2, cfg.arc_stations);
    const double length = radius * std::abs(sweep);
    // closed paths do not repeat the start angle; the join adds it back
    const double denom = closed ? n : n - 1;
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) s[i] = length * i / denom;
    const auto d = path_noise(s, length, cfg, rng);
    Stroke st{{}, cfg.line_width_px};
    st.points.reserve(n + 1);
    for (int i = 0; i < n; ++i) {
        const double th = start + sweep * i / denom;
        const double r = radius + d[i];
        st.points.push_back({center.x + r * std::cos(th), center.y + r * std::sin(th)});
    }
    if (closed) st.points.push_back(st.points.front());
    return st;
}

}  // namespace detail

/// Simulated hand drawing of a normalized sketch; fully determined by (sketch, cfg, seed).
inline std::vector<Stroke> render_hand(const Sketch& sketch, const NoiseConfig& cfg,
                                       std::uint64_t seed) {
    std::vector<Stroke> strokes;
    strokes.reserve(sketch.primitives.size());
    for (std::size_t i = 0; i < sketch.primitives.size(); ++i) {
        const auto& prim = sketch.primitives[i];
        const auto& p = prim.params;
        std::mt19937_64 rng(detail::mix_seed(seed, i));
        switch (prim.kind) {
            case PrimitiveKind::Line:
                strokes.push_back(detail::line_stroke({p[0], p[1]}, {p[2], p[3]}, cfg, rng));
                break;
            case PrimitiveKind::Circle:
                strokes.push_back(detail::polar_stroke({p[0], p[1]}, p[2], 0.0,
                                                       2.0 * std::numbers::pi, true, cfg, rng));
                break;
            case PrimitiveKind::Arc: {
                const Point2 s{p[0], p[1]}, m{p[2], p[3]}, e{p[4], p[5]};
                Circle<double> c;
                try {
                    c = circumcircle(s, m, e);
                } catch (const CollinearError&) {
                    auto a = detail::line_stroke(s, m, cfg, rng);
                    auto b = detail::line_stroke(m, e, cfg, rng);
                    a.points.insert(a.points.end(), b.points.begin() + 1, b.points.end());
                    strokes.push_back(std::move(a));
                    break;
                }
                const double as = std::atan2(s.y - c.center.y, s.x - c.center.x);
                const double am = std::atan2(m.y - c.center.y, m.x - c.center.x);
                const double ae = std::atan2(e.y - c.center.y, e.x - c.center.x);
                strokes.push_back(detail::polar_stroke(c.center, c.radius, as,
                                                       arc_sweep(as, am, ae), false, cfg, rng));
                break;
            }
            case PrimitiveKind::Point:
                strokes.push_back({{{p[0], p[1]}, {p[0], p[1]}}, 2.0 * cfg.point_radius_px});
                break;
        }
    }
    return strokes;
}

// ---------------------------------------------------------------------------
// rasterization

/// Sketch coordinates to pixel coordinates: (x*127, (1-y)*127); pixel centers at integers.
inline Point2 to_pixel(const Point2& p) {
    return {p.x * (kImageSize - 1), (1.0 - p.y) * (kImageSize - 1)};
}

inline Point2 from_pixel(const Point2& px) {
    return {px.x / (kImageSize - 1), 1.0 - px.y / (kImageSize - 1)};
}

namespace detail {

inline double segment_distance(double px, double py, const Point2& a, const Point2& b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (a.x + t * dx), py - (a.y + t * dy));
}

inline void splat_segment(std::vector<float>& ink, const Point2& a, const Point2& b,
                          double half_width) {
    const double reach = half_width + 0.5;
    const int c0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - reach)));
    const int c1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + reach)));
    const int r0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - reach)));
    const int r1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + reach)));
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const double d = segment_distance(c, r, a, b);
            const double cov = std::clamp(reach - d, 0.0, 1.0);
            float& v = ink[r * kImageSize + c];
            v = std::max(v, static_cast<float>(cov));
        }
    }
}

}  // namespace detail

/// Anti-aliased dark strokes on white; pixels outside the grid are never touched.
inline RasterImage rasterize(const std::vector<Stroke>& strokes) {
    std::vector<float> ink(kImageSize * kImageSize, 0.0f);
    for (const auto& s : strokes) {
        if (s.points.empty()) continue;
        const double hw = 0.5 * s.width_px;
        if (s.points.size() == 1) {
            const auto p = to_pixel(s.points[0]);
            detail::splat_segment(ink, p, p, hw);
            continue;
        }
        for (std::size_t i = 1; i < s.points.size(); ++i)
            detail::splat_segment(ink, to_pixel(s.points[i - 1]), to_pixel(s.points[i]), hw);
    }
    RasterImage img;
    for (std::size_t i = 0; i < ink.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - ink[i])));
    return img;
}

inline RasterImage render_precise(const Sketch& sketch) {
    return rasterize(render_hand(sketch, NoiseConfig::precise(), 0));
}

/// The `samples_per_sketch` pre-rendered hand-drawn variants of one sketch.
inline std::vector<RasterImage> render_hand_samples(const Sketch& sketch, const NoiseConfig& cfg,
                                                    std::uint64_t seed) {
    std::vector<RasterImage> out;
    const std::uint64_t base = detail::mix_seed(seed, fnv1a(sketch.id));
    for (int s = 0; s < cfg.samples_per_sketch; ++s)
        out.push_back(rasterize(render_hand(sketch, cfg, detail::mix_seed(base, s))));
    return out;
}

// ---------------------------------------------------------------------------
// affine augmentation

inline AffineParams sample_affine(const AffineConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto sym = [&](double lim) {
        return lim > 0.0 ? std::uniform_real_distribution<double>(-lim, lim)(rng) : 0.0;
    };
    AffineParams a;
    a.tx = sym(cfg.max_translate_px);
    a.ty = sym(cfg.max_translate_px);
    a.rotate_deg = sym(cfg.max_rotate_deg);
    a.shear_deg = sym(cfg.max_shear_deg);
    a.scale = 1.0 + sym(cfg.max_scale);
    return a;
}

/// Applies the transform with bilinear resampling of ink, white outside the source.
inline RasterImage affine_apply(const RasterImage& img, const AffineParams& a) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double c = 0.5 * (kImageSize - 1);
    const double cr = std::cos(a.rotate_deg * deg), sr = std::sin(a.rotate_deg * deg);
    const double sh = std::tan(a.shear_deg * deg);
    // forward linear part M = R * Shear * scale
    const double m00 = a.scale * cr, m01 = a.scale * (cr * sh - sr);
    const double m10 = a.scale * sr, m11 = a.scale * (sr * sh + cr);
    const double det = m00 * m11 - m01 * m10;
    const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;

    auto ink = [&](int r, int col) -> double {
        if (r < 0 || r >= kImageSize || col < 0 || col >= kImageSize) return 0.0;
        return 1.0 - img.at(r, col) / 255.0;
    };
    RasterImage out;
    for (int r = 0; r < kImageSize; ++r) {
        for (int col = 0; col < kImageSize; ++col) {
            const double ox = col - c - a.tx, oy = r - c - a.ty;
            const double sx = i00 * ox + i01 * oy + c;
            const double sy = i10 * ox + i11 * oy + c;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const double wx = sx - fx, wy = sy - fy;
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const double v = (1 - wy) * ((1 - wx) * ink(y0, x0) + wx * ink(y0, x0 + 1)) +
                             wy * ((1 - wx) * ink(y0 + 1, x0) + wx * ink(y0 + 1, x0 + 1));
            out.at(r, col) = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::clamp(v, 0.0, 1.0))));
        }
    }
    return out;
}

inline RasterImage affine_augment(const RasterImage& img, const AffineConfig& cfg,
                                  std::uint64_t seed) {
    return affine_apply(img, sample_affine(cfg, seed));
}

}  // namespace ppinet
